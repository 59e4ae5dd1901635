//! Dense symmetric positive definite factorization for the reduced Newton system.

/// Row-major square matrix, only the lower triangle is read by [`cholesky_in_place`].
#[derive(Debug, Clone)]
pub(crate) struct SquareMatrix {
    pub n: usize,
    pub data: Vec<f64>,
}

impl SquareMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn identity_into(&mut self, n: usize) {
        self.n = n;
        self.data.clear();
        self.data.resize(n * n, 0.0);
        for i in 0..n {
            self.data[i * n + i] = 1.0;
        }
    }

    #[inline]
    pub fn at(&mut self, i: usize, j: usize) -> &mut f64 {
        &mut self.data[i * self.n + j]
    }
}

/// Overwrites the lower triangle with L such that A = L L^T.
///
/// Returns the index of the first non-positive pivot on failure.
pub(crate) fn cholesky_in_place(a: &mut SquareMatrix) -> Result<(), usize> {
    let n = a.n;
    for i in 0..n {
        let (done, rest) = a.data.split_at_mut(i * n);
        let row_i = &mut rest[..n];
        for j in 0..i {
            let row_j = &done[j * n..j * n + n];
            let s: f64 = row_i[..j].iter().zip(&row_j[..j]).map(|(x, y)| x * y).sum();
            row_i[j] = (row_i[j] - s) / row_j[j];
        }
        let s = row_i[i] - row_i[..i].iter().map(|x| x * x).sum::<f64>();
        if !(s > 0.0 && s.is_finite()) {
            return Err(i);
        }
        row_i[i] = s.sqrt();
    }
    Ok(())
}

/// Solves L L^T x = b in place given the factor from [`cholesky_in_place`].
pub(crate) fn cholesky_solve(l: &SquareMatrix, b: &mut [f64]) {
    let n = l.n;
    let d = &l.data;
    for i in 0..n {
        let row = &d[i * n..i * n + i];
        let s: f64 = row.iter().zip(&b[..i]).map(|(a, x)| a * x).sum();
        b[i] = (b[i] - s) / d[i * n + i];
    }
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in (i + 1)..n {
            s -= d[k * n + i] * b[k];
        }
        b[i] = s / d[i * n + i];
    }
}
