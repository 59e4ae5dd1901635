//! Mehrotra predictor-corrector interior point method for the transport QP
//!
//! ```text
//! minimise   sum_s kappa * L_s + 0.5 * (base_s + L_s)^2,   L_s = sum_{k in slot s} x_k
//! subject to sum_{k in row i} x_k = d_i,   0 <= x_k <= u_k
//! ```
//!
//! Every row holds at most one variable per slot. The Newton system is reduced
//! onto the slot dimension: with `c = 1/D` (D the barrier diagonal) the slot
//! system is `I + sum_i (diag(c_i) - c_i c_i^T / b_i)`, a sum of weighted graph
//! Laplacians plus the identity, formed without cancellation and factored by
//! dense Cholesky.

use super::linalg::{cholesky_in_place, cholesky_solve, SquareMatrix};

const STEP_FRACTION: f64 = 0.995;
const MIN_BARRIER_DIAG: f64 = 1e-13;

pub(crate) struct Problem {
    pub kappa: f64,
    /// Fixed load per slot (base plus rows solved outside the method).
    pub base: Vec<f64>,
    /// Variable range of row i is `row_ptr[i]..row_ptr[i + 1]`.
    pub row_ptr: Vec<usize>,
    pub slot: Vec<usize>,
    pub ub: Vec<f64>,
    pub demand: Vec<f64>,
}

impl Problem {
    fn num_vars(&self) -> usize {
        self.ub.len()
    }

    fn num_rows(&self) -> usize {
        self.demand.len()
    }

    fn rows(&self) -> impl Iterator<Item = (usize, std::ops::Range<usize>)> + '_ {
        (0..self.num_rows()).map(move |i| (i, self.row_ptr[i]..self.row_ptr[i + 1]))
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Iterate {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub zl: Vec<f64>,
    pub zu: Vec<f64>,
}

#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct Residuals {
    pub primal: f64,
    pub stationarity: f64,
    pub complementarity: f64,
}

impl Residuals {
    pub fn max(&self) -> f64 {
        self.primal.max(self.stationarity).max(self.complementarity)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Status {
    Converged,
    MaxIterations,
    Numerical,
}

pub(crate) struct Outcome {
    pub iterate: Iterate,
    pub iterations: usize,
    pub status: Status,
}

#[derive(Default)]
struct Direction {
    dx: Vec<f64>,
    dy: Vec<f64>,
    dzl: Vec<f64>,
    dzu: Vec<f64>,
}

impl Direction {
    fn resize(&mut self, n: usize, m: usize) {
        self.dx.resize(n, 0.0);
        self.dy.resize(m, 0.0);
        self.dzl.resize(n, 0.0);
        self.dzu.resize(n, 0.0);
    }
}

struct Workspace {
    z: Vec<f64>,
    rd: Vec<f64>,
    rp: Vec<f64>,
    c: Vec<f64>,
    b: Vec<f64>,
    r1: Vec<f64>,
    r1_mean: Vec<f64>,
    w: Vec<f64>,
    r_cl: Vec<f64>,
    r_cu: Vec<f64>,
    prefix: Vec<f64>,
    suffix: Vec<f64>,
    g: SquareMatrix,
}

impl Workspace {
    fn new(p: &Problem) -> Self {
        let (n, m, ns) = (p.num_vars(), p.num_rows(), p.base.len());
        Self {
            z: vec![0.0; ns],
            rd: vec![0.0; n],
            rp: vec![0.0; m],
            c: vec![0.0; n],
            b: vec![0.0; m],
            r1: vec![0.0; n],
            r1_mean: vec![0.0; m],
            w: vec![0.0; ns],
            r_cl: vec![0.0; n],
            r_cu: vec![0.0; n],
            prefix: Vec::new(),
            suffix: Vec::new(),
            g: SquareMatrix::zeros(ns),
        }
    }

    fn residuals(&mut self, p: &Problem, it: &Iterate) -> Residuals {
        self.z.copy_from_slice(&p.base);
        for (k, &x) in it.x.iter().enumerate() {
            self.z[p.slot[k]] += x;
        }
        let mut r = Residuals::default();
        for (i, range) in p.rows() {
            let mut sum = 0.0;
            for k in range {
                let x = it.x[k];
                sum += x;
                let g = p.kappa + self.z[p.slot[k]];
                self.rd[k] = g - it.y[i] - it.zl[k] + it.zu[k];
                r.stationarity = r.stationarity.max(self.rd[k].abs());
                let comp = (x * it.zl[k]).max((p.ub[k] - x) * it.zu[k]);
                r.complementarity = r.complementarity.max(comp);
            }
            self.rp[i] = sum - p.demand[i];
            r.primal = r.primal.max(self.rp[i].abs());
        }
        r
    }

    /// Builds and factors the slot system for the current barrier diagonal.
    fn factor(&mut self, p: &Problem, it: &Iterate) -> Result<(), usize> {
        let ns = p.base.len();
        for k in 0..p.num_vars() {
            let s = p.ub[k] - it.x[k];
            let d = (it.zl[k] / it.x[k] + it.zu[k] / s).max(MIN_BARRIER_DIAG);
            self.c[k] = 1.0 / d;
        }
        self.g.identity_into(ns);
        for (i, range) in p.rows() {
            let cs = &self.c[range.clone()];
            let len = cs.len();
            self.prefix.clear();
            self.prefix.resize(len + 1, 0.0);
            self.suffix.clear();
            self.suffix.resize(len + 1, 0.0);
            for a in 0..len {
                self.prefix[a + 1] = self.prefix[a] + cs[a];
                self.suffix[len - 1 - a] = self.suffix[len - a] + cs[len - 1 - a];
            }
            let b = self.prefix[len];
            self.b[i] = b;
            if len < 2 {
                continue;
            }
            let slots = &p.slot[range];
            for (a, (&ca, &sa)) in cs.iter().zip(slots).enumerate() {
                // Sum of the other weights, formed without subtracting from the total.
                let excl = self.prefix[a] + self.suffix[a + 1];
                *self.g.at(sa, sa) += ca * excl / b;
                for (&cb, &sb) in cs[..a].iter().zip(&slots[..a]) {
                    let v = ca * cb / b;
                    let (hi, lo) = if sa > sb { (sa, sb) } else { (sb, sa) };
                    *self.g.at(hi, lo) -= v;
                }
            }
        }
        cholesky_in_place(&mut self.g)
    }

    /// Solves the Newton system for the complementarity targets in `r_cl`, `r_cu`.
    fn direction(&mut self, p: &Problem, it: &Iterate, dir: &mut Direction) {
        self.w.iter_mut().for_each(|v| *v = 0.0);
        for (i, range) in p.rows() {
            let mut acc = 0.0;
            for k in range.clone() {
                let s = p.ub[k] - it.x[k];
                self.r1[k] = -self.rd[k] + self.r_cl[k] / it.x[k] - self.r_cu[k] / s;
                acc += self.c[k] * self.r1[k];
            }
            let b = self.b[i];
            let mean = acc / b;
            self.r1_mean[i] = mean;
            let r2 = -self.rp[i] / b;
            for k in range {
                self.w[p.slot[k]] += self.c[k] * (self.r1[k] - mean + r2);
            }
        }
        cholesky_solve(&self.g, &mut self.w);
        for (i, range) in p.rows() {
            let b = self.b[i];
            let wm: f64 = range
                .clone()
                .map(|k| self.c[k] * self.w[p.slot[k]])
                .sum::<f64>()
                / b;
            let r2 = -self.rp[i] / b;
            dir.dy[i] = r2 - self.r1_mean[i] + wm;
            for k in range {
                let dx =
                    self.c[k] * ((self.r1[k] - self.r1_mean[i]) - (self.w[p.slot[k]] - wm) + r2);
                dir.dx[k] = dx;
                let s = p.ub[k] - it.x[k];
                dir.dzl[k] = (self.r_cl[k] - it.zl[k] * dx) / it.x[k];
                dir.dzu[k] = (self.r_cu[k] + it.zu[k] * dx) / s;
            }
        }
    }
}

/// Largest step in (0, 1] keeping the iterate strictly interior, before damping.
fn max_step(p: &Problem, it: &Iterate, d: &Direction) -> f64 {
    let mut a: f64 = 1.0;
    for k in 0..p.num_vars() {
        let dx = d.dx[k];
        if dx < 0.0 {
            a = a.min(-it.x[k] / dx);
        } else if dx > 0.0 {
            a = a.min((p.ub[k] - it.x[k]) / dx);
        }
        if d.dzl[k] < 0.0 {
            a = a.min(-it.zl[k] / d.dzl[k]);
        }
        if d.dzu[k] < 0.0 {
            a = a.min(-it.zu[k] / d.dzu[k]);
        }
    }
    a
}

fn average_complementarity(p: &Problem, it: &Iterate, d: Option<(&Direction, f64)>) -> f64 {
    let n = p.num_vars();
    let mut sum = 0.0;
    for k in 0..n {
        let (mut x, mut zl, mut zu) = (it.x[k], it.zl[k], it.zu[k]);
        if let Some((d, a)) = d {
            x += a * d.dx[k];
            zl += a * d.dzl[k];
            zu += a * d.dzu[k];
        }
        sum += x * zl + (p.ub[k] - x) * zu;
    }
    sum / (2 * n) as f64
}

/// Dual start that satisfies stationarity exactly at `x0`.
fn initial_iterate(p: &Problem, x0: Vec<f64>) -> Iterate {
    let mut z = p.base.clone();
    for (k, &x) in x0.iter().enumerate() {
        z[p.slot[k]] += x;
    }
    let n = p.num_vars();
    let mut y = vec![0.0; p.num_rows()];
    let mut zl = vec![0.0; n];
    let mut zu = vec![0.0; n];
    for (i, range) in p.rows() {
        let len = range.len() as f64;
        y[i] = range.clone().map(|k| p.kappa + z[p.slot[k]]).sum::<f64>() / len;
        for k in range {
            let gap = p.kappa + z[p.slot[k]] - y[i];
            zl[k] = gap.max(0.0) + 1.0;
            zu[k] = (-gap).max(0.0) + 1.0;
        }
    }
    Iterate { x: x0, y, zl, zu }
}

/// Runs the method from the strictly interior primal point `x0`.
pub(crate) fn solve(
    p: &Problem,
    x0: Vec<f64>,
    tol: f64,
    compl_tol: f64,
    max_iter: usize,
) -> Outcome {
    let n = p.num_vars();
    let m = p.num_rows();
    let mut it = initial_iterate(p, x0);
    let mut ws = Workspace::new(p);
    let mut aff = Direction::default();
    let mut dir = Direction::default();
    aff.resize(n, m);
    dir.resize(n, m);
    let mut best: Option<(Iterate, Residuals)> = None;
    let mut status = Status::MaxIterations;

    for iter in 0..=max_iter {
        let res = ws.residuals(p, &it);
        if best.as_ref().map_or(true, |b| res.max() < b.1.max()) {
            best = Some((it.clone(), res));
        }
        if res.primal <= tol && res.stationarity <= tol && res.complementarity <= compl_tol {
            return Outcome {
                iterate: it,
                iterations: iter,
                status: Status::Converged,
            };
        }
        if iter == max_iter {
            break;
        }
        if ws.factor(p, &it).is_err() {
            status = Status::Numerical;
            break;
        }
        let mu = average_complementarity(p, &it, None);

        // Predictor: pure Newton step towards complementarity zero.
        for k in 0..n {
            ws.r_cl[k] = -it.x[k] * it.zl[k];
            ws.r_cu[k] = -(p.ub[k] - it.x[k]) * it.zu[k];
        }
        ws.direction(p, &it, &mut aff);
        let a_aff = max_step(p, &it, &aff);
        let mu_aff = average_complementarity(p, &it, Some((&aff, a_aff)));
        let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);

        // Corrector: centring plus second-order term from the predictor.
        for k in 0..n {
            let s = p.ub[k] - it.x[k];
            ws.r_cl[k] = sigma * mu - it.x[k] * it.zl[k] - aff.dx[k] * aff.dzl[k];
            ws.r_cu[k] = sigma * mu - s * it.zu[k] + aff.dx[k] * aff.dzu[k];
        }
        ws.direction(p, &it, &mut dir);
        let a = (STEP_FRACTION * max_step(p, &it, &dir)).min(1.0);
        if !(a > 0.0) || !a.is_finite() {
            status = Status::Numerical;
            break;
        }
        for k in 0..n {
            it.x[k] += a * dir.dx[k];
            it.zl[k] += a * dir.dzl[k];
            it.zu[k] += a * dir.dzu[k];
        }
        for i in 0..m {
            it.y[i] += a * dir.dy[i];
        }
    }
    let (iterate, _) = best.expect("at least one residual evaluation");
    Outcome {
        iterate,
        iterations: max_iter,
        status,
    }
}
