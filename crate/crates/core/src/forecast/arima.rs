//! Multiplicative seasonal ARIMA(p,d,q)x(P,D,Q)_m.
//!
//! With `w` the differenced series `(1-B)^d (1-B^m)^D x`, the model is
//!
//! ```text
//! phi(B) Phi(B^m) w_t = c + theta(B) Theta(B^m) e_t
//! ```
//!
//! Parameters are fitted by conditional sum of squares: residuals are zero
//! before the first fully observed lag, and the mean squared residual is
//! minimized with BFGS using an analytic gradient. The intercept is only
//! estimated when the series is not differenced.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::ForecastError;

const GRAD_TOL: f64 = 1e-6;
const MAX_ORDER: usize = 3;
const MAX_BFGS_ITER: usize = 500;

/// Model orders; `season` is the seasonal period m.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArimaOrders {
    pub p: usize,
    pub d: usize,
    pub q: usize,
    pub seasonal_p: usize,
    pub seasonal_d: usize,
    pub seasonal_q: usize,
    pub season: usize,
}

impl Default for ArimaOrders {
    fn default() -> Self {
        Self {
            p: 1,
            d: 1,
            q: 1,
            seasonal_p: 1,
            seasonal_d: 1,
            seasonal_q: 1,
            season: 96,
        }
    }
}

impl ArimaOrders {
    pub fn validate(&self) -> Result<(), ForecastError> {
        if self.season == 0 {
            return Err(ForecastError::InvalidOrders(
                "season must be at least 1".into(),
            ));
        }
        let all = [
            self.p,
            self.d,
            self.q,
            self.seasonal_p,
            self.seasonal_d,
            self.seasonal_q,
        ];
        if all.iter().any(|&o| o > MAX_ORDER) {
            return Err(ForecastError::InvalidOrders(format!(
                "{self}: orders above {MAX_ORDER} are not supported"
            )));
        }
        let seasonal = self.seasonal_p + self.seasonal_d + self.seasonal_q > 0;
        if seasonal && self.season < 2 {
            return Err(ForecastError::InvalidOrders(format!(
                "seasonal terms need a period of at least 2, got {}",
                self.season
            )));
        }
        if seasonal && self.p.max(self.q) >= self.season {
            return Err(ForecastError::InvalidOrders(format!(
                "non-seasonal orders must be below the period {}",
                self.season
            )));
        }
        Ok(())
    }

    /// Points lost to differencing.
    pub fn diff_len(&self) -> usize {
        self.d + self.seasonal_d * self.season
    }

    /// Largest autoregressive lag of the differenced series.
    pub fn ar_lag(&self) -> usize {
        self.p + self.seasonal_p * self.season
    }

    /// Shortest history that leaves at least one residual to fit.
    pub fn min_history(&self) -> usize {
        self.diff_len() + self.ar_lag() + 1
    }

    /// Shortest series accepted for fitting.
    pub fn min_fit_len(&self) -> usize {
        (3 * self.season + 20).max(self.min_history() + self.ar_lag().max(1))
    }

    fn has_intercept(&self) -> bool {
        self.d + self.seasonal_d == 0
    }
}

impl fmt::Display for ArimaOrders {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "({},{},{})x({},{},{})_{}",
            self.p, self.d, self.q, self.seasonal_p, self.seasonal_d, self.seasonal_q, self.season
        )
    }
}

impl FromStr for ArimaOrders {
    type Err = ForecastError;

    /// Parses `p,d,q,P,D,Q,m`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let v: Vec<usize> = s
            .split(',')
            .map(|x| x.trim().parse::<usize>())
            .collect::<Result<_, _>>()
            .map_err(|e| ForecastError::InvalidOrders(format!("{s:?}: {e}")))?;
        let [p, d, q, sp, sd, sq, m] = v[..] else {
            return Err(ForecastError::InvalidOrders(format!(
                "{s:?}: expected p,d,q,P,D,Q,m"
            )));
        };
        let o = Self {
            p,
            d,
            q,
            seasonal_p: sp,
            seasonal_d: sd,
            seasonal_q: sq,
            season: m,
        };
        o.validate()?;
        Ok(o)
    }
}

/// Fitted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArimaModel {
    pub orders: ArimaOrders,
    pub ar: Vec<f64>,
    pub seasonal_ar: Vec<f64>,
    pub ma: Vec<f64>,
    pub seasonal_ma: Vec<f64>,
    pub intercept: f64,
    /// Residual variance of the fit.
    pub sigma2: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Set when an AR polynomial is non-stationary or an MA polynomial non-invertible.
    pub stationarity_warning: bool,
}

impl ArimaModel {
    fn check(&self) -> Result<(), ForecastError> {
        let o = &self.orders;
        o.validate()?;
        if self.ar.len() != o.p
            || self.seasonal_ar.len() != o.seasonal_p
            || self.ma.len() != o.q
            || self.seasonal_ma.len() != o.seasonal_q
        {
            return Err(ForecastError::InvalidOrders(format!(
                "coefficient counts do not match orders {o}"
            )));
        }
        Ok(())
    }
}

/// Sparse lag polynomial: (lag, coefficient) pairs sorted by lag.
type Poly = Vec<(usize, f64)>;

/// `1 + sign * sum_i c_i B^(i * step)`.
fn lag_poly(coefs: &[f64], step: usize, sign: f64) -> Poly {
    let mut p = vec![(0, 1.0)];
    p.extend(
        coefs
            .iter()
            .enumerate()
            .map(|(i, &c)| ((i + 1) * step, sign * c)),
    );
    p
}

fn mul(a: &Poly, b: &Poly) -> Poly {
    let mut acc = BTreeMap::new();
    for &(la, ca) in a {
        for &(lb, cb) in b {
            *acc.entry(la + lb).or_insert(0.0) += ca * cb;
        }
    }
    acc.into_iter().collect()
}

fn shift_scale(p: &Poly, lag: usize, scale: f64) -> Poly {
    p.iter().map(|&(l, c)| (l + lag, c * scale)).collect()
}

/// Dense coefficients of `(1-B)^d (1-B^m)^D`.
fn diff_poly(d: usize, sd: usize, m: usize) -> Vec<f64> {
    let mut p = vec![1.0];
    let mut apply = |lag: usize| {
        let mut q = vec![0.0; p.len() + lag];
        for (k, &c) in p.iter().enumerate() {
            q[k] += c;
            q[k + lag] -= c;
        }
        p = q;
    };
    for _ in 0..sd {
        apply(m);
    }
    for _ in 0..d {
        apply(1);
    }
    p
}

/// `(1-B)^d (1-B^m)^D` applied to `series`; the first `d + D m` points are consumed.
pub fn difference(
    series: &[f64],
    d: usize,
    seasonal_d: usize,
    season: usize,
) -> Result<Vec<f64>, ForecastError> {
    let lost = d + seasonal_d * season;
    if series.len() <= lost {
        return Err(ForecastError::InsufficientHistory {
            have: series.len(),
            need: lost,
        });
    }
    let delta = diff_poly(d, seasonal_d, season);
    Ok((lost..series.len())
        .map(|t| {
            delta
                .iter()
                .enumerate()
                .map(|(k, c)| c * series[t - k])
                .sum()
        })
        .collect())
}

/// Inverse of [`difference`]: rebuilds the series from its first `d + D m`
/// values (`seeds`) and the differenced values.
pub fn integrate(
    seeds: &[f64],
    diffed: &[f64],
    d: usize,
    seasonal_d: usize,
    season: usize,
) -> Result<Vec<f64>, ForecastError> {
    let lost = d + seasonal_d * season;
    if seeds.len() != lost {
        return Err(ForecastError::InvalidInput(format!(
            "need {lost} seed values, got {}",
            seeds.len()
        )));
    }
    let delta = diff_poly(d, seasonal_d, season);
    let mut x = seeds.to_vec();
    for &w in diffed {
        let t = x.len();
        let v = w - (1..delta.len()).map(|k| delta[k] * x[t - k]).sum::<f64>();
        x.push(v);
    }
    Ok(x)
}

/// Parameter layout shared by the objective and the model.
struct Layout {
    orders: ArimaOrders,
    intercept: bool,
}

struct Coefs<'a> {
    c: f64,
    ar: &'a [f64],
    sar: &'a [f64],
    ma: &'a [f64],
    sma: &'a [f64],
}

impl Layout {
    fn len(&self) -> usize {
        let o = &self.orders;
        self.intercept as usize + o.p + o.seasonal_p + o.q + o.seasonal_q
    }

    fn split<'a>(&self, beta: &'a [f64]) -> Coefs<'a> {
        let o = &self.orders;
        let (c, rest) = if self.intercept {
            (beta[0], &beta[1..])
        } else {
            (0.0, beta)
        };
        let (ar, rest) = rest.split_at(o.p);
        let (sar, rest) = rest.split_at(o.seasonal_p);
        let (ma, sma) = rest.split_at(o.q);
        Coefs {
            c,
            ar,
            sar,
            ma,
            sma,
        }
    }
}

impl Coefs<'_> {
    fn ar_poly(&self, m: usize) -> Poly {
        mul(&lag_poly(self.ar, 1, -1.0), &lag_poly(self.sar, m, -1.0))
    }

    fn ma_poly(&self, m: usize) -> Poly {
        mul(&lag_poly(self.ma, 1, 1.0), &lag_poly(self.sma, m, 1.0))
    }
}

/// Conditional residuals of `w`; zero before the first fully observed AR lag.
fn residuals(w: &[f64], a: &Poly, b: &Poly, c: f64, start: usize) -> Vec<f64> {
    let mut e = vec![0.0; w.len()];
    for t in start..w.len() {
        let mut v = -c;
        for &(l, ak) in a {
            v += ak * w[t - l];
        }
        for &(l, bk) in &b[1..] {
            if l <= t {
                v -= bk * e[t - l];
            }
        }
        e[t] = v;
    }
    e
}

/// Normalized CSS objective and its gradient.
fn css(layout: &Layout, w: &[f64], scale: f64, beta: &[f64], grad: Option<&mut [f64]>) -> f64 {
    let m = layout.orders.season;
    let coefs = layout.split(beta);
    let a = coefs.ar_poly(m);
    let b = coefs.ma_poly(m);
    let start = layout.orders.ar_lag();
    let e = residuals(w, &a, &b, coefs.c, start);
    let n_eff = (w.len() - start) as f64;
    let f = e[start..].iter().map(|v| v * v).sum::<f64>() / (n_eff * scale);
    let Some(grad) = grad else {
        return f;
    };

    // Derivative polynomials of a(B) and b(B) with respect to each parameter.
    let o = &layout.orders;
    let phi = lag_poly(coefs.ar, 1, -1.0);
    let sphi = lag_poly(coefs.sar, m, -1.0);
    let theta = lag_poly(coefs.ma, 1, 1.0);
    let stheta = lag_poly(coefs.sma, m, 1.0);
    let mut da: Vec<Poly> = Vec::new();
    let mut db: Vec<Poly> = Vec::new();
    let mut is_c = Vec::new();
    if layout.intercept {
        da.push(vec![]);
        db.push(vec![]);
        is_c.push(true);
    }
    for i in 1..=o.p {
        da.push(shift_scale(&sphi, i, -1.0));
        db.push(vec![]);
        is_c.push(false);
    }
    for j in 1..=o.seasonal_p {
        da.push(shift_scale(&phi, j * m, -1.0));
        db.push(vec![]);
        is_c.push(false);
    }
    for i in 1..=o.q {
        da.push(vec![]);
        db.push(shift_scale(&stheta, i, 1.0));
        is_c.push(false);
    }
    for j in 1..=o.seasonal_q {
        da.push(vec![]);
        db.push(shift_scale(&theta, j * m, 1.0));
        is_c.push(false);
    }

    let n = w.len();
    let k = layout.len();
    let mut de = vec![0.0; n * k];
    grad.iter_mut().for_each(|g| *g = 0.0);
    for t in start..n {
        for j in 0..k {
            let mut v = if is_c[j] { -1.0 } else { 0.0 };
            for &(l, c) in &da[j] {
                v += c * w[t - l];
            }
            for &(l, c) in &db[j] {
                if l <= t {
                    v -= c * e[t - l];
                }
            }
            for &(l, bk) in &b[1..] {
                if l <= t {
                    v -= bk * de[(t - l) * k + j];
                }
            }
            de[t * k + j] = v;
            grad[j] += 2.0 * e[t] * v;
        }
    }
    grad.iter_mut().for_each(|g| *g /= n_eff * scale);
    f
}

/// Minimizes `f` with BFGS and backtracking line search.
///
/// Returns the minimizer, iteration count and whether the gradient tolerance was met.
fn bfgs(
    mut f: impl FnMut(&[f64], Option<&mut [f64]>) -> f64,
    x0: Vec<f64>,
) -> (Vec<f64>, usize, bool) {
    let k = x0.len();
    let mut x = x0;
    let mut g = vec![0.0; k];
    let mut fx = f(&x, Some(&mut g));
    let mut h = identity(k);
    let mut first = true;
    let mut g_new = vec![0.0; k];
    for iter in 0..MAX_BFGS_ITER {
        if g.iter().all(|v| v.abs() <= GRAD_TOL) {
            return (x, iter, true);
        }
        let mut d: Vec<f64> = (0..k)
            .map(|i| -(0..k).map(|j| h[i * k + j] * g[j]).sum::<f64>())
            .collect();
        let mut slope: f64 = d.iter().zip(&g).map(|(a, b)| a * b).sum();
        if !(slope < 0.0) {
            h = identity(k);
            d = g.iter().map(|v| -v).collect();
            slope = -g.iter().map(|v| v * v).sum::<f64>();
        }
        // Keep trial coefficients within a sensible range of the current point.
        let dmax = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut alpha = if dmax > 0.5 { 0.5 / dmax } else { 1.0 };
        let mut accepted = None;
        while alpha > 1e-14 {
            let trial: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + alpha * di).collect();
            let ft = f(&trial, None);
            if ft.is_finite() && ft <= fx + 1e-4 * alpha * slope {
                accepted = Some(trial);
                break;
            }
            alpha *= 0.5;
        }
        let Some(x_new) = accepted else {
            return (x, iter, false);
        };
        let f_new = f(&x_new, Some(&mut g_new));
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        let yy: f64 = y.iter().map(|v| v * v).sum();
        if sy > 1e-12 * yy.sqrt() * s.iter().map(|v| v * v).sum::<f64>().sqrt() {
            if first {
                let scale = sy / yy;
                h.iter_mut().for_each(|v| *v *= scale);
                first = false;
            }
            bfgs_update(&mut h, &s, &y, sy);
        }
        let converged_f = (fx - f_new).abs() <= 1e-15 * fx.abs().max(1e-300);
        x = x_new;
        fx = f_new;
        g.copy_from_slice(&g_new);
        if converged_f && g.iter().all(|v| v.abs() <= GRAD_TOL * 1e3) {
            return (x, iter + 1, true);
        }
    }
    let ok = g.iter().all(|v| v.abs() <= GRAD_TOL);
    (x, MAX_BFGS_ITER, ok)
}

fn identity(k: usize) -> Vec<f64> {
    let mut h = vec![0.0; k * k];
    for i in 0..k {
        h[i * k + i] = 1.0;
    }
    h
}

/// Inverse-Hessian update `H <- (I - r s y^T) H (I - r y s^T) + r s s^T`, `r = 1/(s.y)`.
fn bfgs_update(h: &mut [f64], s: &[f64], y: &[f64], sy: f64) {
    let k = s.len();
    let r = 1.0 / sy;
    let hy: Vec<f64> = (0..k)
        .map(|i| (0..k).map(|j| h[i * k + j] * y[j]).sum())
        .collect();
    let yhy: f64 = y.iter().zip(&hy).map(|(a, b)| a * b).sum();
    for i in 0..k {
        for j in 0..k {
            h[i * k + j] += -r * (s[i] * hy[j] + hy[i] * s[j]) + (r * r * yhy + r) * s[i] * s[j];
        }
    }
}

/// True when all roots of `1 - sum c_i z^i` lie outside the unit circle.
fn is_stable(coefs: &[f64]) -> bool {
    // Step-down recursion on reflection coefficients.
    let mut a = coefs.to_vec();
    while let Some(&k) = a.last() {
        if k.abs() >= 1.0 {
            return false;
        }
        let p = a.len();
        let denom = 1.0 - k * k;
        let next: Vec<f64> = (0..p - 1)
            .map(|j| (a[j] + k * a[p - 2 - j]) / denom)
            .collect();
        a = next;
    }
    true
}

/// Fits the model to `series` by conditional sum of squares.
pub fn fit_arima(series: &[f64], orders: ArimaOrders) -> Result<ArimaModel, ForecastError> {
    orders.validate()?;
    if series.iter().any(|v| !v.is_finite()) {
        return Err(ForecastError::InvalidInput(
            "series contains non-finite values".into(),
        ));
    }
    let need = orders.min_fit_len();
    if series.len() < need {
        return Err(ForecastError::InsufficientHistory {
            have: series.len(),
            need: need - 1,
        });
    }
    let w = difference(series, orders.d, orders.seasonal_d, orders.season)?;
    let mean = w.iter().sum::<f64>() / w.len() as f64;
    let var = w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / w.len() as f64;
    let layout = Layout {
        orders,
        intercept: orders.has_intercept(),
    };
    let zeros = |n| vec![0.0; n];
    if var <= 1e-12 * (1.0 + mean * mean) {
        return Ok(ArimaModel {
            orders,
            ar: zeros(orders.p),
            seasonal_ar: zeros(orders.seasonal_p),
            ma: zeros(orders.q),
            seasonal_ma: zeros(orders.seasonal_q),
            intercept: if layout.intercept { mean } else { 0.0 },
            sigma2: 0.0,
            converged: true,
            iterations: 0,
            stationarity_warning: false,
        });
    }

    // Normalize by the second moment so the objective starts near 1.
    let scale = if layout.intercept {
        var
    } else {
        var + mean * mean
    };
    let mut x0 = vec![0.0; layout.len()];
    if layout.intercept {
        x0[0] = mean;
    }
    let (beta, iterations, converged) = bfgs(|b, g| css(&layout, &w, scale, b, g), x0);
    let f = css(&layout, &w, scale, &beta, None);
    let c = layout.split(&beta);
    let stationarity_warning = !is_stable(c.ar)
        || !is_stable(c.sar)
        || !is_stable(&c.ma.iter().map(|v| -v).collect::<Vec<_>>())
        || !is_stable(&c.sma.iter().map(|v| -v).collect::<Vec<_>>());
    if !converged {
        log::warn!("ARIMA {orders} fit stopped after {iterations} iterations without meeting the gradient tolerance");
    }
    if stationarity_warning {
        log::warn!("ARIMA {orders} fit is non-stationary or non-invertible");
    }
    Ok(ArimaModel {
        orders,
        ar: c.ar.to_vec(),
        seasonal_ar: c.sar.to_vec(),
        ma: c.ma.to_vec(),
        seasonal_ma: c.sma.to_vec(),
        intercept: c.c,
        sigma2: f * scale,
        converged,
        iterations,
        stationarity_warning,
    })
}

/// Forecasts `horizon` values after `history`, clamped at zero.
pub fn forecast(
    model: &ArimaModel,
    history: &[f64],
    horizon: usize,
) -> Result<Vec<f64>, ForecastError> {
    model.check()?;
    let o = &model.orders;
    if history.len() < o.min_history() {
        return Err(ForecastError::InsufficientHistory {
            have: history.len(),
            need: o.min_history() - 1,
        });
    }
    if horizon == 0 {
        return Ok(Vec::new());
    }
    let m = o.season;
    let coefs = Coefs {
        c: model.intercept,
        ar: &model.ar,
        sar: &model.seasonal_ar,
        ma: &model.ma,
        sma: &model.seasonal_ma,
    };
    let a = coefs.ar_poly(m);
    let b = coefs.ma_poly(m);
    let mut w = difference(history, o.d, o.seasonal_d, m)?;
    let mut e = residuals(&w, &a, &b, coefs.c, o.ar_lag());
    let n = w.len();
    for h in 0..horizon {
        let t = n + h;
        let mut v = coefs.c;
        for &(l, ak) in &a[1..] {
            v -= ak * w[t - l];
        }
        for &(l, bk) in &b[1..] {
            if l <= t {
                v += bk * e[t - l];
            }
        }
        w.push(v);
        e.push(0.0);
    }
    let delta = diff_poly(o.d, o.seasonal_d, m);
    let mut x = history.to_vec();
    for &wv in &w[n..] {
        let t = x.len();
        let v = wv - (1..delta.len()).map(|k| delta[k] * x[t - k]).sum::<f64>();
        x.push(v);
    }
    Ok(x[history.len()..].iter().map(|v| v.max(0.0)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn orders(
        p: usize,
        d: usize,
        q: usize,
        sp: usize,
        sd: usize,
        sq: usize,
        m: usize,
    ) -> ArimaOrders {
        ArimaOrders {
            p,
            d,
            q,
            seasonal_p: sp,
            seasonal_d: sd,
            seasonal_q: sq,
            season: m,
        }
    }

    #[test]
    fn first_difference() {
        assert_eq!(
            difference(&[1.0, 3.0, 6.0], 1, 0, 1).unwrap(),
            vec![2.0, 3.0]
        );
        assert_eq!(
            difference(&[1.0, 3.0, 6.0, 10.0], 1, 0, 1).unwrap(),
            vec![2.0, 3.0, 4.0]
        );
    }

    #[test]
    fn seasonal_difference() {
        assert_eq!(
            difference(&[1.0, 2.0, 3.0, 4.0], 0, 1, 2).unwrap(),
            vec![2.0, 2.0]
        );
        assert_eq!(
            difference(&[1.0, 2.0, 4.0, 7.0], 0, 1, 2).unwrap(),
            vec![3.0, 5.0]
        );
    }

    #[test]
    fn zero_differencing_is_identity() {
        let x = [4.0, -1.0, 2.5];
        assert_eq!(difference(&x, 0, 0, 5).unwrap(), x.to_vec());
    }

    #[test]
    fn difference_rejects_short_series() {
        assert!(difference(&[1.0, 2.0], 0, 1, 2).is_err());
    }

    #[test]
    fn integrate_inverts_difference() {
        let x = vec![1.0, 4.0, 2.0, 8.0, 5.0, 7.0, 3.0, 9.0];
        let w = difference(&x, 1, 1, 3).unwrap();
        let back = integrate(&x[..4], &w, 1, 1, 3).unwrap();
        for (a, b) in back.iter().zip(&x) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn ar1_forecast_halves() {
        let model = ArimaModel {
            orders: orders(1, 0, 0, 0, 0, 0, 1),
            ar: vec![0.5],
            seasonal_ar: vec![],
            ma: vec![],
            seasonal_ma: vec![],
            intercept: 0.0,
            sigma2: 1.0,
            converged: true,
            iterations: 0,
            stationarity_warning: false,
        };
        let f = forecast(&model, &[3.0, 8.0], 3).unwrap();
        assert_eq!(f, vec![4.0, 2.0, 1.0]);
    }

    #[test]
    fn forecast_zero_horizon_is_empty() {
        let model = fit_arima(
            &(0..50).map(|v| (v % 7) as f64 + 1.0).collect::<Vec<_>>(),
            orders(1, 0, 0, 0, 0, 0, 1),
        )
        .unwrap();
        assert!(forecast(&model, &[1.0, 2.0, 3.0], 0).unwrap().is_empty());
    }

    #[test]
    fn fit_rejects_short_history() {
        let o = ArimaOrders::default();
        let err = fit_arima(&vec![1.0; 200], o).unwrap_err();
        assert!(matches!(err, ForecastError::InsufficientHistory { .. }));
    }

    #[test]
    fn constant_series_gives_intercept_only() {
        let m = fit_arima(&vec![5.0; 40], orders(1, 0, 1, 0, 0, 0, 1)).unwrap();
        assert_eq!(m.intercept, 5.0);
        assert_eq!(m.ar, vec![0.0]);
        let f = forecast(&m, &[5.0; 10], 3).unwrap();
        assert!(f.iter().all(|v| (v - 5.0).abs() < 1e-12));
    }

    #[test]
    fn css_gradient_matches_finite_differences() {
        let x: Vec<f64> = (0..120)
            .map(|t| ((t as f64) * 0.7).sin() * 3.0 + (t % 12) as f64 + 0.01 * t as f64)
            .collect();
        let o = orders(1, 1, 1, 1, 1, 1, 12);
        let w = difference(&x, 1, 1, 12).unwrap();
        let layout = Layout {
            orders: o,
            intercept: false,
        };
        let beta = vec![0.3, -0.2, 0.25, -0.4];
        let mut g = vec![0.0; 4];
        css(&layout, &w, 1.0, &beta, Some(&mut g));
        for j in 0..4 {
            let h = 1e-6;
            let mut bp = beta.clone();
            bp[j] += h;
            let mut bm = beta.clone();
            bm[j] -= h;
            let fd =
                (css(&layout, &w, 1.0, &bp, None) - css(&layout, &w, 1.0, &bm, None)) / (2.0 * h);
            assert!(
                (fd - g[j]).abs() < 1e-5 * (1.0 + fd.abs()),
                "param {j}: {fd} vs {}",
                g[j]
            );
        }
    }

    #[test]
    fn stability_check() {
        assert!(is_stable(&[0.5]));
        assert!(!is_stable(&[1.2]));
        assert!(is_stable(&[0.5, 0.3]));
        assert!(!is_stable(&[0.5, 0.6]));
    }

    #[test]
    fn orders_above_three_or_zero_season_rejected() {
        assert!(orders(4, 0, 0, 0, 0, 0, 1).validate().is_err());
        assert!(orders(0, 0, 0, 0, 0, 4, 12).validate().is_err());
        assert!(orders(1, 0, 0, 0, 0, 0, 0).validate().is_err());
        assert!(orders(3, 2, 3, 3, 1, 3, 24).validate().is_ok());
    }

    #[test]
    fn seasonal_persistence_repeats_last_season() {
        let model = ArimaModel {
            orders: orders(0, 0, 0, 0, 1, 0, 4),
            ar: vec![],
            seasonal_ar: vec![],
            ma: vec![],
            seasonal_ma: vec![],
            intercept: 0.0,
            sigma2: 0.0,
            converged: true,
            iterations: 0,
            stationarity_warning: false,
        };
        let hist = [5.0, 1.0, 2.0, 9.0, 3.0, 4.0, 8.0, 6.0];
        assert_eq!(
            forecast(&model, &hist, 6).unwrap(),
            vec![3.0, 4.0, 8.0, 6.0, 3.0, 4.0]
        );
    }

    #[test]
    fn intercept_only_forecast_is_constant() {
        let model = ArimaModel {
            orders: orders(0, 0, 0, 0, 0, 0, 1),
            ar: vec![],
            seasonal_ar: vec![],
            ma: vec![],
            seasonal_ma: vec![],
            intercept: 7.5,
            sigma2: 1.0,
            converged: true,
            iterations: 0,
            stationarity_warning: false,
        };
        assert_eq!(forecast(&model, &[1.0, 2.0], 3).unwrap(), vec![7.5; 3]);
    }

    #[test]
    fn white_noise_intercept_is_sample_mean() {
        let x: Vec<f64> = (0..200)
            .map(|t| 10.0 + ((t * 7919) % 13) as f64 - 6.0)
            .collect();
        let mean = x.iter().sum::<f64>() / x.len() as f64;
        let m = fit_arima(&x, orders(0, 0, 0, 0, 0, 0, 1)).unwrap();
        assert!(m.converged);
        assert!(
            (m.intercept - mean).abs() < 1e-6,
            "{} vs {mean}",
            m.intercept
        );
    }

    #[test]
    fn seasonal_sawtooth_fits_exactly() {
        let x: Vec<f64> = (0..40).map(|t| (t % 4) as f64).collect();
        let m = fit_arima(&x, orders(0, 0, 0, 0, 1, 0, 4)).unwrap();
        assert!(m.sigma2 < 1e-12);
        assert_eq!(forecast(&m, &x, 4).unwrap(), vec![0.0, 1.0, 2.0, 3.0]);
    }

    #[test]
    fn orders_parse() {
        let o: ArimaOrders = "1,1,1,1,1,1,96".parse().unwrap();
        assert_eq!(o, ArimaOrders::default());
        assert!("1,1,1".parse::<ArimaOrders>().is_err());
    }
}
