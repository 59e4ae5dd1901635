//! Cost-optimal charging plan over the look-ahead window (problem P1).
//!
//! The plan minimizes the integrated tariff cost of the window subject to
//! per-slot rate caps, availability and each EV's remaining demand. Only the
//! total load per slot enters the objective, so the optimal load profile
//! `z*` is unique while the per-EV split generally is not.
//!
//! Marginal-price quantities (multipliers, stationarity residuals) are
//! reported in load units, i.e. divided by `k1`, so they read as kWh.

mod ipm;
mod linalg;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{active_indices, energy_demand, EvProfile, FleetState, TimeGrid};
use crate::pricing::TariffParams;

/// Rows whose slack is below this are fixed instead of optimized.
const FIX_TOL: f64 = 1e-10;
/// Complementarity is driven this much below the requested tolerance so that
/// multipliers of interior entries are negligible.
const COMPLEMENTARITY_FACTOR: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum QpError {
    #[error("solver tolerance must be positive, got {0}")]
    InvalidTolerance(f64),
    #[error("invalid instance: {0}")]
    InvalidInstance(String),
    #[error("EV {ev_id}: demand {demand} kWh exceeds {deliverable} kWh deliverable in the window")]
    Infeasible {
        ev_id: u32,
        demand: f64,
        deliverable: f64,
    },
    #[error("no convergence after {iterations} iterations (KKT residual {residual:.3e})")]
    MaxIterations {
        iterations: usize,
        residual: f64,
        best: Box<QpSolution>,
    },
    #[error("numerical breakdown (KKT residual {residual:.3e})")]
    Numerical {
        residual: f64,
        best: Box<QpSolution>,
    },
}

impl QpError {
    /// Best iterate when the failure happened after the method started.
    pub fn best_iterate(&self) -> Option<&QpSolution> {
        match self {
            QpError::MaxIterations { best, .. } | QpError::Numerical { best, .. } => Some(best),
            _ => None,
        }
    }
}

/// One EV's row of P1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QpRow {
    pub ev_id: u32,
    /// Energy to deliver over the window, kWh.
    pub demand: f64,
    /// Per-slot energy cap over the window; 0 where the EV is absent.
    pub caps: Vec<f64>,
}

/// P1 over a window of consecutive slots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QpInstance {
    /// Grid slot of the first window position.
    pub first_slot: usize,
    /// Base load per window slot (actual for the first, forecast after).
    pub base_load: Vec<f64>,
    pub rows: Vec<QpRow>,
    pub tariff: TariffParams,
}

impl QpInstance {
    pub fn num_slots(&self) -> usize {
        self.base_load.len()
    }

    pub fn validate(&self) -> Result<(), QpError> {
        let bad = |m: String| Err(QpError::InvalidInstance(m));
        self.tariff
            .validate()
            .map_err(|e| QpError::InvalidInstance(e.to_string()))?;
        if let Some(b) = self
            .base_load
            .iter()
            .find(|b| !(b.is_finite() && **b >= 0.0))
        {
            return bad(format!("base load {b} must be finite and non-negative"));
        }
        for row in &self.rows {
            if row.caps.len() != self.num_slots() {
                return bad(format!(
                    "EV {} has {} caps for {} slots",
                    row.ev_id,
                    row.caps.len(),
                    self.num_slots()
                ));
            }
            if let Some(c) = row.caps.iter().find(|c| !(c.is_finite() && **c >= 0.0)) {
                return bad(format!(
                    "EV {} cap {c} must be finite and non-negative",
                    row.ev_id
                ));
            }
            if !(row.demand.is_finite() && row.demand >= 0.0) {
                return bad(format!(
                    "EV {} demand {} must be non-negative",
                    row.ev_id, row.demand
                ));
            }
            let deliverable: f64 = row.caps.iter().sum();
            if row.demand > deliverable + 1e-9 * deliverable.max(1.0) {
                return Err(QpError::Infeasible {
                    ev_id: row.ev_id,
                    demand: row.demand,
                    deliverable,
                });
            }
        }
        Ok(())
    }

    /// Total load per window slot for a plan.
    pub fn total_load(&self, p: &[Vec<f64>]) -> Vec<f64> {
        let mut z = self.base_load.clone();
        for row in p {
            for (zs, v) in z.iter_mut().zip(row) {
                *zs += v;
            }
        }
        z
    }

    /// Window cost of a plan in tariff units.
    pub fn objective(&self, p: &[Vec<f64>]) -> f64 {
        let t = &self.tariff;
        self.total_load(p)
            .iter()
            .zip(&self.base_load)
            .map(|(&z, &b)| t.k0 * (z - b) + 0.5 * t.k1 * (z * z - b * b))
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Seed for a randomized primal start; `None` uses the uniform spread.
    pub start_jitter: Option<u64>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iter: 100,
            start_jitter: None,
        }
    }
}

/// Lagrange multipliers in load units.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct QpDuals {
    /// Demand equality multiplier per row.
    pub demand: Vec<f64>,
    /// Lower-bound multiplier per row and slot.
    pub lower: Vec<Vec<f64>>,
    /// Upper-bound multiplier per row and slot.
    pub upper: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    /// Energy per row and window slot.
    pub p: Vec<Vec<f64>>,
    /// Optimal total load per window slot.
    pub z_star: Vec<f64>,
    /// Window cost in tariff units.
    pub objective: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub duals: QpDuals,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct KktReport {
    pub primal: f64,
    pub dual: f64,
    pub stationarity: f64,
    pub complementarity: f64,
}

impl KktReport {
    pub fn max(&self) -> f64 {
        self.primal
            .max(self.dual)
            .max(self.stationarity)
            .max(self.complementarity)
    }
}

/// Shortfalls below this, relative to the deliverable energy, are rounding noise.
const CURTAIL_REPORT_TOL: f64 = 1e-9;

/// An EV whose remaining demand could not fit in the window and was reduced.
#[derive(Debug, Clone, PartialEq)]
pub struct Curtailment {
    pub ev_id: u32,
    pub requested: f64,
    pub deliverable: f64,
}

/// Builds P1 for the EVs active at slot `t`.
///
/// `base_window` covers `t..=max deadline` of the active set. Demands larger
/// than what the window can deliver are curtailed and reported.
pub fn assemble_p1(
    evs: &[EvProfile],
    state: &FleetState,
    grid: &TimeGrid,
    tariff: &TariffParams,
    t: usize,
    base_window: &[f64],
) -> Result<(QpInstance, Vec<Curtailment>), QpError> {
    let active = active_indices(evs, state, t);
    let end = active
        .iter()
        .map(|&i| evs[i].deadline_slot)
        .max()
        .unwrap_or(t - 1);
    let len = end + 1 - t;
    if base_window.len() != len {
        return Err(QpError::InvalidInstance(format!(
            "base window has {} slots, active window {}..={} needs {len}",
            base_window.len(),
            t,
            end
        )));
    }
    let mut curtailed = Vec::new();
    let rows = active
        .iter()
        .map(|&i| {
            let ev = &evs[i];
            let cap = ev.slot_energy_cap(grid);
            let caps: Vec<f64> = (t..=end)
                .map(|s| if s <= ev.deadline_slot { cap } else { 0.0 })
                .collect();
            let deliverable: f64 = caps.iter().sum();
            let mut demand = energy_demand(ev, state.soc[i]);
            if demand > deliverable {
                if demand - deliverable > CURTAIL_REPORT_TOL * deliverable.max(1.0) {
                    curtailed.push(Curtailment {
                        ev_id: ev.ev_id,
                        requested: demand,
                        deliverable,
                    });
                }
                demand = deliverable;
            }
            QpRow {
                ev_id: ev.ev_id,
                demand,
                caps,
            }
        })
        .collect();
    let inst = QpInstance {
        first_slot: t,
        base_load: base_window.to_vec(),
        rows,
        tariff: *tariff,
    };
    Ok((inst, curtailed))
}

enum RowKind {
    Zero,
    Full,
    Single(usize),
    Free,
}

fn classify(row: &QpRow) -> RowKind {
    let vars: Vec<usize> = (0..row.caps.len()).filter(|&s| row.caps[s] > 0.0).collect();
    let slack = row.caps.iter().sum::<f64>() - row.demand;
    if row.demand <= FIX_TOL {
        RowKind::Zero
    } else if slack <= FIX_TOL {
        RowKind::Full
    } else if vars.len() == 1 {
        RowKind::Single(vars[0])
    } else {
        RowKind::Free
    }
}

/// Solves P1 with a primal-dual interior point method.
pub fn solve_p1(inst: &QpInstance, opts: &SolverOptions) -> Result<QpSolution, QpError> {
    if !(opts.tol > 0.0 && opts.tol.is_finite()) {
        return Err(QpError::InvalidTolerance(opts.tol));
    }
    inst.validate()?;
    let ns = inst.num_slots();
    let kappa = inst.tariff.k0 / inst.tariff.k1;
    let m = inst.rows.len();
    let mut p = vec![vec![0.0; ns]; m];
    let mut fixed_load = inst.base_load.clone();
    let mut free_rows = Vec::new();
    for (i, row) in inst.rows.iter().enumerate() {
        match classify(row) {
            RowKind::Zero => continue,
            RowKind::Full => p[i].clone_from(&row.caps),
            RowKind::Single(s) => p[i][s] = row.demand.min(row.caps[s]),
            RowKind::Free => {
                free_rows.push(i);
                continue;
            }
        }
        for (f, v) in fixed_load.iter_mut().zip(&p[i]) {
            *f += v;
        }
    }

    if free_rows.is_empty() {
        return Ok(finish(inst, p, kappa, 0, None));
    }
    let (prob, x0, index) = build_problem(inst, &free_rows, &fixed_load, kappa, opts);
    let out = ipm::solve(
        &prob,
        x0,
        opts.tol,
        opts.tol * COMPLEMENTARITY_FACTOR,
        opts.max_iter,
    );
    let mut duals = QpDuals {
        demand: vec![0.0; m],
        lower: vec![vec![0.0; ns]; m],
        upper: vec![vec![0.0; ns]; m],
    };
    for (r, &i) in free_rows.iter().enumerate() {
        duals.demand[i] = out.iterate.y[r];
    }
    for (k, &(i, s)) in index.iter().enumerate() {
        p[i][s] = out.iterate.x[k].clamp(0.0, inst.rows[i].caps[s]);
        duals.lower[i][s] = out.iterate.zl[k];
        duals.upper[i][s] = out.iterate.zu[k];
    }
    let sol = finish(inst, p, kappa, out.iterations, Some((duals, &free_rows)));
    match out.status {
        ipm::Status::Converged => Ok(sol),
        ipm::Status::Numerical => Err(QpError::Numerical {
            residual: sol.kkt_residual,
            best: Box::new(sol),
        }),
        ipm::Status::MaxIterations => Err(QpError::MaxIterations {
            iterations: out.iterations,
            residual: sol.kkt_residual,
            best: Box::new(sol),
        }),
    }
}

/// Flattens the free rows into the method's variable layout and builds the start point.
fn build_problem(
    inst: &QpInstance,
    free_rows: &[usize],
    fixed_load: &[f64],
    kappa: f64,
    opts: &SolverOptions,
) -> (ipm::Problem, Vec<f64>, Vec<(usize, usize)>) {
    // Compress to slots that carry at least one variable.
    let ns = inst.num_slots();
    let mut used = vec![false; ns];
    for &i in free_rows {
        for (s, &c) in inst.rows[i].caps.iter().enumerate() {
            used[s] |= c > 0.0;
        }
    }
    let mut slot_map = vec![usize::MAX; ns];
    let mut base = Vec::new();
    for s in 0..ns {
        if used[s] {
            slot_map[s] = base.len();
            base.push(fixed_load[s]);
        }
    }
    let mut rng = opts.start_jitter.map(ChaCha8Rng::seed_from_u64);
    let mut row_ptr = vec![0];
    let (mut slot, mut ub, mut demand, mut x0, mut index) =
        (vec![], vec![], vec![], vec![], vec![]);
    for &i in free_rows {
        let row = &inst.rows[i];
        let vars: Vec<usize> = (0..ns).filter(|&s| row.caps[s] > 0.0).collect();
        let spread = row.demand / vars.len() as f64;
        for &s in &vars {
            let u = row.caps[s];
            let mut x = spread.min(u);
            if let Some(rng) = rng.as_mut() {
                x *= 1.0 + 0.5 * rng.gen_range(-1.0..1.0);
            }
            x0.push(x.clamp(0.01 * u, 0.99 * u));
            slot.push(slot_map[s]);
            ub.push(u);
            index.push((i, s));
        }
        demand.push(row.demand);
        row_ptr.push(slot.len());
    }
    let prob = ipm::Problem {
        kappa,
        base,
        row_ptr,
        slot,
        ub,
        demand,
    };
    (prob, x0, index)
}

/// Completes duals for rows fixed outside the method and evaluates the solution.
fn finish(
    inst: &QpInstance,
    p: Vec<Vec<f64>>,
    kappa: f64,
    iterations: usize,
    free: Option<(QpDuals, &[usize])>,
) -> QpSolution {
    let ns = inst.num_slots();
    let m = inst.rows.len();
    let z = inst.total_load(&p);
    let g: Vec<f64> = z.iter().map(|zs| kappa + zs).collect();
    let mut is_free = vec![false; m];
    let QpDuals {
        mut demand,
        mut lower,
        mut upper,
    } = match free {
        Some((d, rows)) => {
            rows.iter().for_each(|&i| is_free[i] = true);
            d
        }
        None => QpDuals {
            demand: vec![0.0; m],
            lower: vec![vec![0.0; ns]; m],
            upper: vec![vec![0.0; ns]; m],
        },
    };
    for (i, row) in inst.rows.iter().enumerate() {
        if is_free[i] {
            continue;
        }
        let vars: Vec<usize> = (0..ns).filter(|&s| row.caps[s] > 0.0).collect();
        if vars.is_empty() {
            continue;
        }
        let at_upper = |s: usize| p[i][s] >= row.caps[s];
        let at_lower = |s: usize| p[i][s] <= 0.0;
        // Choose the multiplier so that each entry's bound multiplier has the right sign.
        let y = match classify(row) {
            RowKind::Zero => vars.iter().map(|&s| g[s]).fold(f64::INFINITY, f64::min),
            RowKind::Full => vars.iter().map(|&s| g[s]).fold(f64::NEG_INFINITY, f64::max),
            RowKind::Single(s) => g[s],
            RowKind::Free => unreachable!("free rows carry solver multipliers"),
        };
        demand[i] = y;
        for &s in &vars {
            let gap = g[s] - y;
            if gap >= 0.0 || at_lower(s) {
                lower[i][s] = gap.max(0.0);
            }
            if gap < 0.0 || at_upper(s) {
                upper[i][s] = (-gap).max(0.0);
            }
        }
    }
    let mut sol = QpSolution {
        objective: inst.objective(&p),
        z_star: z,
        p,
        kkt_residual: 0.0,
        iterations,
        duals: QpDuals {
            demand,
            lower,
            upper,
        },
    };
    sol.kkt_residual = verify_kkt(inst, &sol).max();
    sol
}

/// KKT residuals of a candidate solution, recomputed from the instance.
///
/// Entries with zero cap are not decision variables; only their primal value is checked.
pub fn verify_kkt(inst: &QpInstance, sol: &QpSolution) -> KktReport {
    let kappa = inst.tariff.k0 / inst.tariff.k1;
    let z = inst.total_load(&sol.p);
    let mut r = KktReport::default();
    for (i, row) in inst.rows.iter().enumerate() {
        let pi = &sol.p[i];
        let total: f64 = pi.iter().sum();
        r.primal = r.primal.max((total - row.demand).abs());
        let y = sol.duals.demand.get(i).copied().unwrap_or(0.0);
        for (s, &u) in row.caps.iter().enumerate() {
            let x = pi[s];
            r.primal = r.primal.max(-x).max(x - u);
            if u <= 0.0 {
                r.primal = r.primal.max(x.abs());
                continue;
            }
            let zl = sol.duals.lower[i][s];
            let zu = sol.duals.upper[i][s];
            r.dual = r.dual.max(-zl).max(-zu);
            let g = kappa + z[s];
            r.stationarity = r.stationarity.max((g - y - zl + zu).abs());
            r.complementarity = r
                .complementarity
                .max((x * zl).abs())
                .max(((u - x) * zu).abs());
        }
    }
    r
}
