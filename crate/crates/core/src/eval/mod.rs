//! Method comparison: normalized objectives, merit factor Q, average charging
//! time, seeded scenarios and brute-force oracles.

pub mod oracle;
pub mod scenario;

use std::io::Write;

use thiserror::Error;

use crate::convenience::{total_convenience_j2, ConvenienceError};
use crate::domain::{DomainError, EvProfile, TimeGrid};
use crate::forecast::{ForecastError, ForecasterKind};
use crate::pricing::{total_cost_j1, PricingError};
use crate::qpsolver::SolverOptions;
use crate::scheduler::{
    run_convmax_baseline, run_lockstep, ChargingSchedule, Method, RunContext, SchedulerError,
};

pub use oracle::{brute_force_schedule, max_j2_at_fixed_load, OracleResult};
pub use scenario::{generate_scenario, synthetic_base_load, BaseLoad, ScenarioSpec};

pub const COMPARISON_SCHEMA: &str = "# evsched comparison v1";

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid scenario spec: {0}")]
    InvalidSpec(String),
    #[error("nothing to normalize")]
    Empty,
    #[error("alpha {0} outside [0, 1]")]
    InvalidAlpha(f64),
    #[error("degenerate normalization: {0}")]
    Degenerate(String),
    #[error("EVs did not finish charging: {0:?}")]
    Incomplete(Vec<u32>),
    #[error("instance too large for enumeration: {0}")]
    TooLarge(String),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Scheduler(#[from] SchedulerError),
    #[error(transparent)]
    Pricing(#[from] PricingError),
    #[error(transparent)]
    Convenience(#[from] ConvenienceError),
    #[error(transparent)]
    Forecast(#[from] ForecastError),
}

/// Min-max normalized values; `degenerate` when every input was equal.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalized {
    pub values: Vec<f64>,
    pub degenerate: bool,
}

/// Maps `values` onto [0, 1] by min-max scaling. All-equal inputs map to 0.
pub fn normalize(values: &[f64]) -> Result<Normalized, EvalError> {
    if values.is_empty() {
        return Err(EvalError::Empty);
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    if !(span > 0.0) {
        return Ok(Normalized {
            values: vec![0.0; values.len()],
            degenerate: true,
        });
    }
    Ok(Normalized {
        values: values.iter().map(|v| (v - lo) / span).collect(),
        degenerate: false,
    })
}

fn check_alpha(alpha: f64) -> Result<(), EvalError> {
    if (0.0..=1.0).contains(&alpha) {
        Ok(())
    } else {
        Err(EvalError::InvalidAlpha(alpha))
    }
}

/// `Q = 1 / (alpha * j1n + (1 - alpha) / j2n)`.
///
/// Errors when `j2n = 0` with `alpha < 1`, or when the denominator vanishes.
pub fn merit_q(j1_norm: f64, j2_norm: f64, alpha: f64) -> Result<f64, EvalError> {
    check_alpha(alpha)?;
    if alpha < 1.0 && j2_norm == 0.0 {
        return Err(EvalError::Degenerate(format!(
            "j2_norm is 0 with alpha {alpha}"
        )));
    }
    let conv = if alpha < 1.0 {
        (1.0 - alpha) / j2_norm
    } else {
        0.0
    };
    let den = alpha * j1_norm + conv;
    if !(den > 0.0) {
        return Err(EvalError::Degenerate(format!(
            "denominator {den} for j1_norm {j1_norm}, j2_norm {j2_norm}, alpha {alpha}"
        )));
    }
    Ok(1.0 / den)
}

/// Q for reports: takes the limiting value where [`merit_q`] errors and
/// drops the term of an objective flagged degenerate.
///
/// A zero `j2_norm` gives 0; a vanishing denominator gives infinity.
pub fn merit_q_report(
    j1_norm: f64,
    j2_norm: f64,
    alpha: f64,
    skip_j1: bool,
    skip_j2: bool,
) -> Result<f64, EvalError> {
    check_alpha(alpha)?;
    let cost = if skip_j1 { 0.0 } else { alpha * j1_norm };
    let conv = if skip_j2 || alpha == 1.0 {
        0.0
    } else if j2_norm == 0.0 {
        return Ok(0.0);
    } else {
        (1.0 - alpha) / j2_norm
    };
    let den = cost + conv;
    Ok(if den > 0.0 { 1.0 / den } else { f64::INFINITY })
}

/// Mean time from arrival to the end of the completing slot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChargeTime {
    pub slots: f64,
    pub minutes: f64,
}

/// Averages `completed_at - arrival + 1` slots over all EVs.
pub fn avg_charging_time(
    schedule: &ChargingSchedule,
    evs: &[EvProfile],
    grid: &TimeGrid,
) -> Result<ChargeTime, EvalError> {
    if evs.is_empty() {
        return Err(EvalError::Empty);
    }
    let missing: Vec<u32> = evs
        .iter()
        .zip(&schedule.completed_at)
        .filter(|(_, c)| c.is_none())
        .map(|(e, _)| e.ev_id)
        .collect();
    if !missing.is_empty() || schedule.completed_at.len() != evs.len() {
        return Err(EvalError::Incomplete(missing));
    }
    let total: usize = evs
        .iter()
        .zip(&schedule.completed_at)
        .map(|(e, c)| c.expect("checked above") + 1 - e.arrival_slot)
        .sum();
    let slots = total as f64 / evs.len() as f64;
    Ok(ChargeTime {
        slots,
        minutes: slots * grid.slot_minutes(),
    })
}

/// One method's scores within a comparison cell.
#[derive(Debug, Clone, PartialEq)]
pub struct MeritReport {
    pub method: Method,
    pub num_evs: usize,
    pub j1: f64,
    pub j2: f64,
    pub j1_norm: f64,
    pub j2_norm: f64,
    /// Set when all methods tied on that objective.
    pub j1_degenerate: bool,
    pub j2_degenerate: bool,
    pub q_by_alpha: Vec<(f64, f64)>,
    pub avg_charge_slots: f64,
    pub avg_charge_min: f64,
}

/// Raw result of running one method on one fleet.
#[derive(Debug, Clone)]
pub struct MethodRun {
    pub method: Method,
    pub schedule: ChargingSchedule,
    pub j1: f64,
    pub j2: f64,
    pub charge_time: ChargeTime,
    pub warnings: Vec<String>,
}

/// Runs all three methods on one fleet. The cost-only baseline shares the
/// planner's per-slot load.
pub fn run_all_methods(ctx: &RunContext) -> Result<Vec<MethodRun>, EvalError> {
    let ((csa, csa_rep), (cm, cm_rep)) = run_lockstep(ctx)?;
    let (cx, cx_rep) = run_convmax_baseline(ctx)?;
    [
        (Method::Csa, csa, csa_rep),
        (Method::Costmin, cm, cm_rep),
        (Method::Convmax, cx, cx_rep),
    ]
    .into_iter()
    .map(|(method, schedule, rep)| {
        Ok(MethodRun {
            method,
            j1: total_cost_j1(&schedule, ctx.actual, ctx.tariff)?,
            j2: total_convenience_j2(&schedule, ctx.evs, ctx.grid)?,
            charge_time: avg_charging_time(&schedule, ctx.evs, ctx.grid)?,
            schedule,
            warnings: rep.warnings,
        })
    })
    .collect()
}

/// Normalizes the runs of one fleet against each other and scores Q.
pub fn merit_reports(
    runs: &[MethodRun],
    num_evs: usize,
    alphas: &[f64],
) -> Result<Vec<MeritReport>, EvalError> {
    let n1 = normalize(&runs.iter().map(|r| r.j1).collect::<Vec<_>>())?;
    let n2 = normalize(&runs.iter().map(|r| r.j2).collect::<Vec<_>>())?;
    runs.iter()
        .enumerate()
        .map(|(k, r)| {
            let (j1n, j2n) = (n1.values[k], n2.values[k]);
            let q_by_alpha = alphas
                .iter()
                .map(|&a| {
                    Ok((
                        a,
                        merit_q_report(j1n, j2n, a, n1.degenerate, n2.degenerate)?,
                    ))
                })
                .collect::<Result<_, EvalError>>()?;
            Ok(MeritReport {
                method: r.method,
                num_evs,
                j1: r.j1,
                j2: r.j2,
                j1_norm: j1n,
                j2_norm: j2n,
                j1_degenerate: n1.degenerate,
                j2_degenerate: n2.degenerate,
                q_by_alpha,
                avg_charge_slots: r.charge_time.slots,
                avg_charge_min: r.charge_time.minutes,
            })
        })
        .collect()
}

/// Sweep settings for [`compare_methods`].
#[derive(Debug, Clone)]
pub struct CompareConfig {
    /// Fleet recipe; `num_evs` is replaced by each entry of `ev_counts`.
    pub spec: ScenarioSpec,
    pub alphas: Vec<f64>,
    pub ev_counts: Vec<usize>,
    pub forecaster: ForecasterKind,
    pub solver: SolverOptions,
}

/// Outcome of one EV count: three reports, or the error that stopped it.
#[derive(Debug)]
pub struct ComparisonCell {
    pub num_evs: usize,
    pub result: Result<Vec<MeritReport>, EvalError>,
}

/// Runs every method for every EV count against the same base load.
pub fn compare_methods(
    cfg: &CompareConfig,
    base: &BaseLoad,
) -> Result<Vec<ComparisonCell>, EvalError> {
    for &a in &cfg.alphas {
        check_alpha(a)?;
    }
    cfg.spec.validate()?;
    let grid = cfg.spec.grid;
    let forecaster = cfg
        .forecaster
        .build(&base.history, &base.actual, grid.num_slots)?;
    Ok(cfg
        .ev_counts
        .iter()
        .map(|&n| {
            let result = (|| {
                let scenario = generate_scenario(&ScenarioSpec {
                    num_evs: n,
                    ..cfg.spec.clone()
                })?;
                let ctx = RunContext {
                    grid: &grid,
                    tariff: &scenario.tariff,
                    evs: &scenario.evs,
                    history: &base.history,
                    actual: &base.actual,
                    forecaster: forecaster.as_ref(),
                    solver: cfg.solver,
                };
                merit_reports(&run_all_methods(&ctx)?, n, &cfg.alphas)
            })();
            if let Err(e) = &result {
                log::error!("comparison with {n} EVs failed: {e}");
            }
            ComparisonCell { num_evs: n, result }
        })
        .collect())
}

fn flags(r: &MeritReport) -> String {
    match (r.j1_degenerate, r.j2_degenerate) {
        (false, false) => "ok".into(),
        (true, false) => "degenerate_j1".into(),
        (false, true) => "degenerate_j2".into(),
        (true, true) => "degenerate_j1_j2".into(),
    }
}

/// Long-format comparison table, one row per method, EV count and alpha.
pub fn write_comparison_csv(
    mut out: impl Write,
    cells: &[ComparisonCell],
    alphas: &[f64],
) -> std::io::Result<()> {
    writeln!(out, "{COMPARISON_SCHEMA}")?;
    let mut w = csv::Writer::from_writer(out);
    let io = std::io::Error::other;
    w.write_record([
        "method",
        "num_evs",
        "alpha",
        "j1",
        "j2",
        "j1_norm",
        "j2_norm",
        "q",
        "avg_charge_min",
        "status",
    ])
    .map_err(io)?;
    for cell in cells {
        match &cell.result {
            Ok(reports) => {
                for r in reports {
                    for &(a, q) in &r.q_by_alpha {
                        w.write_record([
                            r.method.to_string(),
                            r.num_evs.to_string(),
                            a.to_string(),
                            r.j1.to_string(),
                            r.j2.to_string(),
                            r.j1_norm.to_string(),
                            r.j2_norm.to_string(),
                            q.to_string(),
                            r.avg_charge_min.to_string(),
                            flags(r),
                        ])
                        .map_err(io)?;
                    }
                }
            }
            Err(e) => {
                for m in Method::ALL {
                    for a in alphas {
                        let mut rec = vec![m.to_string(), cell.num_evs.to_string(), a.to_string()];
                        rec.extend(std::iter::repeat(String::new()).take(6));
                        rec.push(format!("error: {e}"));
                        w.write_record(&rec).map_err(io)?;
                    }
                }
            }
        }
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_examples() {
        let n = normalize(&[10.0, 20.0, 30.0]).unwrap();
        assert_eq!(n.values, vec![0.0, 0.5, 1.0]);
        assert!(!n.degenerate);
        let d = normalize(&[4.0, 4.0]).unwrap();
        assert_eq!(d.values, vec![0.0, 0.0]);
        assert!(d.degenerate);
        assert!(matches!(normalize(&[]), Err(EvalError::Empty)));
    }

    #[test]
    fn merit_q_examples() {
        assert!((merit_q(0.5, 0.5, 0.5).unwrap() - 0.8).abs() < 1e-15);
        assert_eq!(merit_q(0.25, 0.7, 1.0).unwrap(), 4.0);
        assert!((merit_q(0.25, 0.7, 0.0).unwrap() - 0.7).abs() < 1e-15);
        assert!(matches!(
            merit_q(0.5, 0.0, 0.5),
            Err(EvalError::Degenerate(_))
        ));
        assert!(matches!(
            merit_q(0.0, 0.3, 1.0),
            Err(EvalError::Degenerate(_))
        ));
        assert!(matches!(
            merit_q(0.5, 0.5, 1.5),
            Err(EvalError::InvalidAlpha(_))
        ));
    }

    #[test]
    fn merit_q_report_limits() {
        assert_eq!(merit_q_report(0.5, 0.0, 0.5, false, false).unwrap(), 0.0);
        assert_eq!(
            merit_q_report(0.0, 0.0, 1.0, false, false).unwrap(),
            f64::INFINITY
        );
        assert_eq!(
            merit_q_report(0.0, 0.4, 1.0, false, false).unwrap(),
            f64::INFINITY
        );
        // A tied objective is left out of the denominator.
        assert!((merit_q_report(0.0, 0.5, 0.5, true, false).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(
            merit_q_report(0.3, 0.6, 0.4, false, false).unwrap(),
            merit_q(0.3, 0.6, 0.4).unwrap()
        );
    }

    fn ev(id: u32, arrival: usize, soc: f64, target: f64) -> EvProfile {
        EvProfile {
            ev_id: id,
            station_id: 1,
            arrival_slot: arrival,
            deadline_slot: arrival + 5,
            capacity_kwh: 30.0,
            max_rate_kw: 6.6,
            initial_soc: soc,
            target_soc: target,
        }
    }

    #[test]
    fn charging_time_examples() {
        let g = TimeGrid::default();
        let evs = [ev(1, 3, 0.1, 0.2), ev(2, 5, 0.4, 0.4)];
        let mut s = ChargingSchedule::idle(&evs, &vec![0.0; 96]);
        s.completed_at = vec![Some(6), Some(5)];
        let c = avg_charging_time(&s, &evs, &g).unwrap();
        assert_eq!(c.slots, 2.5);
        assert_eq!(c.minutes, 37.5);
        let one = avg_charging_time(&s, &evs[..1], &g);
        assert!(one.is_err(), "row count mismatch must be rejected");
        s.completed_at[1] = None;
        assert!(
            matches!(avg_charging_time(&s, &evs, &g), Err(EvalError::Incomplete(ids)) if ids == vec![2])
        );
    }

    #[test]
    fn single_ev_four_slots_is_an_hour() {
        let g = TimeGrid::default();
        let evs = [ev(1, 3, 0.1, 0.2)];
        let mut s = ChargingSchedule::idle(&evs, &vec![0.0; 96]);
        s.completed_at = vec![Some(6)];
        assert_eq!(avg_charging_time(&s, &evs, &g).unwrap().minutes, 60.0);
    }

    proptest::proptest! {
        #[test]
        fn normalized_values_span_unit_interval(v in proptest::collection::vec(-1e6f64..1e6, 1..8)) {
            let n = normalize(&v).unwrap();
            for (&x, &y) in v.iter().zip(&n.values) {
                proptest::prop_assert!((0.0..=1.0).contains(&y));
                if !n.degenerate {
                    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
                    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    proptest::prop_assert!(((x - lo) / (hi - lo) - y).abs() < 1e-12);
                }
            }
        }

        #[test]
        fn q_rewards_low_cost_and_high_convenience(
            j1 in 0.0f64..1.0,
            j2 in 0.01f64..1.0,
            d in 0.0f64..0.5,
            alpha in 0.0f64..1.0,
        ) {
            let q = merit_q(j1, j2, alpha).unwrap();
            proptest::prop_assert!(q > 0.0);
            proptest::prop_assert!(merit_q((j1 + d).min(1.0), j2, alpha).unwrap() <= q);
            proptest::prop_assert!(merit_q(j1, (j2 + d).min(1.0), alpha).unwrap() >= q);
            proptest::prop_assert_eq!(merit_q_report(j1, j2, alpha, false, false).unwrap(), q);
        }
    }
}
