//! Online scheduling loop and per-slot allocation.
//!
//! [`run_csa`] re-plans the cost-optimal load over the look-ahead window every
//! slot and hands the current slot's planned energy to EVs in
//! earliest-deadline order. The cost-only baseline draws exactly the same
//! per-slot energy but serves EVs in arrival order; the convenience-only
//! baseline charges every EV at full rate.

mod engine;
mod flow;
mod report;

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::domain::{energy_demand, DomainError, EvProfile, TimeGrid, SOC_TOL};
use crate::forecast::ForecastError;
use crate::qpsolver::QpError;

pub use engine::{
    run_convmax_baseline, run_costmin_baseline, run_csa, run_lockstep, run_method, run_ucm_at_load,
    RunContext,
};
pub use report::{write_schedule_csv, write_slots_csv, RunReport, SlotRecord, SlotStatus};

/// Absolute tolerance on energies and loads when checking schedules.
pub const FEASIBILITY_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum SchedulerError {
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error("forecast failed at slot {slot}: {source}")]
    Forecast { slot: usize, source: ForecastError },
    #[error("P1 at slot {slot}: {source}")]
    Solver { slot: usize, source: QpError },
    #[error("available energy must be non-negative, got {0}")]
    NegativeEnergy(f64),
    #[error("EV {ev_id}: SOC {soc} exceeds 1")]
    SocOverflow { ev_id: u32, soc: f64 },
    #[error("invalid input: {0}")]
    Input(String),
}

/// Which scheduling policy to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Csa,
    Costmin,
    Convmax,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Csa, Method::Costmin, Method::Convmax];

    pub fn name(self) -> &'static str {
        match self {
            Method::Csa => "csa",
            Method::Costmin => "costmin",
            Method::Convmax => "convmax",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown method {s:?}, expected csa, costmin or convmax"))
    }
}

/// Realized charging plan of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct ChargingSchedule {
    pub ev_ids: Vec<u32>,
    /// Energy per EV and slot, kWh; column `k` is slot `k + 1`.
    pub energy: Vec<Vec<f64>>,
    /// Base load plus charging energy per slot.
    pub total_load: Vec<f64>,
    /// Slot in which each EV reached its target SOC.
    pub completed_at: Vec<Option<usize>>,
}

impl ChargingSchedule {
    /// All-zero schedule with `z` equal to `base`.
    pub fn idle(evs: &[EvProfile], base: &[f64]) -> Self {
        Self {
            ev_ids: evs.iter().map(|e| e.ev_id).collect(),
            energy: vec![vec![0.0; base.len()]; evs.len()],
            total_load: base.to_vec(),
            completed_at: vec![None; evs.len()],
        }
    }

    pub fn num_slots(&self) -> usize {
        self.total_load.len()
    }

    /// Charging energy per slot.
    pub fn ev_load(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.num_slots()];
        for row in &self.energy {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        out
    }
}

/// Sorts EV indices by deadline, then arrival, then id.
pub fn edf_order(evs: &[EvProfile], idx: &mut [usize]) {
    idx.sort_by_key(|&i| (evs[i].deadline_slot, evs[i].arrival_slot, evs[i].ev_id));
}

/// Sorts EV indices by arrival, then id.
pub fn fcfs_order(evs: &[EvProfile], idx: &mut [usize]) {
    idx.sort_by_key(|&i| (evs[i].arrival_slot, evs[i].ev_id));
}

/// Front-to-back greedy fill: entry `k` receives `min(remaining, limits[k])`.
pub fn greedy_fill(amount: f64, limits: &[f64]) -> Result<Vec<f64>, SchedulerError> {
    if !(amount >= 0.0) {
        return Err(SchedulerError::NegativeEnergy(amount));
    }
    let mut left = amount;
    Ok(limits
        .iter()
        .map(|&lim| {
            let d = left.min(lim.max(0.0));
            left -= d;
            d
        })
        .collect())
}

/// Splits `l_t` among `active`, which must already be in deadline order.
///
/// Each EV in turn receives the smaller of what is left, its slot energy cap
/// and its remaining demand; energy beyond what the EVs can take is unused.
pub fn ucm_allocate(
    active: &[&EvProfile],
    soc: &[f64],
    l_t: f64,
    grid: &TimeGrid,
) -> Result<Vec<f64>, SchedulerError> {
    if active.len() != soc.len() {
        return Err(SchedulerError::Input(format!(
            "{} EVs but {} SOC values",
            active.len(),
            soc.len()
        )));
    }
    if active
        .windows(2)
        .any(|w| w[0].deadline_slot > w[1].deadline_slot)
    {
        return Err(SchedulerError::Input(
            "active EVs must be sorted by deadline".into(),
        ));
    }
    let limits: Vec<f64> = active
        .iter()
        .zip(soc)
        .map(|(ev, &s)| ev.slot_energy_cap(grid).min(energy_demand(ev, s)))
        .collect();
    greedy_fill(l_t, &limits)
}

/// Energy bounds of one EV for slot `t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlotBounds {
    /// Least energy that still lets the EV finish by its deadline at full rate.
    pub mandatory: f64,
    /// `min(slot cap, remaining demand)`.
    pub most: f64,
}

pub fn slot_bounds(ev: &EvProfile, soc: f64, t: usize, grid: &TimeGrid) -> SlotBounds {
    let cap = ev.slot_energy_cap(grid);
    let rem = energy_demand(ev, soc);
    let later = cap * ev.deadline_slot.saturating_sub(t) as f64;
    let most = cap.min(rem);
    SlotBounds {
        mandatory: (rem - later).clamp(0.0, most),
        most,
    }
}

/// Priority allocation that never strands an EV.
///
/// Every EV first gets its mandatory energy, then the rest of `amount` is
/// filled front to back up to each EV's `most`. When no EV is forced to
/// charge this matches [`greedy_fill`] on the `most` limits. `amount` is
/// clamped to `[sum mandatory, sum most]`; the second value is the
/// energy actually allocated.
pub fn reserved_fill(amount: f64, bounds: &[SlotBounds]) -> (Vec<f64>, f64) {
    let floor: f64 = bounds.iter().map(|b| b.mandatory).sum();
    let ceil: f64 = bounds.iter().map(|b| b.most).sum();
    let target = amount.clamp(floor, ceil.max(floor));
    let mut left = (target - floor).max(0.0);
    let x: Vec<f64> = bounds
        .iter()
        .map(|b| {
            let d = left.min(b.most - b.mandatory);
            left -= d;
            b.mandatory + d
        })
        .collect();
    (x, target)
}

/// Adds `p / capacity` to each SOC and reports EVs that reached their target.
///
/// `idx[k]` is the EV receiving `p[k]`. Returns the indices that completed.
pub fn soc_update(
    soc: &mut [f64],
    idx: &[usize],
    p: &[f64],
    evs: &[EvProfile],
) -> Result<Vec<usize>, SchedulerError> {
    let mut done = Vec::new();
    for (&i, &e) in idx.iter().zip(p) {
        let ev = &evs[i];
        let was_done = soc[i] >= ev.target_soc - SOC_TOL;
        let next = soc[i] + e / ev.capacity_kwh;
        if next > 1.0 + SOC_TOL {
            return Err(SchedulerError::SocOverflow {
                ev_id: ev.ev_id,
                soc: next,
            });
        }
        soc[i] = next;
        if !was_done && next >= ev.target_soc - SOC_TOL {
            done.push(i);
        }
    }
    Ok(done)
}

/// A violated schedule constraint.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("EV {ev_id:?}, slot {slot}: {reason}")]
pub struct Violation {
    pub ev_id: Option<u32>,
    pub slot: usize,
    pub reason: String,
}

/// Checks rate caps, availability, battery capacity and `z = base + sum p`, all to `tol`.
pub fn check_feasibility(
    schedule: &ChargingSchedule,
    evs: &[EvProfile],
    grid: &TimeGrid,
    base: &[f64],
    tol: f64,
) -> Result<(), Violation> {
    let t = grid.num_slots;
    let bad = |ev_id, slot, reason| {
        Err(Violation {
            ev_id,
            slot,
            reason,
        })
    };
    if schedule.energy.len() != evs.len() || base.len() != t || schedule.total_load.len() != t {
        return bad(None, 0, "schedule shape does not match the scenario".into());
    }
    for (ev, row) in evs.iter().zip(&schedule.energy) {
        let id = Some(ev.ev_id);
        if row.len() != t {
            return bad(id, 0, format!("{} slots, expected {t}", row.len()));
        }
        let cap = ev.slot_energy_cap(grid);
        let mut stored = ev.initial_soc * ev.capacity_kwh;
        for (k, &p) in row.iter().enumerate() {
            let slot = k + 1;
            let limit = if ev.is_available(slot) { cap } else { 0.0 };
            if !(p >= -tol && p <= limit + tol) {
                return bad(id, slot, format!("energy {p} outside [0, {limit}]"));
            }
            stored += p;
        }
        if stored > ev.capacity_kwh + tol {
            return bad(
                id,
                t,
                format!(
                    "stored energy {stored} exceeds capacity {}",
                    ev.capacity_kwh
                ),
            );
        }
    }
    let ev_load = schedule.ev_load();
    for k in 0..t {
        let gap = schedule.total_load[k] - base[k] - ev_load[k];
        if gap.abs() > tol {
            return bad(
                None,
                k + 1,
                format!("total load differs from base plus charging by {gap:e}"),
            );
        }
    }
    Ok(())
}

/// EVs whose final SOC falls short of the target by more than `tol` (as SOC fraction).
pub fn unmet_demand(schedule: &ChargingSchedule, evs: &[EvProfile], tol: f64) -> Vec<u32> {
    evs.iter()
        .zip(&schedule.energy)
        .filter(|(ev, row)| {
            ev.initial_soc + row.iter().sum::<f64>() / ev.capacity_kwh < ev.target_soc - tol
        })
        .map(|(ev, _)| ev.ev_id)
        .collect()
}
