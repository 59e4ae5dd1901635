//! Per-slot urgency of each EV and the fleet convenience objective J2.
//!
//! Urgency `u = w* / w` compares the slots still needed at full rate (`w*`)
//! with the slots left before the deadline (`w`). It is 0 once the EV has
//! reached its target and 1 when the EV must charge at full rate from now on.
//! Convenience sums `1 - u` over every slot of every stay, so charging early
//! raises J2 and postponing lowers it.

use thiserror::Error;

use crate::domain::{EvProfile, TimeGrid, SOC_TOL};
use crate::scheduler::ChargingSchedule;

const ENERGY_TOL: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum ConvenienceError {
    #[error("slot {slot} is after the deadline {deadline} of EV {ev_id}")]
    PastDeadline {
        ev_id: u32,
        slot: usize,
        deadline: usize,
    },
    #[error("schedule shape {rows}x{cols} does not match {evs} EVs over {slots} slots")]
    Shape {
        rows: usize,
        cols: usize,
        evs: usize,
        slots: usize,
    },
    #[error("EV {ev_id}, slot {slot}: {reason}")]
    Infeasible {
        ev_id: u32,
        slot: usize,
        reason: String,
    },
}

/// Urgency components of one EV at one slot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvenienceSample {
    /// Full-rate slots still needed to reach the target (fractional).
    pub min_slots_needed: f64,
    /// Slots left up to and including the deadline.
    pub slots_remaining: usize,
    /// `min_slots_needed / slots_remaining`, 0 once the target is reached.
    pub urgency: f64,
}

impl ConvenienceSample {
    pub fn convenience(&self) -> f64 {
        1.0 - self.urgency
    }
}

/// Full-rate slots needed to lift `ev` from `soc_now` to its target.
pub fn min_slots_needed(ev: &EvProfile, soc_now: f64, grid: &TimeGrid) -> f64 {
    ((ev.target_soc - soc_now) * ev.capacity_kwh).max(0.0) / ev.slot_energy_cap(grid)
}

/// Slots from `t` through the deadline, inclusive.
pub fn slots_remaining(ev: &EvProfile, t: usize) -> Result<usize, ConvenienceError> {
    if t > ev.deadline_slot {
        return Err(ConvenienceError::PastDeadline {
            ev_id: ev.ev_id,
            slot: t,
            deadline: ev.deadline_slot,
        });
    }
    Ok(ev.deadline_slot - t + 1)
}

/// Urgency of `ev` at the start of slot `t` given its SOC at that point.
pub fn convenience(
    ev: &EvProfile,
    soc_now: f64,
    t: usize,
    grid: &TimeGrid,
) -> Result<ConvenienceSample, ConvenienceError> {
    let w = slots_remaining(ev, t)?;
    let w_star = if soc_now >= ev.target_soc - SOC_TOL {
        0.0
    } else {
        min_slots_needed(ev, soc_now, grid)
    };
    Ok(ConvenienceSample {
        min_slots_needed: w_star,
        slots_remaining: w,
        urgency: w_star / w as f64,
    })
}

/// Visits the urgency of every EV at every slot of its stay.
fn for_each_sample(
    schedule: &ChargingSchedule,
    evs: &[EvProfile],
    grid: &TimeGrid,
    mut f: impl FnMut(&ConvenienceSample),
) -> Result<(), ConvenienceError> {
    let rows = schedule.energy.len();
    let cols = schedule.energy.first().map_or(grid.num_slots, Vec::len);
    if rows != evs.len()
        || cols != grid.num_slots
        || schedule.energy.iter().any(|r| r.len() != cols)
    {
        return Err(ConvenienceError::Shape {
            rows,
            cols,
            evs: evs.len(),
            slots: grid.num_slots,
        });
    }
    for (ev, row) in evs.iter().zip(&schedule.energy) {
        let cap = ev.slot_energy_cap(grid);
        let mut soc = ev.initial_soc;
        for (k, &p) in row.iter().enumerate() {
            let t = k + 1;
            let bad = |reason: String| ConvenienceError::Infeasible {
                ev_id: ev.ev_id,
                slot: t,
                reason,
            };
            if p < -ENERGY_TOL || p > cap + ENERGY_TOL {
                return Err(bad(format!("energy {p} outside [0, {cap}]")));
            }
            if !ev.is_available(t) {
                if p > ENERGY_TOL {
                    return Err(bad(format!("energy {p} delivered while unplugged")));
                }
                continue;
            }
            f(&convenience(ev, soc, t, grid)?);
            soc += p / ev.capacity_kwh;
            if soc > 1.0 + SOC_TOL {
                return Err(bad(format!("SOC {soc} exceeds 1")));
            }
        }
    }
    Ok(())
}

/// Sum of urgency over every EV and every slot of its stay.
pub fn total_urgency(
    schedule: &ChargingSchedule,
    evs: &[EvProfile],
    grid: &TimeGrid,
) -> Result<f64, ConvenienceError> {
    let mut total = 0.0;
    for_each_sample(schedule, evs, grid, |s| total += s.urgency)?;
    Ok(total)
}

/// Fleet convenience J2: sum of `1 - u` over every EV and every slot of its stay.
pub fn total_convenience_j2(
    schedule: &ChargingSchedule,
    evs: &[EvProfile],
    grid: &TimeGrid,
) -> Result<f64, ConvenienceError> {
    let mut total = 0.0;
    for_each_sample(schedule, evs, grid, |s| total += s.convenience())?;
    Ok(total)
}
