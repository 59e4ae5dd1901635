//! Seeded EV fleets and base-load days for experiments.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::domain::{ClockTime, EvProfile, Scenario, TimeGrid};
use crate::forecast::synthetic::{synthetic_load_kw, SyntheticLoadParams};
use crate::pricing::TariffParams;
use crate::rng::stream;

const MAX_RESAMPLES: usize = 1000;

/// Recipe for a random fleet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSpec {
    pub num_evs: usize,
    pub num_stations: u32,
    pub grid: TimeGrid,
    pub tariff: TariffParams,
    /// Arrivals fall in slots starting in `[arrival_start, arrival_end)`.
    pub arrival_start: ClockTime,
    pub arrival_end: ClockTime,
    /// Latest departure; deadlines are drawn after the arrival slot up to the slot ending here.
    pub deadline_end: ClockTime,
    pub soc_min: f64,
    pub soc_max: f64,
    pub capacity_kwh: f64,
    pub max_rate_kw: f64,
    pub seed: u64,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            num_evs: 150,
            num_stations: 4,
            grid: TimeGrid::default(),
            tariff: TariffParams::default(),
            arrival_start: ClockTime::from_minutes(18 * 60),
            arrival_end: ClockTime::from_minutes(4 * 60),
            deadline_end: ClockTime::from_minutes(7 * 60),
            soc_min: 0.0,
            soc_max: 1.0,
            capacity_kwh: 30.0,
            max_rate_kw: 6.6,
            seed: 1,
        }
    }
}

/// Slot ranges implied by a spec.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SlotWindows {
    pub first_arrival: usize,
    pub last_arrival: usize,
    pub last_deadline: usize,
}

impl ScenarioSpec {
    pub fn windows(&self) -> Result<SlotWindows, EvalError> {
        let bad = |field: &str, why: String| EvalError::InvalidSpec(format!("{field}: {why}"));
        self.grid
            .validate()
            .map_err(|e| bad("grid", e.to_string()))?;
        let g = &self.grid;
        let first_arrival = g.slot_containing(self.arrival_start).ok_or_else(|| {
            bad(
                "arrival_start",
                format!("{} is outside the grid", self.arrival_start),
            )
        })?;
        let end = ClockTime::from_minutes(self.arrival_end.minutes() + 1439);
        let last_arrival = g
            .slot_containing(end)
            .filter(|&s| s >= first_arrival)
            .ok_or_else(|| {
                bad(
                    "arrival_end",
                    format!(
                        "{} does not follow arrival_start within the grid",
                        self.arrival_end
                    ),
                )
            })?;
        let last_deadline = g
            .slot_ending_by(self.deadline_end)
            .filter(|&s| s > last_arrival)
            .ok_or_else(|| {
                bad(
                    "deadline_end",
                    format!(
                        "{} leaves no slot after the last arrival",
                        self.deadline_end
                    ),
                )
            })?;
        Ok(SlotWindows {
            first_arrival,
            last_arrival,
            last_deadline,
        })
    }

    pub fn validate(&self) -> Result<SlotWindows, EvalError> {
        let bad = |field: &str, why: String| Err(EvalError::InvalidSpec(format!("{field}: {why}")));
        if self.num_stations == 0 {
            return bad("num_stations", "must be at least 1".into());
        }
        if !(0.0 <= self.soc_min && self.soc_min <= self.soc_max && self.soc_max <= 1.0) {
            return bad(
                "soc_min",
                format!(
                    "need 0 <= soc_min <= soc_max <= 1, got {} and {}",
                    self.soc_min, self.soc_max
                ),
            );
        }
        if !(self.capacity_kwh.is_finite() && self.capacity_kwh > 0.0) {
            return bad(
                "capacity_kwh",
                format!("must be positive, got {}", self.capacity_kwh),
            );
        }
        if !(self.max_rate_kw.is_finite() && self.max_rate_kw > 0.0) {
            return bad(
                "max_rate_kw",
                format!("must be positive, got {}", self.max_rate_kw),
            );
        }
        self.tariff
            .validate()
            .map_err(|e| EvalError::InvalidSpec(format!("tariff: {e}")))?;
        self.windows()
    }
}

/// Samples a fleet: uniform arrival and deadline slots, two sorted uniform SOCs,
/// uniform station. Draws that cannot reach their target in time are redrawn.
pub fn generate_scenario(spec: &ScenarioSpec) -> Result<Scenario, EvalError> {
    let w = spec.validate()?;
    let mut rng = stream(spec.seed, "scenario");
    let mut evs = Vec::with_capacity(spec.num_evs);
    for k in 0..spec.num_evs {
        let ev_id = k as u32 + 1;
        let ev = (0..MAX_RESAMPLES)
            .map(|_| {
                let arrival = rng.gen_range(w.first_arrival..=w.last_arrival);
                let deadline = rng.gen_range(arrival + 1..=w.last_deadline);
                let a = rng.gen_range(spec.soc_min..=spec.soc_max);
                let b = rng.gen_range(spec.soc_min..=spec.soc_max);
                EvProfile {
                    ev_id,
                    station_id: rng.gen_range(1..=spec.num_stations),
                    arrival_slot: arrival,
                    deadline_slot: deadline,
                    capacity_kwh: spec.capacity_kwh,
                    max_rate_kw: spec.max_rate_kw,
                    initial_soc: a.min(b),
                    target_soc: a.max(b),
                }
            })
            .find(|ev| ev.validate(&spec.grid).is_ok())
            .ok_or_else(|| {
                EvalError::InvalidSpec(format!("no feasible EV after {MAX_RESAMPLES} draws"))
            })?;
        evs.push(ev);
    }
    Ok(Scenario {
        grid: spec.grid,
        tariff: spec.tariff,
        num_stations: spec.num_stations,
        evs,
    })
}

/// Base load in kWh per slot: `history_days` days before the scheduled day, then the day itself.
#[derive(Debug, Clone, PartialEq)]
pub struct BaseLoad {
    pub history: Vec<f64>,
    pub actual: Vec<f64>,
}

impl BaseLoad {
    /// History followed by the scheduled day.
    pub fn full_series(&self) -> Vec<f64> {
        let mut s = self.history.clone();
        s.extend_from_slice(&self.actual);
        s
    }
}

/// Synthetic base load for a grid, seeded independently of the fleet.
pub fn synthetic_base_load(
    grid: &TimeGrid,
    history_days: usize,
    params: &SyntheticLoadParams,
    seed: u64,
) -> BaseLoad {
    let mut rng = stream(seed, "base-load");
    let kw = synthetic_load_kw(grid, history_days + 1, params, &mut rng);
    let mut kwh: Vec<f64> = kw.iter().map(|p| p * grid.slot_hours).collect();
    let actual = kwh.split_off(history_days * grid.num_slots);
    BaseLoad {
        history: kwh,
        actual,
    }
}
