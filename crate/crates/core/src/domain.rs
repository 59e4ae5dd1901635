//! Time grid, EV charging requests, availability and fleet bookkeeping.

use std::collections::HashSet;
use std::fmt;
use std::ops::RangeInclusive;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pricing::TariffParams;

/// SOC tolerance used when deciding that an EV reached its target.
pub const SOC_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum DomainError {
    #[error("invalid time grid: {0}")]
    InvalidGrid(String),
    #[error("EV {ev_id}: invalid {field}: {reason}")]
    InvalidProfile {
        ev_id: u32,
        field: &'static str,
        reason: String,
    },
    #[error("duplicate EV id {0}")]
    DuplicateId(u32),
    #[error("invalid clock time {0:?} (expected HH:MM)")]
    InvalidClock(String),
    #[error("slot {slot} outside grid 1..={num_slots}")]
    SlotOutOfRange { slot: usize, num_slots: usize },
    #[error("scenario I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("scenario JSON: {0}")]
    Json(#[from] serde_json::Error),
}

/// Wall-clock time of day with minute resolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ClockTime {
    minutes: u32,
}

impl ClockTime {
    pub fn new(hour: u32, minute: u32) -> Result<Self, DomainError> {
        if hour > 23 || minute > 59 {
            return Err(DomainError::InvalidClock(format!("{hour:02}:{minute:02}")));
        }
        Ok(Self {
            minutes: hour * 60 + minute,
        })
    }

    pub fn from_minutes(minutes: u32) -> Self {
        Self {
            minutes: minutes % 1440,
        }
    }

    pub fn minutes(self) -> u32 {
        self.minutes
    }

    pub fn hour(self) -> u32 {
        self.minutes / 60
    }

    pub fn minute(self) -> u32 {
        self.minutes % 60
    }
}

impl fmt::Display for ClockTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:02}:{:02}", self.hour(), self.minute())
    }
}

impl FromStr for ClockTime {
    type Err = DomainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || DomainError::InvalidClock(s.to_string());
        let (h, m) = s.trim().split_once(':').ok_or_else(bad)?;
        let h: u32 = h.parse().map_err(|_| bad())?;
        let m: u32 = m.parse().map_err(|_| bad())?;
        Self::new(h, m).map_err(|_| bad())
    }
}

impl TryFrom<String> for ClockTime {
    type Error = DomainError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<ClockTime> for String {
    fn from(c: ClockTime) -> String {
        c.to_string()
    }
}

/// Discretization of one scheduling day into equal slots, indexed `1..=num_slots`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    /// Number of slots T.
    pub num_slots: usize,
    /// Slot length in hours.
    pub slot_hours: f64,
    /// Wall-clock label of the start of slot 1.
    pub start_clock: ClockTime,
}

impl Default for TimeGrid {
    fn default() -> Self {
        Self {
            num_slots: 96,
            slot_hours: 0.25,
            start_clock: ClockTime::from_minutes(12 * 60),
        }
    }
}

impl TimeGrid {
    pub fn new(
        num_slots: usize,
        slot_hours: f64,
        start_clock: ClockTime,
    ) -> Result<Self, DomainError> {
        let g = Self {
            num_slots,
            slot_hours,
            start_clock,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<(), DomainError> {
        if self.num_slots == 0 {
            return Err(DomainError::InvalidGrid(
                "num_slots must be positive".into(),
            ));
        }
        if !(self.slot_hours.is_finite() && self.slot_hours > 0.0) {
            return Err(DomainError::InvalidGrid(format!(
                "slot_hours must be positive, got {}",
                self.slot_hours
            )));
        }
        Ok(())
    }

    pub fn slot_minutes(&self) -> f64 {
        self.slot_hours * 60.0
    }

    /// Minutes elapsed from the start of slot 1 to `clock`, wrapping past midnight.
    pub fn offset_minutes(&self, clock: ClockTime) -> u32 {
        (clock.minutes() + 1440 - self.start_clock.minutes()) % 1440
    }

    /// Slot (1-based) whose interval contains `clock`, if it falls inside the horizon.
    pub fn slot_containing(&self, clock: ClockTime) -> Option<usize> {
        let slot = (self.offset_minutes(clock) as f64 / self.slot_minutes()).floor() as usize + 1;
        (slot <= self.num_slots).then_some(slot)
    }

    /// Last slot (1-based) that ends no later than `clock`.
    pub fn slot_ending_by(&self, clock: ClockTime) -> Option<usize> {
        let slot =
            (self.offset_minutes(clock) as f64 / self.slot_minutes() + 1e-9).floor() as usize;
        (1..=self.num_slots).contains(&slot).then_some(slot)
    }

    /// Wall-clock label of the start of `slot`.
    pub fn clock_of(&self, slot: usize) -> ClockTime {
        let m = self.start_clock.minutes() as f64 + (slot as f64 - 1.0) * self.slot_minutes();
        ClockTime::from_minutes(m.round() as u32)
    }

    pub fn check_slot(&self, slot: usize) -> Result<(), DomainError> {
        if slot == 0 || slot > self.num_slots {
            return Err(DomainError::SlotOutOfRange {
                slot,
                num_slots: self.num_slots,
            });
        }
        Ok(())
    }
}

/// One EV charging request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvProfile {
    /// Unique identifier within a scenario.
    pub ev_id: u32,
    /// Charging station, 1-based.
    pub station_id: u32,
    /// First slot at which the EV is plugged in.
    pub arrival_slot: usize,
    /// Last slot at which the EV may charge.
    pub deadline_slot: usize,
    /// Battery capacity in kWh.
    pub capacity_kwh: f64,
    /// Maximum charging power in kW.
    pub max_rate_kw: f64,
    /// State of charge at arrival, in [0, 1].
    pub initial_soc: f64,
    /// Required state of charge at departure, in [0, 1].
    pub target_soc: f64,
}

impl EvProfile {
    /// Energy deliverable in one slot at full rate.
    pub fn slot_energy_cap(&self, grid: &TimeGrid) -> f64 {
        self.max_rate_kw * grid.slot_hours
    }

    /// Energy needed to go from the initial to the target SOC.
    pub fn demand_kwh(&self) -> f64 {
        energy_demand(self, self.initial_soc)
    }

    pub fn stay_slots(&self) -> usize {
        self.deadline_slot + 1 - self.arrival_slot
    }

    pub fn is_available(&self, slot: usize) -> bool {
        self.arrival_slot <= slot && slot <= self.deadline_slot
    }

    /// Checks field ranges and that the demand can be met at full rate within the stay.
    pub fn validate(&self, grid: &TimeGrid) -> Result<(), DomainError> {
        let err = |field, reason: String| DomainError::InvalidProfile {
            ev_id: self.ev_id,
            field,
            reason,
        };
        if self.station_id == 0 {
            return Err(err("station_id", "must be >= 1".into()));
        }
        if self.arrival_slot == 0 || self.arrival_slot > grid.num_slots {
            return Err(err(
                "arrival_slot",
                format!("{} outside 1..={}", self.arrival_slot, grid.num_slots),
            ));
        }
        if self.deadline_slot < self.arrival_slot || self.deadline_slot > grid.num_slots {
            return Err(err(
                "deadline_slot",
                format!(
                    "{} outside {}..={}",
                    self.deadline_slot, self.arrival_slot, grid.num_slots
                ),
            ));
        }
        if !(self.capacity_kwh.is_finite() && self.capacity_kwh > 0.0) {
            return Err(err(
                "capacity_kwh",
                format!("must be positive, got {}", self.capacity_kwh),
            ));
        }
        if !(self.max_rate_kw.is_finite() && self.max_rate_kw > 0.0) {
            return Err(err(
                "max_rate_kw",
                format!("must be positive, got {}", self.max_rate_kw),
            ));
        }
        for (field, v) in [
            ("initial_soc", self.initial_soc),
            ("target_soc", self.target_soc),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(err(field, format!("{v} outside [0, 1]")));
            }
        }
        if self.initial_soc > self.target_soc {
            return Err(err(
                "target_soc",
                format!("{} below initial_soc {}", self.target_soc, self.initial_soc),
            ));
        }
        let deliverable = self.slot_energy_cap(grid) * self.stay_slots() as f64;
        if self.demand_kwh() > deliverable + 1e-9 {
            return Err(err(
                "target_soc",
                format!(
                    "demand {:.4} kWh exceeds {:.4} kWh deliverable before the deadline",
                    self.demand_kwh(),
                    deliverable
                ),
            ));
        }
        Ok(())
    }
}

/// Remaining energy needed to lift `ev` from `soc_now` to its target SOC.
pub fn energy_demand(ev: &EvProfile, soc_now: f64) -> f64 {
    ((ev.target_soc - soc_now) * ev.capacity_kwh).max(0.0)
}

/// Binary EV-by-slot presence matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AvailabilityMatrix {
    num_slots: usize,
    rows: Vec<Vec<bool>>,
}

impl AvailabilityMatrix {
    /// Builds rows from inclusive `[first, last]` presence intervals.
    pub fn from_intervals(intervals: &[(usize, usize)], num_slots: usize) -> Self {
        let rows = intervals
            .iter()
            .map(|&(a, b)| (1..=num_slots).map(|t| a <= t && t <= b).collect())
            .collect();
        Self { num_slots, rows }
    }

    pub fn num_evs(&self) -> usize {
        self.rows.len()
    }

    pub fn num_slots(&self) -> usize {
        self.num_slots
    }

    /// Presence of EV row `i` at 1-based `slot`.
    pub fn get(&self, i: usize, slot: usize) -> bool {
        slot >= 1 && slot <= self.num_slots && self.rows[i][slot - 1]
    }

    pub fn row(&self, i: usize) -> &[bool] {
        &self.rows[i]
    }

    pub fn row_sum(&self, i: usize) -> usize {
        self.rows[i].iter().filter(|&&b| b).count()
    }
}

/// Presence matrix from arrival and deadline only (no early departure).
pub fn build_availability(
    evs: &[EvProfile],
    grid: &TimeGrid,
) -> Result<AvailabilityMatrix, DomainError> {
    validate_fleet(evs, grid)?;
    let intervals: Vec<_> = evs
        .iter()
        .map(|e| (e.arrival_slot, e.deadline_slot))
        .collect();
    Ok(AvailabilityMatrix::from_intervals(
        &intervals,
        grid.num_slots,
    ))
}

/// Validates every profile and id uniqueness.
pub fn validate_fleet(evs: &[EvProfile], grid: &TimeGrid) -> Result<(), DomainError> {
    grid.validate()?;
    let mut seen = HashSet::new();
    for ev in evs {
        if !seen.insert(ev.ev_id) {
            return Err(DomainError::DuplicateId(ev.ev_id));
        }
        ev.validate(grid)?;
    }
    Ok(())
}

/// Online state of a fleet during a scheduling run.
#[derive(Debug, Clone, PartialEq)]
pub struct FleetState {
    /// Current SOC of every EV, in scenario order.
    pub soc: Vec<f64>,
    /// Slot being scheduled (1-based); 0 before the run starts.
    pub current_slot: usize,
    /// Ids of EVs plugged in and still charging at `current_slot`.
    pub active_set: Vec<u32>,
    /// Latest deadline among `active_set`.
    pub window_end: Option<usize>,
    /// Slot during which each EV reached its target.
    pub completed_at: Vec<Option<usize>>,
}

impl FleetState {
    pub fn new(evs: &[EvProfile]) -> Self {
        Self {
            soc: evs.iter().map(|e| e.initial_soc).collect(),
            current_slot: 0,
            active_set: Vec::new(),
            window_end: None,
            completed_at: vec![None; evs.len()],
        }
    }

    pub fn is_complete(&self, i: usize, ev: &EvProfile) -> bool {
        self.completed_at[i].is_some() || self.soc[i] >= ev.target_soc - SOC_TOL
    }

    /// Presence matrix with early departure: an EV leaves after the slot in
    /// which it completed, or after its deadline, whichever is earlier.
    pub fn availability(&self, evs: &[EvProfile], grid: &TimeGrid) -> AvailabilityMatrix {
        let intervals: Vec<_> = evs
            .iter()
            .zip(&self.completed_at)
            .map(|(e, c)| {
                (
                    e.arrival_slot,
                    c.map_or(e.deadline_slot, |c| c.min(e.deadline_slot)),
                )
            })
            .collect();
        AvailabilityMatrix::from_intervals(&intervals, grid.num_slots)
    }
}

/// Indices (scenario order) of EVs present and uncompleted at slot `t`.
pub fn active_indices(evs: &[EvProfile], state: &FleetState, t: usize) -> Vec<usize> {
    evs.iter()
        .enumerate()
        .filter(|(i, e)| e.is_available(t) && !state.is_complete(*i, e))
        .map(|(i, _)| i)
        .collect()
}

/// Active set H_t and look-ahead window `t..=max deadline`.
///
/// The window is empty when no EV is active.
pub fn active_window(
    evs: &[EvProfile],
    state: &FleetState,
    t: usize,
) -> (Vec<u32>, RangeInclusive<usize>) {
    let idx = active_indices(evs, state, t);
    let end = idx.iter().map(|&i| evs[i].deadline_slot).max();
    let ids = idx.iter().map(|&i| evs[i].ev_id).collect();
    match end {
        Some(end) => (ids, t..=end),
        None => (ids, t..=t - 1),
    }
}

/// A complete scheduling problem: grid, tariff and EV requests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub grid: TimeGrid,
    #[serde(default)]
    pub tariff: TariffParams,
    pub num_stations: u32,
    pub evs: Vec<EvProfile>,
}

impl Scenario {
    pub fn validate(&self) -> Result<(), DomainError> {
        validate_fleet(&self.evs, &self.grid)?;
        for ev in &self.evs {
            if ev.station_id > self.num_stations {
                return Err(DomainError::InvalidProfile {
                    ev_id: ev.ev_id,
                    field: "station_id",
                    reason: format!(
                        "{} exceeds num_stations {}",
                        ev.station_id, self.num_stations
                    ),
                });
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, DomainError> {
        let text = std::fs::read_to_string(path)?;
        let s: Scenario = serde_json::from_str(&text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn save(&self, path: &Path) -> Result<(), DomainError> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(id: u32, a: usize, r: usize) -> EvProfile {
        EvProfile {
            ev_id: id,
            station_id: 1,
            arrival_slot: a,
            deadline_slot: r,
            capacity_kwh: 30.0,
            max_rate_kw: 6.6,
            initial_soc: 0.2,
            target_soc: 0.3,
        }
    }

    fn grid(t: usize) -> TimeGrid {
        TimeGrid {
            num_slots: t,
            ..TimeGrid::default()
        }
    }

    #[test]
    fn availability_row_matches_interval() {
        let m = build_availability(&[ev(4, 3, 7)], &grid(8)).unwrap();
        let row: Vec<u8> = m.row(0).iter().map(|&b| b as u8).collect();
        assert_eq!(row, vec![0, 0, 1, 1, 1, 1, 1, 0]);
        assert_eq!(m.row_sum(0), 5);
    }

    #[test]
    fn availability_single_slot_and_full_horizon() {
        let mut short = ev(1, 4, 4);
        short.target_soc = 0.25;
        let m = build_availability(&[short, ev(2, 1, 8)], &grid(8)).unwrap();
        assert_eq!(m.row_sum(0), 1);
        assert!(m.get(0, 4));
        assert_eq!(m.row_sum(1), 8);
    }

    #[test]
    fn availability_rejects_deadline_before_arrival() {
        let err = build_availability(&[ev(1, 5, 4)], &grid(8)).unwrap_err();
        assert!(matches!(
            err,
            DomainError::InvalidProfile {
                field: "deadline_slot",
                ..
            }
        ));
    }

    #[test]
    fn availability_rejects_slots_past_horizon() {
        assert!(build_availability(&[ev(1, 2, 9)], &grid(8)).is_err());
        assert!(build_availability(&[ev(1, 0, 3)], &grid(8)).is_err());
    }

    #[test]
    fn availability_rejects_duplicate_ids() {
        let err = build_availability(&[ev(1, 1, 3), ev(1, 2, 4)], &grid(8)).unwrap_err();
        assert!(matches!(err, DomainError::DuplicateId(1)));
    }

    #[test]
    fn infeasible_demand_is_rejected() {
        let mut e = ev(1, 1, 1);
        e.initial_soc = 0.0;
        e.target_soc = 1.0;
        let err = e.validate(&grid(8)).unwrap_err();
        assert!(matches!(
            err,
            DomainError::InvalidProfile {
                field: "target_soc",
                ..
            }
        ));
    }

    #[test]
    fn active_window_of_three_present_evs() {
        // EV 1 already left; EVs 2, 3, 4 plugged in at slot 3.
        let evs = vec![ev(1, 1, 2), ev(2, 1, 5), ev(3, 2, 6), ev(4, 3, 7)];
        let state = FleetState::new(&evs);
        let (ids, w) = active_window(&evs, &state, 3);
        assert_eq!(ids, vec![2, 3, 4]);
        assert_eq!(w, 3..=7);
    }

    #[test]
    fn active_window_excludes_completed_evs() {
        let evs = vec![ev(1, 1, 6), ev(2, 1, 5)];
        let mut state = FleetState::new(&evs);
        state.soc[1] = evs[1].target_soc;
        let (ids, w) = active_window(&evs, &state, 2);
        assert_eq!(ids, vec![1]);
        assert_eq!(w, 2..=6);
    }

    #[test]
    fn active_window_empty_past_all_deadlines() {
        let evs = vec![ev(1, 1, 2)];
        let state = FleetState::new(&evs);
        let (ids, w) = active_window(&evs, &state, 5);
        assert!(ids.is_empty());
        assert!(w.is_empty());
    }

    #[test]
    fn early_departure_shortens_presence() {
        let evs = vec![ev(1, 2, 7)];
        let mut state = FleetState::new(&evs);
        state.completed_at[0] = Some(4);
        let m = state.availability(&evs, &grid(8));
        assert_eq!(m.row_sum(0), 3);
        assert!(!m.get(0, 5));
    }

    #[test]
    fn energy_demand_clamps_at_zero() {
        let e = ev(1, 1, 4);
        assert!((energy_demand(&e, 0.1) - 6.0).abs() < 1e-12);
        assert_eq!(energy_demand(&e, 0.5), 0.0);
    }

    #[test]
    fn clock_slots_for_default_grid() {
        let g = TimeGrid::default();
        assert_eq!(g.slot_containing("12:00".parse().unwrap()), Some(1));
        assert_eq!(g.slot_containing("18:00".parse().unwrap()), Some(25));
        assert_eq!(g.slot_containing("03:59".parse().unwrap()), Some(64));
        assert_eq!(g.slot_ending_by("07:00".parse().unwrap()), Some(76));
        assert_eq!(g.clock_of(25).to_string(), "18:00");
    }

    #[test]
    fn clock_parse_rejects_garbage() {
        assert!("25:00".parse::<ClockTime>().is_err());
        assert!("1200".parse::<ClockTime>().is_err());
    }

    #[test]
    fn scenario_json_round_trip() {
        let s = Scenario {
            grid: grid(8),
            tariff: TariffParams::default(),
            num_stations: 2,
            evs: vec![ev(1, 1, 4), ev(2, 2, 8)],
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.json");
        s.save(&path).unwrap();
        assert_eq!(Scenario::load(&path).unwrap(), s);
    }
}
