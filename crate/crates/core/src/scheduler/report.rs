use std::fmt;
use std::io::Write;

use super::{ChargingSchedule, Method};

pub const SLOTS_SCHEMA: &str = "# evsched slots v1";
pub const SCHEDULE_SCHEMA: &str = "# evsched schedule v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotStatus {
    /// No EV was plugged in.
    Idle,
    Solved,
    /// Solved for the arrival-order fleet, whose state could not follow the
    /// deadline-order plan.
    Replanned,
    /// The solver stopped early and its best iterate was used.
    BestIterate,
    /// The method does not plan.
    Unplanned,
}

impl fmt::Display for SlotStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SlotStatus::Idle => "idle",
            SlotStatus::Solved => "solved",
            SlotStatus::Replanned => "replanned",
            SlotStatus::BestIterate => "best_iterate",
            SlotStatus::Unplanned => "unplanned",
        })
    }
}

/// Diagnostics of one slot.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotRecord {
    pub slot: usize,
    /// Actual base load, kWh.
    pub base: f64,
    /// Forecast of this slot's base load made before it was observed.
    pub forecast_base: f64,
    /// Planned total load for this slot.
    pub z_star: f64,
    /// Energy allocated to EVs in this slot.
    pub energy: f64,
    pub num_active: usize,
    pub num_charging: usize,
    pub iterations: usize,
    pub status: SlotStatus,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub method: Method,
    pub slots: Vec<SlotRecord>,
    pub warnings: Vec<String>,
}

impl RunReport {
    pub fn new(method: Method) -> Self {
        Self {
            method,
            slots: Vec::new(),
            warnings: Vec::new(),
        }
    }

    pub fn warn(&mut self, msg: String) {
        log::warn!("{}: {msg}", self.method);
        self.warnings.push(msg);
    }

    /// Slots where the planner fell back to a non-converged iterate.
    pub fn solver_fallbacks(&self) -> usize {
        self.slots
            .iter()
            .filter(|s| s.status == SlotStatus::BestIterate)
            .count()
    }
}

fn csv_err(e: csv::Error) -> std::io::Error {
    std::io::Error::other(e)
}

/// Per-slot diagnostics as CSV, preceded by a schema comment line.
pub fn write_slots_csv(mut out: impl Write, report: &RunReport) -> std::io::Result<()> {
    writeln!(out, "{SLOTS_SCHEMA}")?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "slot",
        "base",
        "forecast_base",
        "z_star",
        "L_t",
        "num_active",
        "num_charging",
        "iterations",
        "status",
    ])
    .map_err(csv_err)?;
    for s in &report.slots {
        w.write_record([
            s.slot.to_string(),
            s.base.to_string(),
            s.forecast_base.to_string(),
            s.z_star.to_string(),
            s.energy.to_string(),
            s.num_active.to_string(),
            s.num_charging.to_string(),
            s.iterations.to_string(),
            s.status.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()
}

/// Energy matrix as CSV: one row per EV, one column per slot, then the
/// completion slot (empty when the EV never finished) and a final `z` row.
pub fn write_schedule_csv(mut out: impl Write, schedule: &ChargingSchedule) -> std::io::Result<()> {
    writeln!(out, "{SCHEDULE_SCHEMA}")?;
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["ev_id".to_string()];
    header.extend((1..=schedule.num_slots()).map(|t| t.to_string()));
    header.push("completed_at".into());
    w.write_record(&header).map_err(csv_err)?;
    for ((id, row), done) in schedule
        .ev_ids
        .iter()
        .zip(&schedule.energy)
        .zip(&schedule.completed_at)
    {
        let mut rec = vec![id.to_string()];
        rec.extend(row.iter().map(f64::to_string));
        rec.push(done.map(|d| d.to_string()).unwrap_or_default());
        w.write_record(&rec).map_err(csv_err)?;
    }
    let mut z = vec!["z".to_string()];
    z.extend(schedule.total_load.iter().map(f64::to_string));
    z.push(String::new());
    w.write_record(&z).map_err(csv_err)?;
    w.flush()
}
