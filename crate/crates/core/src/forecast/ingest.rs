//! Base-load history from CSV (`timestamp,load_kw`) resampled onto the slot grid.

use std::io::Read;
use std::path::Path;

use chrono::{DateTime, Duration, NaiveDateTime, Timelike};
use thiserror::Error;

use crate::domain::TimeGrid;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("line {line}: {reason}")]
    Row { line: u64, reason: String },
    #[error("gap of {slots} slots between {from} and {to}")]
    Gap {
        slots: i64,
        from: NaiveDateTime,
        to: NaiveDateTime,
    },
    #[error("no data rows")]
    Empty,
    #[error("need {need} slots starting at {clock} for one day, series has {have} slots")]
    NoFullDay {
        need: usize,
        have: usize,
        clock: String,
    },
}

/// Energy per slot (kWh) on a regular grid.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadHistory {
    /// Start of the first slot.
    pub start: NaiveDateTime,
    pub slot_hours: f64,
    pub energy: Vec<f64>,
}

fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    let s = s.trim();
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(dt.naive_local());
    }
    [
        "%Y-%m-%dT%H:%M:%S",
        "%Y-%m-%d %H:%M:%S",
        "%Y-%m-%dT%H:%M",
        "%Y-%m-%d %H:%M",
    ]
    .iter()
    .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
}

impl LoadHistory {
    /// Reads `timestamp,load_kw` rows, averages power per slot and converts to kWh.
    ///
    /// A single missing slot is filled by linear interpolation; longer gaps are errors.
    pub fn from_reader(reader: impl Read, grid: &TimeGrid) -> Result<Self, IngestError> {
        let slot_secs = (grid.slot_hours * 3600.0).round() as i64;
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut rows: Vec<(NaiveDateTime, f64)> = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let line = rec.position().map_or(0, |p| p.line());
            let bad = |reason: String| IngestError::Row { line, reason };
            let ts = rec.get(0).ok_or_else(|| bad("missing timestamp".into()))?;
            let ts =
                parse_timestamp(ts).ok_or_else(|| bad(format!("unparseable timestamp {ts:?}")))?;
            let kw = rec.get(1).ok_or_else(|| bad("missing load_kw".into()))?;
            let kw: f64 = kw
                .parse()
                .map_err(|_| bad(format!("unparseable load {kw:?}")))?;
            if !(kw.is_finite() && kw >= 0.0) {
                return Err(bad(format!("load {kw} must be finite and non-negative")));
            }
            if let Some(&(prev, _)) = rows.last() {
                if ts < prev {
                    return Err(bad(format!("timestamp {ts} earlier than {prev}")));
                }
            }
            rows.push((ts, kw));
        }
        let first = rows.first().ok_or(IngestError::Empty)?.0;
        let midnight = first.date().and_hms_opt(0, 0, 0).expect("valid midnight");
        let into_day = (first - midnight).num_seconds();
        let start = midnight + Duration::seconds(into_day - into_day % slot_secs);

        let bucket = |ts: NaiveDateTime| ((ts - start).num_seconds() / slot_secs) as usize;
        let n = bucket(rows.last().expect("non-empty").0) + 1;
        let mut sum = vec![0.0; n];
        let mut count = vec![0usize; n];
        for &(ts, kw) in &rows {
            let b = bucket(ts);
            sum[b] += kw;
            count[b] += 1;
        }
        let mut kw: Vec<Option<f64>> = sum
            .iter()
            .zip(&count)
            .map(|(s, &c)| (c > 0).then(|| s / c as f64))
            .collect();
        let at = |k: usize| start + Duration::seconds(k as i64 * slot_secs);
        let mut k = 0;
        while k < n {
            if kw[k].is_some() {
                k += 1;
                continue;
            }
            let gap_end = (k..n)
                .find(|&j| kw[j].is_some())
                .expect("last bucket is filled");
            if gap_end - k > 1 {
                return Err(IngestError::Gap {
                    slots: (gap_end - k) as i64,
                    from: at(k - 1),
                    to: at(gap_end),
                });
            }
            kw[k] = Some(0.5 * (kw[k - 1].expect("filled") + kw[k + 1].expect("filled")));
            k = gap_end;
        }
        Ok(Self {
            start,
            slot_hours: grid.slot_hours,
            energy: kw
                .into_iter()
                .map(|v| v.expect("filled") * grid.slot_hours)
                .collect(),
        })
    }

    pub fn from_path(path: &Path, grid: &TimeGrid) -> Result<Self, IngestError> {
        Self::from_reader(std::fs::File::open(path)?, grid)
    }

    pub fn timestamp(&self, k: usize) -> NaiveDateTime {
        self.start + Duration::seconds((k as f64 * self.slot_hours * 3600.0).round() as i64)
    }

    /// Splits into (history, day) where day is the last full grid day starting at
    /// the grid's start clock.
    pub fn split_last_day(&self, grid: &TimeGrid) -> Result<(Vec<f64>, Vec<f64>), IngestError> {
        let t = grid.num_slots;
        let clock = grid.start_clock.minutes();
        let found = (0..self.energy.len().saturating_sub(t - 1))
            .rev()
            .find(|&k| {
                let ts = self.timestamp(k);
                ts.hour() * 60 + ts.minute() == clock
            });
        let Some(k) = found else {
            return Err(IngestError::NoFullDay {
                need: t,
                have: self.energy.len(),
                clock: grid.start_clock.to_string(),
            });
        };
        Ok((self.energy[..k].to_vec(), self.energy[k..k + t].to_vec()))
    }
}

/// Writes mean power per slot as `timestamp,load_kw` rows.
pub fn write_load_csv(
    path: &Path,
    start: NaiveDateTime,
    slot_hours: f64,
    kw: &[f64],
) -> Result<(), IngestError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["timestamp", "load_kw"])?;
    for (k, v) in kw.iter().enumerate() {
        let ts = start + Duration::seconds((k as f64 * slot_hours * 3600.0).round() as i64);
        w.write_record([
            ts.format("%Y-%m-%dT%H:%M:%S").to_string(),
            format!("{v:.6}"),
        ])?;
    }
    w.flush()?;
    Ok(())
}
