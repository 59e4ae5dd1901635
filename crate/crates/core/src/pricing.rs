//! Load-dependent tariff and charging cost.

use std::ops::Deref;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scheduler::ChargingSchedule;

#[derive(Debug, Error, PartialEq)]
pub enum PricingError {
    #[error("negative load {0}")]
    NegativeLoad(f64),
    #[error("total load {z} below base load {base}")]
    BelowBase { z: f64, base: f64 },
    #[error("invalid tariff: {0}")]
    InvalidTariff(String),
    #[error("schedule covers {schedule} slots but base load has {base}")]
    LengthMismatch { schedule: usize, base: usize },
}

/// Linear price coefficients: price(z) = k0 + k1 z.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TariffParams {
    pub k0: f64,
    pub k1: f64,
}

impl Default for TariffParams {
    fn default() -> Self {
        Self {
            k0: 1e-4,
            k1: 1.2e-4,
        }
    }
}

impl TariffParams {
    pub fn validate(&self) -> Result<(), PricingError> {
        if !(self.k0.is_finite() && self.k0 >= 0.0) {
            return Err(PricingError::InvalidTariff(format!("k0 = {}", self.k0)));
        }
        if !(self.k1.is_finite() && self.k1 > 0.0) {
            return Err(PricingError::InvalidTariff(format!(
                "k1 = {} must be positive",
                self.k1
            )));
        }
        Ok(())
    }
}

/// Per-slot non-EV load in kWh.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadSeries(Vec<f64>);

impl LoadSeries {
    pub fn new(values: Vec<f64>) -> Result<Self, PricingError> {
        if let Some(&v) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(PricingError::NegativeLoad(v));
        }
        Ok(Self(values))
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for LoadSeries {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

const BASE_TOL: f64 = 1e-9;

/// Unit energy price at total load `z`.
pub fn price(z: f64, tariff: &TariffParams) -> Result<f64, PricingError> {
    if !(z >= 0.0) {
        return Err(PricingError::NegativeLoad(z));
    }
    Ok(tariff.k0 + tariff.k1 * z)
}

/// Cost of raising the load of one slot from `base` to `z`: the integral of
/// the price over `[base, z]`.
pub fn slot_cost(z: f64, base: f64, tariff: &TariffParams) -> Result<f64, PricingError> {
    if !(base >= 0.0) {
        return Err(PricingError::NegativeLoad(base));
    }
    if !(z >= base - BASE_TOL * (1.0 + base)) {
        return Err(PricingError::BelowBase { z, base });
    }
    Ok(tariff.k0 * (z - base) + 0.5 * tariff.k1 * (z * z - base * base))
}

/// Total charging cost J1 of a schedule.
pub fn total_cost_j1(
    schedule: &ChargingSchedule,
    base: &[f64],
    tariff: &TariffParams,
) -> Result<f64, PricingError> {
    if schedule.total_load.len() != base.len() {
        return Err(PricingError::LengthMismatch {
            schedule: schedule.total_load.len(),
            base: base.len(),
        });
    }
    schedule
        .total_load
        .iter()
        .zip(base)
        .map(|(&z, &b)| slot_cost(z, b, tariff))
        .sum()
}
