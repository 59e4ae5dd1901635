//! Base-load forecasting: seasonal ARIMA, a same-slot average of previous
//! days, and an oracle that replays the actual series.

pub mod arima;
pub mod ingest;
pub mod metrics;
pub mod synthetic;

use thiserror::Error;

pub use arima::{difference, fit_arima, forecast, integrate, ArimaModel, ArimaOrders};
pub use metrics::{ape, mape, previous_days_average};

#[derive(Debug, Error, PartialEq)]
pub enum ForecastError {
    #[error("insufficient history: {have} points, need more than {need}")]
    InsufficientHistory { have: usize, need: usize },
    #[error("invalid orders: {0}")]
    InvalidOrders(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("oracle series exhausted: asked for {want} points after {have}")]
    OracleExhausted { have: usize, want: usize },
}

/// Default number of past days averaged by [`PrevAvgForecaster`].
pub const DEFAULT_PREVAVG_DAYS: usize = 2;

/// Forecaster selection, built against a concrete history.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ForecasterKind {
    Arima(ArimaOrders),
    PrevAvg { num_days: usize },
    Oracle,
}

impl ForecasterKind {
    pub fn name(&self) -> &'static str {
        match self {
            ForecasterKind::Arima(_) => "arima",
            ForecasterKind::PrevAvg { .. } => "prevavg",
            ForecasterKind::Oracle => "oracle",
        }
    }

    /// Fits or prepares the forecaster. `future` is only read by the oracle.
    pub fn build(
        &self,
        history: &[f64],
        future: &[f64],
        season: usize,
    ) -> Result<Box<dyn Forecaster>, ForecastError> {
        Ok(match *self {
            ForecasterKind::Arima(orders) => Box::new(ArimaForecaster {
                model: fit_arima(history, orders)?,
            }),
            ForecasterKind::PrevAvg { num_days } => {
                Box::new(PrevAvgForecaster { num_days, season })
            }
            ForecasterKind::Oracle => {
                let mut series = history.to_vec();
                series.extend_from_slice(future);
                Box::new(OracleForecaster::new(series))
            }
        })
    }
}

/// Predicts the next `horizon` values of a series from its observed prefix.
pub trait Forecaster {
    fn name(&self) -> &str;

    fn forecast(&self, observed: &[f64], horizon: usize) -> Result<Vec<f64>, ForecastError>;
}

/// Returns the actual continuation of a known series.
#[derive(Debug, Clone)]
pub struct OracleForecaster {
    series: Vec<f64>,
}

impl OracleForecaster {
    /// `series` is the full series whose prefixes will be passed as `observed`.
    pub fn new(series: Vec<f64>) -> Self {
        Self { series }
    }
}

impl Forecaster for OracleForecaster {
    fn name(&self) -> &str {
        "oracle"
    }

    fn forecast(&self, observed: &[f64], horizon: usize) -> Result<Vec<f64>, ForecastError> {
        let start = observed.len();
        self.series
            .get(start..start + horizon)
            .map(<[f64]>::to_vec)
            .ok_or(ForecastError::OracleExhausted {
                have: start,
                want: horizon,
            })
    }
}

/// Same-slot mean over the last `num_days` seasons.
#[derive(Debug, Clone)]
pub struct PrevAvgForecaster {
    pub num_days: usize,
    pub season: usize,
}

impl Forecaster for PrevAvgForecaster {
    fn name(&self) -> &str {
        "prevavg"
    }

    fn forecast(&self, observed: &[f64], horizon: usize) -> Result<Vec<f64>, ForecastError> {
        metrics::seasonal_average_ahead(observed, self.num_days, self.season, horizon)
    }
}

/// Seasonal ARIMA with parameters fitted once, applied to each observed prefix.
#[derive(Debug, Clone)]
pub struct ArimaForecaster {
    pub model: ArimaModel,
}

impl Forecaster for ArimaForecaster {
    fn name(&self) -> &str {
        "arima"
    }

    fn forecast(&self, observed: &[f64], horizon: usize) -> Result<Vec<f64>, ForecastError> {
        forecast(&self.model, observed, horizon)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oracle_replays_future() {
        let o = OracleForecaster::new(vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(o.forecast(&[1.0], 2).unwrap(), vec![2.0, 3.0]);
        assert!(o.forecast(&[1.0, 2.0, 3.0], 2).is_err());
    }
}
