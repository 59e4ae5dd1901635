//! Synthetic daily base-load series for tests and generated scenarios.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::domain::TimeGrid;

/// Normalized demand shape by hour of day, evening peak at 19:00.
const HOURLY_SHAPE: [f64; 24] = [
    0.74, 0.68, 0.63, 0.60, 0.58, 0.60, 0.68, 0.80, 0.88, 0.90, 0.89, 0.89, 0.90, 0.87, 0.84, 0.82,
    0.83, 0.90, 0.98, 1.00, 0.96, 0.90, 0.86, 0.80,
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticLoadParams {
    /// Peak of the daily shape, kW.
    pub peak_kw: f64,
    /// Marginal standard deviation of the intraday noise, as a fraction of the peak.
    pub noise: f64,
    /// Lag-one autocorrelation of the intraday noise.
    pub noise_ar: f64,
    /// Relative level change per day.
    pub daily_trend: f64,
    /// Standard deviation of the day-level fluctuation, as a fraction of the level.
    pub day_level_sd: f64,
}

impl Default for SyntheticLoadParams {
    fn default() -> Self {
        Self {
            peak_kw: 100.0,
            noise: 0.02,
            noise_ar: 0.8,
            daily_trend: 0.004,
            day_level_sd: 0.01,
        }
    }
}

impl SyntheticLoadParams {
    /// Fixed daily shape plus independent noise with standard deviation `noise * peak_kw`.
    pub fn seasonal_plus_noise(peak_kw: f64, noise: f64) -> Self {
        Self {
            peak_kw,
            noise,
            noise_ar: 0.0,
            daily_trend: 0.0,
            day_level_sd: 0.0,
        }
    }
}

/// Shape value at `hour` in [0, 24), linearly interpolated between hours.
pub fn daily_shape(hour: f64) -> f64 {
    let h = hour.rem_euclid(24.0);
    let i = h.floor() as usize % 24;
    let f = h - h.floor();
    HOURLY_SHAPE[i] * (1.0 - f) + HOURLY_SHAPE[(i + 1) % 24] * f
}

/// Mean power per slot (kW) over `days` grid-aligned days, starting at the grid's start clock.
pub fn synthetic_load_kw(
    grid: &TimeGrid,
    days: usize,
    params: &SyntheticLoadParams,
    rng: &mut impl Rng,
) -> Vec<f64> {
    let t = grid.num_slots;
    let sd = params.noise * params.peak_kw;
    let innov = sd * (1.0 - params.noise_ar * params.noise_ar).sqrt();
    let mut noise = sd * rng.sample::<f64, _>(StandardNormal);
    let mut level_dev = 0.0;
    let mut out = Vec::with_capacity(days * t);
    for d in 0..days {
        level_dev =
            0.7 * level_dev + params.day_level_sd * 0.714 * rng.sample::<f64, _>(StandardNormal);
        let level = 1.0 + params.daily_trend * d as f64 + level_dev;
        for k in 0..t {
            let minutes =
                grid.start_clock.minutes() as f64 + (k as f64 + 0.5) * grid.slot_minutes();
            let shape = daily_shape(minutes / 60.0);
            noise = params.noise_ar * noise + innov * rng.sample::<f64, _>(StandardNormal);
            out.push((params.peak_kw * level * shape + noise).max(0.0));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn shape_peaks_in_the_evening() {
        assert_eq!(daily_shape(19.0), 1.0);
        assert!(daily_shape(4.0) < daily_shape(12.0));
        assert!((daily_shape(23.5) - 0.77).abs() < 1e-12);
    }

    #[test]
    fn series_is_reproducible_and_non_negative() {
        let g = TimeGrid::default();
        let p = SyntheticLoadParams::default();
        let a = synthetic_load_kw(&g, 3, &p, &mut stream(1, "load"));
        let b = synthetic_load_kw(&g, 3, &p, &mut stream(1, "load"));
        assert_eq!(a, b);
        assert_eq!(a.len(), 288);
        assert!(a.iter().all(|&v| v >= 0.0));
    }
}
