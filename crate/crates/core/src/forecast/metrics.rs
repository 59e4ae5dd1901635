//! Forecast error measures and the previous-days average benchmark.

use super::ForecastError;

fn peak(actual: &[f64]) -> Result<f64, ForecastError> {
    let max = actual.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(max > 0.0) {
        return Err(ForecastError::InvalidInput(format!(
            "peak of actual series must be positive, got {max}"
        )));
    }
    Ok(max)
}

/// Signed error of one forecast, relative to the peak of the actual series.
pub fn ape(forecast: f64, actual: f64, max_actual: f64) -> Result<f64, ForecastError> {
    if !(max_actual > 0.0) {
        return Err(ForecastError::InvalidInput(format!(
            "peak of actual series must be positive, got {max_actual}"
        )));
    }
    Ok((forecast - actual) / max_actual)
}

/// Mean absolute error relative to the peak of `actual`, in percent.
pub fn mape(forecast: &[f64], actual: &[f64]) -> Result<f64, ForecastError> {
    if forecast.len() != actual.len() || actual.is_empty() {
        return Err(ForecastError::InvalidInput(format!(
            "forecast has {} points, actual {}",
            forecast.len(),
            actual.len()
        )));
    }
    let max = peak(actual)?;
    let sum: f64 = forecast
        .iter()
        .zip(actual)
        .map(|(f, a)| ((f - a) / max).abs())
        .sum();
    Ok(100.0 * sum / actual.len() as f64)
}

/// Next season predicted as the slot-wise mean of the last `num_days` seasons.
pub fn previous_days_average(
    history: &[f64],
    num_days: usize,
    season: usize,
) -> Result<Vec<f64>, ForecastError> {
    seasonal_average_ahead(history, num_days, season, season)
}

/// `horizon` values ahead, each the mean of the same slot in the previous
/// `num_days` seasons; predictions feed later steps when the horizon exceeds a season.
pub fn seasonal_average_ahead(
    observed: &[f64],
    num_days: usize,
    season: usize,
    horizon: usize,
) -> Result<Vec<f64>, ForecastError> {
    if num_days == 0 || season == 0 {
        return Err(ForecastError::InvalidInput(
            "num_days and season must be positive".into(),
        ));
    }
    let n = observed.len();
    if n < num_days * season {
        return Err(ForecastError::InsufficientHistory {
            have: n,
            need: num_days * season - 1,
        });
    }
    let mut out: Vec<f64> = Vec::with_capacity(horizon);
    for j in 0..horizon {
        let p = n + j;
        let sum: f64 = (1..=num_days)
            .map(|d| {
                let q = p - d * season;
                if q < n {
                    observed[q]
                } else {
                    out[q - n]
                }
            })
            .sum();
        out.push(sum / num_days as f64);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ape_example() {
        assert!((ape(12.0, 10.0, 10.0).unwrap() - 0.2).abs() < 1e-15);
        assert!(ape(1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn mape_example() {
        let m = mape(&[12.0, 18.0], &[10.0, 20.0]).unwrap();
        assert!((m - 10.0).abs() < 1e-12);
    }

    #[test]
    fn mape_rejects_mismatch_and_flat_zero() {
        assert!(mape(&[1.0], &[1.0, 2.0]).is_err());
        assert!(mape(&[1.0, 1.0], &[0.0, 0.0]).is_err());
    }

    #[test]
    fn prevavg_example() {
        assert_eq!(
            previous_days_average(&[1.0, 2.0, 3.0, 4.0], 2, 2).unwrap(),
            vec![2.0, 3.0]
        );
    }

    #[test]
    fn prevavg_needs_enough_days() {
        assert!(matches!(
            previous_days_average(&[1.0, 2.0, 3.0], 2, 2),
            Err(ForecastError::InsufficientHistory { .. })
        ));
    }

    #[test]
    fn seasonal_average_beyond_one_season_reuses_predictions() {
        let f = seasonal_average_ahead(&[1.0, 2.0, 3.0, 4.0], 1, 2, 4).unwrap();
        assert_eq!(f, vec![3.0, 4.0, 3.0, 4.0]);
    }
}
