use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::observables::ObservableSeries;

use super::config::in_window;

/// Window average of a series.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowSummary {
    pub mean: f64,
    /// Population SD across realizations of each realization's window mean.
    pub sd: f64,
    pub n_points: usize,
}

/// Least-squares fit of `S = intercept + slope · ln t`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogFit {
    pub slope: f64,
    pub intercept: f64,
    /// Standard error of the slope: SD of the per-realization slopes over
    /// `√K`. Zero for a single realization.
    pub slope_sigma: f64,
    pub n_points: usize,
}

fn window_indices(series: &ObservableSeries, window: [f64; 2]) -> Result<Vec<usize>> {
    let [lo, hi] = window;
    let idx: Vec<usize> = (0..series.times.len())
        .filter(|&i| in_window(series.times[i], lo, hi))
        .collect();
    if idx.is_empty() {
        return Err(Error::InvalidArgument(format!("no samples in window [{lo}, {hi}]")));
    }
    Ok(idx)
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    let k = values.len() as f64;
    let m = values.iter().sum::<f64>() / k;
    let var = values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / k;
    (m, var.sqrt())
}

/// Time average over `window` (inclusive). The mean equals the window
/// average of the ensemble-mean series.
pub fn quasi_steady_summary(series: &ObservableSeries, window: [f64; 2]) -> Result<WindowSummary> {
    let idx = window_indices(series, window)?;
    if series.values.is_empty() {
        return Err(Error::InvalidArgument("series has no realizations".into()));
    }
    let per: Vec<f64> = series
        .values
        .iter()
        .map(|v| idx.iter().map(|&i| v[i]).sum::<f64>() / idx.len() as f64)
        .collect();
    let (mean, sd) = mean_sd(&per);
    Ok(WindowSummary {
        mean,
        sd,
        n_points: idx.len(),
    })
}

fn fit_line(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// Fit the ensemble mean against `ln t` over `window`.
pub fn logfit_entropy(series: &ObservableSeries, window: [f64; 2]) -> Result<LogFit> {
    if !(window[0] > 0.0) {
        return Err(Error::InvalidArgument("log fit window must start after t = 0".into()));
    }
    let idx = window_indices(series, window)?;
    if idx.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "log fit needs at least 3 samples, window has {}",
            idx.len()
        )));
    }
    let x: Vec<f64> = idx.iter().map(|&i| series.times[i].ln()).collect();
    let pick = |v: &[f64]| idx.iter().map(|&i| v[i]).collect::<Vec<_>>();
    let (slope, intercept) = fit_line(&x, &pick(&series.mean));
    let slopes: Vec<f64> = series.values.iter().map(|v| fit_line(&x, &pick(v)).0).collect();
    let slope_sigma = if slopes.len() > 1 {
        mean_sd(&slopes).1 / (slopes.len() as f64).sqrt()
    } else {
        0.0
    };
    Ok(LogFit {
        slope,
        intercept,
        slope_sigma,
        n_points: idx.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evolve::TimeGrid;
    use crate::observables::ensemble_stats;

    fn series(grid: &TimeGrid, f: impl Fn(usize, f64) -> f64, k: usize) -> ObservableSeries {
        let values = (0..k)
            .map(|r| grid.times().iter().map(|&t| f(r, t)).collect())
            .collect();
        ensemble_stats(grid, values).unwrap()
    }

    #[test]
    fn constant_series() {
        let g = TimeGrid::linear(1.0, 101).unwrap();
        let s = series(&g, |_, _| 0.37, 3);
        let q = quasi_steady_summary(&s, [0.25, 1.0]).unwrap();
        assert!((q.mean - 0.37).abs() < 1e-15);
        assert!(q.sd < 1e-15);
        assert_eq!(q.n_points, 76);
        assert!(logfit_entropy(&s, [0.25, 1.0]).unwrap().slope.abs() < 1e-14);
    }

    #[test]
    fn single_point_window() {
        let g = TimeGrid::linear(1.0, 11).unwrap();
        let s = series(&g, |r, t| t * t + r as f64, 2);
        let q = quasi_steady_summary(&s, [0.5, 0.5]).unwrap();
        assert_eq!(q.n_points, 1);
        assert!((q.mean - (0.25 + 0.5)).abs() < 1e-15);
        assert!((q.sd - 0.5).abs() < 1e-15);
    }

    #[test]
    fn empty_window_is_error() {
        let g = TimeGrid::linear(1.0, 11).unwrap();
        let s = series(&g, |_, t| t, 1);
        assert!(quasi_steady_summary(&s, [0.52, 0.58]).is_err());
    }

    #[test]
    fn exact_log_fit() {
        let g = TimeGrid::log(0.01, 1.0, 30).unwrap();
        let s = series(&g, |r, t| 0.3 + r as f64 * 0.01 + 0.125 * t.ln(), 4);
        let fit = logfit_entropy(&s, [0.25, 1.0]).unwrap();
        assert!((fit.slope - 0.125).abs() < 1e-12);
        assert!((fit.intercept - 0.315).abs() < 1e-12);
        assert!(fit.slope_sigma < 1e-12);
    }

    #[test]
    fn log_fit_preconditions() {
        let g = TimeGrid::linear(1.0, 11).unwrap();
        let s = series(&g, |_, t| t, 2);
        assert!(logfit_entropy(&s, [0.0, 1.0]).is_err());
        assert!(logfit_entropy(&s, [0.85, 1.0]).is_err());
        assert!(logfit_entropy(&s, [0.8, 1.0]).is_ok());
    }

    #[test]
    fn slope_sigma_from_spread() {
        let g = TimeGrid::linear(1.0, 11).unwrap();
        let s = series(&g, |r, t| if r == 0 { 0.1 * t.ln() } else { 0.3 * t.ln() }, 2);
        let fit = logfit_entropy(&s, [0.1, 1.0]).unwrap();
        assert!((fit.slope - 0.2).abs() < 1e-12);
        assert!((fit.slope_sigma - 0.1 / 2f64.sqrt()).abs() < 1e-12);
    }
}
