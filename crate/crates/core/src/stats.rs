//! Small statistics helpers for the experiment harness.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

pub fn mean(x: &[f64]) -> f64 {
    if x.is_empty() {
        return f64::NAN;
    }
    x.iter().sum::<f64>() / x.len() as f64
}

/// Percentile interval of the bootstrap distribution of the mean.
pub fn bootstrap_mean_ci(x: &[f64], resamples: usize, level: f64, seed: u64) -> Result<(f64, f64)> {
    if x.is_empty() {
        return Err(Error::param("bootstrap needs at least one sample"));
    }
    if resamples == 0 || !(level > 0.0 && level < 1.0) {
        return Err(Error::param("bootstrap needs resamples >= 1 and level in (0, 1)"));
    }
    let mut s = rng::stream(seed, &[rng::domain::BOOTSTRAP]);
    let n = x.len();
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| (0..n).map(|_| x[s.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let alpha = (1.0 - level) / 2.0;
    Ok((quantile_sorted(&means, alpha), quantile_sorted(&means, 1.0 - alpha)))
}

/// Linear-interpolated quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let pos = p.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolyFit {
    /// Coefficients in increasing degree.
    pub coefficients: Vec<f64>,
    pub r2: f64,
}

impl PolyFit {
    pub fn eval(&self, x: f64) -> f64 {
        self.coefficients.iter().rev().fold(0.0, |acc, c| acc * x + c)
    }
}

/// Least-squares polynomial fit of the given degree.
pub fn polyfit(x: &[f64], y: &[f64], degree: usize) -> Result<PolyFit> {
    if x.len() != y.len() {
        return Err(Error::dim("polyfit", x.len(), y.len()));
    }
    if x.len() <= degree {
        return Err(Error::param(format!(
            "degree {degree} fit needs more than {degree} points, got {}",
            x.len()
        )));
    }
    let a = DMatrix::from_fn(x.len(), degree + 1, |i, j| x[i].powi(j as i32));
    let b = DVector::from_column_slice(y);
    let svd = a.clone().svd(true, true);
    let coef = svd
        .solve(&b, 1e-12)
        .map_err(|e| Error::param(format!("polyfit: {e}")))?;
    let fit = PolyFit {
        coefficients: coef.iter().copied().collect(),
        r2: 0.0,
    };
    let ybar = mean(y);
    let ss_tot: f64 = y.iter().map(|v| (v - ybar).powi(2)).sum();
    let ss_res: f64 = x.iter().zip(y).map(|(xi, yi)| (yi - fit.eval(*xi)).powi(2)).sum();
    let r2 = if ss_tot == 0.0 {
        if ss_res == 0.0 { 1.0 } else { 0.0 }
    } else {
        1.0 - ss_res / ss_tot
    };
    Ok(PolyFit { r2, ..fit })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<LinearFit> {
    let p = polyfit(x, y, 1)?;
    Ok(LinearFit {
        slope: p.coefficients[1],
        intercept: p.coefficients[0],
        r2: p.r2,
    })
}

/// First `x` at which the piecewise-linear curve through `(xs, ys)` drops
/// below `threshold` and stays there for the rest of the grid.
///
/// `None` if the last point is still at or above the threshold. If the
/// first point is already below, returns the first `x`.
pub fn threshold_crossing(xs: &[f64], ys: &[f64], threshold: f64) -> Option<f64> {
    if xs.is_empty() || xs.len() != ys.len() || ys[ys.len() - 1] >= threshold {
        return None;
    }
    let last_above = ys.iter().rposition(|&y| y >= threshold);
    match last_above {
        None => Some(xs[0]),
        Some(i) => {
            let (x0, x1, y0, y1) = (xs[i], xs[i + 1], ys[i], ys[i + 1]);
            Some(x0 + (y0 - threshold) / (y0 - y1) * (x1 - x0))
        }
    }
}
