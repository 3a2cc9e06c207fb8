//! Success map of the adaptive evolution-time chooser over the starting
//! guess `Γτ0` and the number of walk steps.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{columns, fmt_f64, ExperimentConfig, ExperimentKind, Report};
use crate::error::Result;
use crate::rng::{self, domain};
use crate::spectroscopy::{walk_steps, walk_trials, WalkTable, WALK_CLAMP_MARGIN, WALK_MU};
use crate::stats::{linear_fit, LinearFit};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChooserColumn {
    pub log2_gamma_tau0: i32,
    /// `success[N − 1]`: fraction of repetitions with `½ < Γt̂ < 2` when the
    /// walks stop after `N` steps.
    pub success: Vec<f64>,
    /// Fewest steps from which success stays at or above the target.
    pub boundary: Option<usize>,
    /// Steps where success falls below its running maximum by more than
    /// three binomial standard errors.
    pub monotone_violations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChooserMap {
    pub n_steps: usize,
    pub n_trials: u64,
    pub repetitions: usize,
    pub target: f64,
    pub columns: Vec<ChooserColumn>,
    /// Boundary against `|log₂ Γτ0|` over all columns with a boundary.
    pub boundary_fit: Option<LinearFit>,
    /// Separate fits for `Γτ0 ≤ 1` and `Γτ0 ≥ 1`; the walk drifts up and
    /// down at different speeds.
    pub boundary_fit_below: Option<LinearFit>,
    pub boundary_fit_above: Option<LinearFit>,
}

impl ChooserMap {
    pub fn final_success(&self) -> Vec<(i32, f64)> {
        self.columns
            .iter()
            .map(|c| (c.log2_gamma_tau0, *c.success.last().unwrap_or(&0.0)))
            .collect()
    }

    pub fn report(&self) -> Report {
        let mut rows = Vec::new();
        for c in &self.columns {
            for (k, p) in c.success.iter().enumerate() {
                rows.push(vec![c.log2_gamma_tau0.to_string(), (k + 1).to_string(), fmt_f64(*p)]);
            }
        }
        let boundaries: Vec<_> = self.columns.iter().map(|c| (c.log2_gamma_tau0, c.boundary)).collect();
        Report {
            kind: ExperimentKind::TimeChooser,
            columns: columns(&["log2_gamma_tau0", "n_steps", "success"]),
            rows,
            summary: serde_json::json!({
                "n_steps": self.n_steps,
                "n_trials": self.n_trials,
                "repetitions": self.repetitions,
                "target": self.target,
                "boundaries": boundaries,
                "boundary_fit": self.boundary_fit,
                "boundary_fit_below": self.boundary_fit_below,
                "boundary_fit_above": self.boundary_fit_above,
            }),
        }
    }
}

/// Sum over trials of the walk position after each step.
fn walk_sums(table: &WalkTable, n_steps: usize, n_trials: u64, rng: &mut impl Rng) -> Vec<i64> {
    let mut sums = vec![0i64; n_steps];
    for _ in 0..n_trials {
        let mut s = 0i64;
        for acc in sums.iter_mut() {
            s = table.step(s, rng.random::<f64>());
            *acc += s;
        }
    }
    sums
}

fn boundary(success: &[f64], target: f64) -> Option<usize> {
    if *success.last()? < target {
        return None;
    }
    let last_below = success.iter().rposition(|&p| p < target);
    Some(last_below.map_or(1, |i| i + 2))
}

fn violations(success: &[f64], reps: usize) -> usize {
    let tol = 3.0 * 0.5 / (reps as f64).sqrt();
    let mut best = 0.0f64;
    let mut count = 0;
    for &p in success {
        if p < best - tol {
            count += 1;
        }
        best = best.max(p);
    }
    count
}

fn fit(points: &[(f64, f64)]) -> Option<LinearFit> {
    if points.len() < 3 {
        return None;
    }
    let (x, y): (Vec<f64>, Vec<f64>) = points.iter().copied().unzip();
    linear_fit(&x, &y).ok()
}

/// Runs the chooser with `Γ = 1`, `Ω = 0` and `τ0 = 2^k` for each column,
/// recording every prefix length of the walks.
pub fn run_time_chooser_map(cfg: &ExperimentConfig) -> Result<ChooserMap> {
    cfg.validate()?;
    let c = &cfg.chooser;
    let eta = c.eta.unwrap_or(c.h / WALK_MU);
    let n_steps = walk_steps(c.h, eta);
    let n_trials = walk_trials(c.delta, c.epsilon, c.constants)?;
    let clamp = c.h.ceil() as i64 + WALK_CLAMP_MARGIN;
    let ks: Vec<i32> = (c.log2_min..=c.log2_max).collect();
    let tables: Vec<WalkTable> = ks.iter().map(|&k| WalkTable::new(1.0, 0.0, 2f64.powi(k), clamp)).collect();
    let work: Vec<(usize, usize)> = (0..ks.len()).flat_map(|a| (0..c.repetitions).map(move |r| (a, r))).collect();
    let sums: Vec<Vec<i64>> = work
        .par_iter()
        .map(|&(a, r)| {
            let mut s = rng::stream(cfg.seed, &[domain::CHOOSER, a as u64, r as u64]);
            walk_sums(&tables[a], n_steps, n_trials, &mut s)
        })
        .collect();
    let columns: Vec<ChooserColumn> = ks
        .iter()
        .enumerate()
        .map(|(a, &k)| {
            let reps = &sums[a * c.repetitions..(a + 1) * c.repetitions];
            let success: Vec<f64> = (0..n_steps)
                .map(|step| {
                    let hits = reps
                        .iter()
                        .filter(|sum| (sum[step] as f64 / n_trials as f64 + f64::from(k)).abs() < 1.0)
                        .count();
                    hits as f64 / c.repetitions as f64
                })
                .collect();
            ChooserColumn {
                log2_gamma_tau0: k,
                boundary: boundary(&success, c.target),
                monotone_violations: violations(&success, c.repetitions),
                success,
            }
        })
        .collect();
    let points = |keep: fn(i32) -> bool| -> Vec<(f64, f64)> {
        columns
            .iter()
            .filter(|col| keep(col.log2_gamma_tau0))
            .filter_map(|col| col.boundary.map(|b| (f64::from(col.log2_gamma_tau0.abs()), b as f64)))
            .collect()
    };
    Ok(ChooserMap {
        n_steps,
        n_trials,
        repetitions: c.repetitions,
        target: c.target,
        boundary_fit: fit(&points(|_| true)),
        boundary_fit_below: fit(&points(|k| k <= 0)),
        boundary_fit_above: fit(&points(|k| k >= 0)),
        columns,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::ChooserConfig;

    #[test]
    fn boundary_rule() {
        assert_eq!(boundary(&[0.1, 0.95, 0.5, 0.92, 1.0], 0.9), Some(4));
        assert_eq!(boundary(&[0.95, 0.95], 0.9), Some(1));
        assert_eq!(boundary(&[0.95, 0.5], 0.9), None);
        assert_eq!(violations(&[0.0, 0.5, 0.45, 0.1, 0.9], 100), 1);
    }

    #[test]
    fn small_map() {
        let cfg = ExperimentConfig {
            kind: ExperimentKind::TimeChooser,
            chooser: ChooserConfig {
                log2_min: -2,
                log2_max: 2,
                repetitions: 20,
                delta: 0.5,
                epsilon: 0.1,
                ..ChooserConfig::default()
            },
            ..ExperimentConfig::default()
        };
        let map = run_time_chooser_map(&cfg).unwrap();
        assert_eq!(map.columns.len(), 5);
        assert_eq!(map.n_steps, 178);
        let center = &map.columns[2];
        assert_eq!(center.log2_gamma_tau0, 0);
        assert!(*center.success.last().unwrap() >= 0.9);
        assert_eq!(map.report().rows.len(), 5 * 178);
        assert_eq!(map, run_time_chooser_map(&cfg).unwrap());
    }
}
