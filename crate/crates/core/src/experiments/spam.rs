//! Ramsey decay curves under random SPAM channels on a small register.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{columns, fmt_f64, ExperimentConfig, ExperimentKind, Report};
use crate::error::{Error, Result};
use crate::noise_model::uvec;
use crate::rng::derive_seed;
use crate::spam::{
    fit_decay_window, nearest_neighbor_model, random_spam_channels, residual_rate_bound, spam_perturbation_norms, SpamSetup,
};
use crate::stats::mean;

/// Fit of one `(Δ, channel seed)` curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpamFit {
    pub delta: f64,
    pub channel: usize,
    pub gamma: f64,
    pub gamma_fit: f64,
    /// `|Γ_fit − Γ| / Γ`.
    pub rel_dev: f64,
    pub eps_s: f64,
    pub eps_m: f64,
    /// Largest `|ΔR/Δt|` between consecutive curve samples.
    pub rdot_fd_max: f64,
    pub rdot_bound: f64,
    pub bound_holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpamCurve {
    pub delta: f64,
    pub channel: usize,
    pub p_tilde: Vec<f64>,
    pub p_noiseless: Vec<f64>,
    pub residual: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpamDeltaSummary {
    pub delta: f64,
    pub mean_rel_dev: f64,
    pub max_rel_dev: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpamRun {
    pub n: usize,
    pub gamma: f64,
    pub times: Vec<f64>,
    pub curves: Vec<SpamCurve>,
    pub fits: Vec<SpamFit>,
    pub per_delta: Vec<SpamDeltaSummary>,
    /// Mean deviation is nondecreasing in `Δ`.
    pub deviation_monotone: bool,
}

impl SpamRun {
    pub fn report(&self) -> Result<Report> {
        let mut rows = Vec::new();
        for c in &self.curves {
            for (k, t) in self.times.iter().enumerate() {
                rows.push(vec![
                    fmt_f64(c.delta),
                    c.channel.to_string(),
                    fmt_f64(*t),
                    fmt_f64(c.p_tilde[k]),
                    fmt_f64(c.p_noiseless[k]),
                    fmt_f64(c.residual[k]),
                ]);
            }
        }
        Ok(Report {
            kind: ExperimentKind::Spam,
            columns: columns(&["delta", "channel", "t", "p_tilde", "p_noiseless", "residual"]),
            rows,
            summary: serde_json::json!({
                "n": self.n,
                "gamma": self.gamma,
                "fits": self.fits,
                "per_delta": self.per_delta,
                "deviation_monotone": self.deviation_monotone,
            }),
        })
    }
}

/// Largest finite-difference slope between consecutive samples.
fn fd_max(times: &[f64], r: &[f64]) -> f64 {
    times
        .windows(2)
        .zip(r.windows(2))
        .map(|(t, r)| ((r[1] - r[0]) / (t[1] - t[0])).abs())
        .fold(0.0, f64::max)
}

pub fn run_spam_experiment(cfg: &ExperimentConfig) -> Result<SpamRun> {
    // Capacity problems surface here, before any simulation.
    cfg.validate()?;
    let c = &cfg.spam;
    let n = c.n;
    let model = nearest_neighbor_model(n, c.gamma0)?;
    let a = c.a.clone().unwrap_or_else(|| vec![0; n]);
    let b = c.b.clone().unwrap_or_else(|| vec![1; n]);
    let (gamma, _) = model.rates_for_bits(&a, &b)?;
    if !(gamma > 0.0) {
        return Err(Error::param("the chosen coherence does not decay"));
    }
    let s = uvec(model.v()).iter().filter(|x| **x != 0.0).count();
    let t_end = c.horizon / gamma;
    let times: Vec<f64> = (0..c.points).map(|k| t_end * k as f64 / (c.points - 1) as f64).collect();
    let cells: Vec<(f64, usize)> = c
        .deltas
        .iter()
        .flat_map(|&d| (0..c.channel_seeds).map(move |k| (d, k)))
        .collect();
    let results = cells
        .par_iter()
        .map(|&(delta, k)| -> Result<(SpamCurve, SpamFit)> {
            // Seeds do not depend on Δ, so each channel is the same random
            // direction scaled up.
            let channels = random_spam_channels(n, delta, derive_seed(cfg.seed, &[k as u64]))?;
            let setup = SpamSetup::new(&model, &channels, &a, &b)?;
            let p_tilde = times.iter().map(|&t| setup.p_tilde(t)).collect::<Result<Vec<_>>>()?;
            let residual = times.iter().map(|&t| setup.residual(t)).collect::<Result<Vec<_>>>()?;
            let p_noiseless = times.iter().map(|&t| setup.p_noiseless(t)).collect();
            let gamma_fit = fit_decay_window(&times, &p_tilde, c.fit_window / gamma)?;
            let (eps_s, eps_m) = spam_perturbation_norms(&channels, &setup.rho0, &setup.e0)?;
            let rdot_bound = residual_rate_bound(eps_s, eps_m, n, s);
            let rdot_fd_max = fd_max(&times, &residual);
            let fit = SpamFit {
                delta,
                channel: k,
                gamma,
                gamma_fit,
                rel_dev: (gamma_fit - gamma).abs() / gamma,
                eps_s,
                eps_m,
                rdot_fd_max,
                rdot_bound,
                // Slack for round-off only.
                bound_holds: rdot_fd_max <= rdot_bound * (1.0 + 1e-9) + 1e-14,
            };
            let curve = SpamCurve {
                delta,
                channel: k,
                p_tilde,
                p_noiseless,
                residual,
            };
            Ok((curve, fit))
        })
        .collect::<Result<Vec<_>>>()?;
    let (curves, fits): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    let mut deltas = c.deltas.clone();
    deltas.sort_by(f64::total_cmp);
    deltas.dedup();
    let per_delta: Vec<SpamDeltaSummary> = deltas
        .iter()
        .map(|&d| {
            let devs: Vec<f64> = fits.iter().filter(|f| f.delta == d).map(|f| f.rel_dev).collect();
            SpamDeltaSummary {
                delta: d,
                mean_rel_dev: mean(&devs),
                max_rel_dev: devs.iter().copied().fold(0.0, f64::max),
            }
        })
        .collect();
    let deviation_monotone = per_delta.windows(2).all(|w| w[0].mean_rel_dev <= w[1].mean_rel_dev);
    Ok(SpamRun {
        n,
        gamma,
        times,
        curves,
        fits,
        per_delta,
        deviation_monotone,
    })
}
