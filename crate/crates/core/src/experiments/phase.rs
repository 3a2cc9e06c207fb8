//! Recovery error as a function of the measurement count, with and without
//! additive noise.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{columns, error_metrics, fmt_f64, fmt_opt, ErrorMetrics, ExperimentConfig, ExperimentKind, ProgramKind, Report};
use crate::error::{Error, Result};
use crate::noise_model::NoiseModel;
use crate::recovery::{reconstruct, set_epsilons, set_lambda, shifted_data, LambdaConstants, Program, RecoveryOptions};
use crate::rng::{derive_seed, domain};
use crate::sensing::{simulate_campaign, Campaign, NoiseSpec, SensingEnsemble};
use crate::stats::{bootstrap_mean_ci, linear_fit, mean, threshold_crossing};

/// One CSV row: a parameter cell averaged over instances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub n: usize,
    pub s: usize,
    pub m: usize,
    pub sigma: f64,
    pub instances: usize,
    /// Instances whose solve failed; excluded from the means.
    pub failures: usize,
    pub err_inf: f64,
    pub err_inf_ci: (f64, f64),
    pub err_max_abs: f64,
    pub err_fro: f64,
    pub err_fro_ci: (f64, f64),
    pub err_l1: f64,
    pub err_l1_ci: (f64, f64),
    /// Mean wall-clock seconds per solve, when timing is on.
    pub runtime_s: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub n: usize,
    pub s: usize,
    pub sigma: f64,
    /// First `m` where the mean ∞-norm error drops below the threshold for
    /// good, interpolated linearly.
    pub m_c: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseTransition {
    pub records: Vec<SweepRecord>,
    pub transitions: Vec<Transition>,
}

const RECORD_COLUMNS: &[&str] = &[
    "n",
    "s",
    "m",
    "sigma",
    "instances",
    "failures",
    "err_inf",
    "err_inf_lo",
    "err_inf_hi",
    "err_max_abs",
    "err_fro",
    "err_fro_lo",
    "err_fro_hi",
    "err_l1",
    "err_l1_lo",
    "err_l1_hi",
    "m_c",
    "runtime_s",
];

fn record_row(r: &SweepRecord, m_c: Option<f64>) -> Vec<String> {
    vec![
        r.n.to_string(),
        r.s.to_string(),
        r.m.to_string(),
        fmt_f64(r.sigma),
        r.instances.to_string(),
        r.failures.to_string(),
        fmt_f64(r.err_inf),
        fmt_f64(r.err_inf_ci.0),
        fmt_f64(r.err_inf_ci.1),
        fmt_f64(r.err_max_abs),
        fmt_f64(r.err_fro),
        fmt_f64(r.err_fro_ci.0),
        fmt_f64(r.err_fro_ci.1),
        fmt_f64(r.err_l1),
        fmt_f64(r.err_l1_ci.0),
        fmt_f64(r.err_l1_ci.1),
        fmt_opt(m_c),
        fmt_opt(r.runtime_s),
    ]
}

fn find_transition(ts: &[Transition], r: &SweepRecord) -> Option<f64> {
    ts.iter()
        .find(|t| t.n == r.n && t.s == r.s && t.sigma == r.sigma)
        .and_then(|t| t.m_c)
}

impl PhaseTransition {
    pub fn m_c(&self, n: usize, s: usize) -> Option<f64> {
        self.transitions.iter().find(|t| t.n == n && t.s == s).and_then(|t| t.m_c)
    }

    pub fn report(&self) -> Report {
        Report {
            kind: ExperimentKind::SweepPhase,
            columns: columns(RECORD_COLUMNS),
            rows: self
                .records
                .iter()
                .map(|r| record_row(r, find_transition(&self.transitions, r)))
                .collect(),
            summary: serde_json::json!({ "transitions": self.transitions }),
        }
    }
}

struct Instance {
    model: NoiseModel,
    ensemble: SensingEnsemble,
    seed: u64,
}

/// Model, probes and noise seed of instance `i`; the same for every `m` and
/// every noise level, so sweeps compare paired instances.
fn instance(cfg: &ExperimentConfig, n: usize, s: usize, i: usize, m_max: usize) -> Result<Instance> {
    let seed = derive_seed(cfg.seed, &[domain::INSTANCE, n as u64, s as u64, i as u64]);
    Ok(Instance {
        model: NoiseModel::random_sparse(n, s, seed)?,
        ensemble: SensingEnsemble::generate(n, m_max, seed)?,
        seed,
    })
}

fn max_column_norm(ens: &SensingEnsemble) -> Result<f64> {
    let q = ens.offdiag_matrix()?;
    Ok(q.matrix().column_iter().map(|c| c.norm()).fold(0.0, f64::max))
}

/// Program parameters for one campaign: radii from the noise model
/// (`ε2 = √m σ` for Gaussian noise, the `τδ` rule for shots) or the LASSO
/// weight, which `lambda` overrides.
#[allow(clippy::too_many_arguments)]
pub fn program_for(
    kind: ProgramKind,
    noise: &NoiseSpec,
    g: &[f64],
    h: &[f64],
    ens: &SensingEnsemble,
    tau: f64,
    lambda: Option<f64>,
    constants: LambdaConstants,
) -> Result<Program> {
    let m = h.len();
    let (eps1, eps2) = match noise {
        NoiseSpec::Exact => (0.0, 0.0),
        NoiseSpec::Gaussian { sigma } => (0.0, (m as f64).sqrt() * sigma),
        NoiseSpec::Shot { delta1, delta2, .. } => set_epsilons(g, h, *delta1, *delta2, tau)?,
    };
    Ok(match kind {
        ProgramKind::Sequential => Program::Sequential { eps1, eps2 },
        ProgramKind::Simultaneous => Program::Simultaneous { eps1, eps2 },
        ProgramKind::Lasso => {
            let lambda = match (lambda, noise) {
                (Some(l), _) => l,
                (None, NoiseSpec::Shot { delta1, delta2, .. }) => set_lambda(g, h, *delta1, *delta2, constants)?,
                (None, NoiseSpec::Gaussian { sigma }) if *sigma > 0.0 => {
                    let d = (ens.n * (ens.n - 1) / 2) as f64;
                    sigma * (2.0 * d.max(2.0).ln()).sqrt() * max_column_norm(ens)?
                }
                // Near-interpolation for exact data.
                _ => {
                    let hp = shifted_data(g, h, ens);
                    let q = ens.offdiag_matrix()?;
                    let corr = q.matrix().transpose() * nalgebra::DVector::from_column_slice(&hp);
                    (1e-6 * corr.amax()).max(1e-12)
                }
            };
            Program::Lasso { lambda }
        }
    })
}

/// `None` marks a failed solve.
type Outcome = (Option<ErrorMetrics>, f64);

fn solve_one(
    cfg: &ExperimentConfig,
    opts: &RecoveryOptions,
    inst: &Instance,
    campaign: &Option<Campaign>,
    noise: &NoiseSpec,
    m: usize,
) -> Result<Outcome> {
    let Some(campaign) = campaign else {
        return Ok((None, 0.0));
    };
    let ens = inst.ensemble.truncated(m);
    let h = &campaign.h[..m];
    let start = Instant::now();
    let program = program_for(cfg.program, noise, &campaign.g, h, &ens, cfg.tau, cfg.lambda, cfg.constants)?;
    match reconstruct(&campaign.g, h, &ens, program, opts) {
        Ok(res) => Ok((Some(error_metrics(&res.w(), inst.model.v())?), start.elapsed().as_secs_f64())),
        Err(Error::Solver { .. }) => Ok((None, start.elapsed().as_secs_f64())),
        Err(e) => Err(e),
    }
}

fn campaign_for(inst: &Instance, noise: &NoiseSpec) -> Result<Option<Campaign>> {
    match simulate_campaign(&inst.model, &inst.ensemble, noise, inst.seed) {
        Ok(c) => Ok(Some(c)),
        // A probe whose rate could not be estimated sinks the instance only.
        Err(Error::Estimation { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Per-instance outcomes for every `m`, indexed `[m][instance]`.
fn solve_grid(cfg: &ExperimentConfig, insts: &[Instance], noise: &NoiseSpec, ms: &[usize]) -> Result<Vec<Vec<Outcome>>> {
    let opts = cfg.recovery_options();
    let campaigns = insts
        .par_iter()
        .map(|inst| campaign_for(inst, noise))
        .collect::<Result<Vec<_>>>()?;
    let work: Vec<(usize, usize)> = (0..ms.len()).flat_map(|a| (0..insts.len()).map(move |i| (a, i))).collect();
    let outcomes = work
        .par_iter()
        .map(|&(a, i)| solve_one(cfg, &opts, &insts[i], &campaigns[i], noise, ms[a]))
        .collect::<Result<Vec<_>>>()?;
    Ok(outcomes.chunks(insts.len()).map(|c| c.to_vec()).collect())
}

fn ci_or_nan(x: &[f64], cfg: &ExperimentConfig, seed: u64) -> Result<(f64, f64)> {
    if x.is_empty() {
        return Ok((f64::NAN, f64::NAN));
    }
    bootstrap_mean_ci(x, cfg.bootstrap_resamples, cfg.confidence, seed)
}

fn aggregate(cfg: &ExperimentConfig, n: usize, s: usize, m: usize, sigma: f64, outcomes: &[Outcome]) -> Result<SweepRecord> {
    let ok: Vec<ErrorMetrics> = outcomes.iter().filter_map(|o| o.0).collect();
    let pick = |f: fn(&ErrorMetrics) -> f64| ok.iter().map(f).collect::<Vec<f64>>();
    let (inf, max_abs, fro, l1) = (pick(|e| e.inf), pick(|e| e.max_abs), pick(|e| e.fro), pick(|e| e.l1));
    let seed = |k: u64| derive_seed(cfg.seed, &[domain::BOOTSTRAP, n as u64, s as u64, m as u64, sigma.to_bits(), k]);
    Ok(SweepRecord {
        n,
        s,
        m,
        sigma,
        instances: outcomes.len(),
        failures: outcomes.len() - ok.len(),
        err_inf: mean(&inf),
        err_inf_ci: ci_or_nan(&inf, cfg, seed(0))?,
        err_max_abs: mean(&max_abs),
        err_fro: mean(&fro),
        err_fro_ci: ci_or_nan(&fro, cfg, seed(1))?,
        err_l1: mean(&l1),
        err_l1_ci: ci_or_nan(&l1, cfg, seed(2))?,
        runtime_s: cfg.timing.then(|| mean(&outcomes.iter().map(|o| o.1).collect::<Vec<_>>())),
    })
}

fn crossing(records: &[SweepRecord], threshold: f64) -> Option<f64> {
    let xs: Vec<f64> = records.iter().map(|r| r.m as f64).collect();
    // A cell with no successful solve counts as above the threshold.
    let ys: Vec<f64> = records
        .iter()
        .map(|r| if r.err_inf.is_nan() { f64::INFINITY } else { r.err_inf })
        .collect();
    threshold_crossing(&xs, &ys, threshold)
}

fn noise_sigma(noise: &NoiseSpec) -> f64 {
    match noise {
        NoiseSpec::Gaussian { sigma } => *sigma,
        _ => 0.0,
    }
}

fn prepare(cfg: &ExperimentConfig, n: usize, s: usize, m_max: usize) -> Result<Vec<Instance>> {
    (0..cfg.instances)
        .into_par_iter()
        .map(|i| instance(cfg, n, s, i, m_max))
        .collect()
}

fn sweep_cell(cfg: &ExperimentConfig, insts: &[Instance], n: usize, s: usize, noise: &NoiseSpec, ms: &[usize]) -> Result<(Vec<SweepRecord>, Transition)> {
    let sigma = noise_sigma(noise);
    let grid = solve_grid(cfg, insts, noise, ms)?;
    let records = ms
        .iter()
        .zip(&grid)
        .map(|(&m, o)| aggregate(cfg, n, s, m, sigma, o))
        .collect::<Result<Vec<_>>>()?;
    let m_c = crossing(&records, cfg.threshold);
    Ok((records, Transition { n, s, sigma, m_c }))
}

/// Mean recovery error over random instances for every `(n, s, m)`, and the
/// transition point `m_c` of each `(n, s)` curve.
pub fn run_phase_transition(cfg: &ExperimentConfig) -> Result<PhaseTransition> {
    cfg.validate()?;
    let ms = cfg.m.values();
    let m_max = *ms.last().expect("validated nonempty");
    let mut out = PhaseTransition {
        records: Vec::new(),
        transitions: Vec::new(),
    };
    for &n in &cfg.n {
        for &s in &cfg.s {
            let insts = prepare(cfg, n, s, m_max)?;
            let (records, t) = sweep_cell(cfg, &insts, n, s, &cfg.noise, &ms)?;
            out.records.extend(records);
            out.transitions.push(t);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSlope {
    pub n: usize,
    pub s: usize,
    pub m_c: Option<f64>,
    pub m_post: usize,
    /// Log-log slope of the mean ∞-norm error against `σ`, over `σ > 0`.
    pub slope_inf: Option<f64>,
    pub r2_inf: Option<f64>,
    pub slope_fro: Option<f64>,
    /// For consecutive noise levels, the mean over paired instances of the
    /// error ratio divided by the `σ` ratio; 1 means exactly linear.
    pub paired_ratios: Vec<(f64, f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSweep {
    pub records: Vec<SweepRecord>,
    pub slopes: Vec<NoiseSlope>,
}

impl NoiseSweep {
    pub fn report(&self) -> Report {
        Report {
            kind: ExperimentKind::SweepNoise,
            columns: columns(RECORD_COLUMNS),
            rows: self
                .records
                .iter()
                .map(|r| {
                    let m_c = self.slopes.iter().find(|t| t.n == r.n && t.s == r.s).and_then(|t| t.m_c);
                    record_row(r, m_c)
                })
                .collect(),
            summary: serde_json::json!({ "slopes": self.slopes }),
        }
    }
}

fn log_log_slope(records: &[SweepRecord], f: fn(&SweepRecord) -> f64) -> Option<(f64, f64)> {
    let (x, y): (Vec<f64>, Vec<f64>) = records
        .iter()
        .filter(|r| r.sigma > 0.0 && f(r) > 0.0 && f(r).is_finite())
        .map(|r| (r.sigma.ln(), f(r).ln()))
        .unzip();
    if x.len() < 2 {
        return None;
    }
    linear_fit(&x, &y).ok().map(|l| (l.slope, l.r2))
}

/// Locates `m_c` on the noiseless grid, then measures the error at
/// `m_factor · m_c` (or `m_post`) for each noise level on the same instances.
pub fn run_noise_sweep(cfg: &ExperimentConfig) -> Result<NoiseSweep> {
    cfg.validate()?;
    let ms = cfg.m.values();
    let mut out = NoiseSweep {
        records: Vec::new(),
        slopes: Vec::new(),
    };
    for &n in &cfg.n {
        for &s in &cfg.s {
            let grid_max = *ms.last().expect("validated nonempty");
            let (m_c, insts, m_post) = match cfg.m_post {
                Some(m_post) => (None, prepare(cfg, n, s, m_post)?, m_post),
                None => {
                    let insts = prepare(cfg, n, s, grid_max)?;
                    let (_, t) = sweep_cell(cfg, &insts, n, s, &NoiseSpec::Exact, &ms)?;
                    let Some(m_c) = t.m_c else {
                        return Err(Error::param(format!(
                            "no transition below the threshold on the m grid for n = {n}, s = {s}"
                        )));
                    };
                    let m_post = (cfg.m_factor * m_c).ceil() as usize;
                    let insts = if m_post > grid_max { prepare(cfg, n, s, m_post)? } else { insts };
                    (Some(m_c), insts, m_post)
                }
            };
            let mut cell = Vec::new();
            let mut per_instance: Vec<Vec<Option<f64>>> = Vec::new();
            for &sigma in &cfg.sigmas {
                let noise = if sigma > 0.0 { NoiseSpec::Gaussian { sigma } } else { NoiseSpec::Exact };
                let grid = solve_grid(cfg, &insts, &noise, &[m_post])?;
                let mut rec = aggregate(cfg, n, s, m_post, sigma, &grid[0])?;
                rec.sigma = sigma;
                per_instance.push(grid[0].iter().map(|o| o.0.map(|e| e.inf)).collect());
                cell.push(rec);
            }
            let mut paired_ratios = Vec::new();
            for k in 1..cfg.sigmas.len() {
                let (lo, hi) = (cfg.sigmas[k - 1], cfg.sigmas[k]);
                if !(lo > 0.0 && hi > 0.0) {
                    continue;
                }
                let ratios: Vec<f64> = per_instance[k - 1]
                    .iter()
                    .zip(&per_instance[k])
                    .filter_map(|(a, b)| match (a, b) {
                        (Some(a), Some(b)) if *a > 0.0 => Some(b / a / (hi / lo)),
                        _ => None,
                    })
                    .collect();
                paired_ratios.push((lo, hi, mean(&ratios)));
            }
            let inf = log_log_slope(&cell, |r| r.err_inf);
            out.slopes.push(NoiseSlope {
                n,
                s,
                m_c,
                m_post,
                slope_inf: inf.map(|p| p.0),
                r2_inf: inf.map(|p| p.1),
                slope_fro: log_log_slope(&cell, |r| r.err_fro).map(|p| p.0),
                paired_ratios,
            });
            out.records.extend(cell);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::MRange;

    fn small(kind: ExperimentKind) -> ExperimentConfig {
        ExperimentConfig {
            kind,
            n: vec![8],
            s: vec![2],
            m: MRange::List(vec![4, 12, 24, 40]),
            instances: 4,
            bootstrap_resamples: 200,
            seed: 11,
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn phase_rows_and_transition() {
        let cfg = small(ExperimentKind::SweepPhase);
        let out = run_phase_transition(&cfg).unwrap();
        assert_eq!(out.records.len(), 4);
        let last = out.records.last().unwrap();
        assert!(last.err_inf < 1e-6, "{last:?}");
        assert!(out.m_c(8, 2).is_some());
        for r in &out.records {
            assert!(r.err_inf >= 0.0 && r.err_fro >= 0.0 && r.err_l1 >= 0.0);
            assert!(r.err_inf_ci.0 <= r.err_inf + 1e-12 && r.err_inf <= r.err_inf_ci.1 + 1e-12);
            assert!(r.err_max_abs <= r.err_inf + 1e-12);
        }
    }

    #[test]
    fn rerun_is_byte_identical() {
        let cfg = small(ExperimentKind::SweepPhase);
        let a = run_phase_transition(&cfg).unwrap().report().to_csv(&cfg).unwrap();
        let b = run_phase_transition(&cfg).unwrap().report().to_csv(&cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.starts_with("# dephasing-cs sweep-phase\n# seed: 11\n# config: {"));
    }

    #[test]
    fn empty_model_is_recovered_everywhere() {
        let cfg = ExperimentConfig {
            s: vec![0],
            m: MRange::List(vec![1, 3, 10]),
            ..small(ExperimentKind::SweepPhase)
        };
        let out = run_phase_transition(&cfg).unwrap();
        for r in &out.records {
            assert!(r.err_inf < 1e-9, "{r:?}");
        }
        assert_eq!(out.m_c(8, 0), Some(1.0));
    }

    #[test]
    fn zero_sigma_matches_noiseless() {
        let mut cfg = small(ExperimentKind::SweepNoise);
        cfg.sigmas = vec![0.0, 0.1];
        cfg.m_post = Some(24);
        let sweep = run_noise_sweep(&cfg).unwrap();
        let phase = run_phase_transition(&ExperimentConfig {
            m: MRange::List(vec![24]),
            ..small(ExperimentKind::SweepPhase)
        })
        .unwrap();
        assert_eq!(sweep.records[0].err_inf, phase.records[0].err_inf);
        assert!(sweep.records[1].err_inf > 0.0);
    }

    #[test]
    fn lasso_and_simultaneous_programs_run() {
        for program in [ProgramKind::Lasso, ProgramKind::Simultaneous] {
            let cfg = ExperimentConfig {
                program,
                m: MRange::List(vec![40]),
                ..small(ExperimentKind::SweepPhase)
            };
            let out = run_phase_transition(&cfg).unwrap();
            assert!(out.records[0].err_inf < 1e-3, "{program:?}: {:?}", out.records[0]);
        }
    }
}
