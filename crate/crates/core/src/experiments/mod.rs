//! Declarative experiment runs that produce CSV tables and JSON summaries.
//!
//! Every run is a pure function of its [`ExperimentConfig`]: random inputs
//! come from streams derived from the master seed and per-instance indices,
//! and output rows are ordered by parameters and instance index.

mod chooser;
mod complex;
mod phase;
mod plan;
mod spam;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::SolverOptions;
use crate::recovery::{LambdaConstants, RecoveryOptions};
use crate::sensing::NoiseSpec;
use crate::spectroscopy::ChooserConstants;

pub use chooser::{run_time_chooser_map, ChooserColumn, ChooserMap};
pub use complex::{complex_round_trip, random_complex_model, run_complex_recovery, ComplexErrors, ComplexRecord, ComplexSweep};
pub use phase::{program_for, run_noise_sweep, run_phase_transition, NoiseSlope, NoiseSweep, PhaseTransition, SweepRecord, Transition};
pub use plan::{sample_complexity_plan, Crossover, PlanMethod, PlanRow, SamplePlan};
pub use spam::{run_spam_experiment, SpamFit, SpamRun};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    SweepPhase,
    SweepNoise,
    Spam,
    TimeChooser,
    Plan,
    Complex,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::SweepPhase => "sweep-phase",
            Self::SweepNoise => "sweep-noise",
            Self::Spam => "spam",
            Self::TimeChooser => "time-chooser",
            Self::Plan => "plan",
            Self::Complex => "complex",
        }
    }
}

/// Which compressed-sensing program the sweeps solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProgramKind {
    Sequential,
    Simultaneous,
    Lasso,
}

/// Measurement counts: an explicit list or an inclusive stepped range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MRange {
    List(Vec<usize>),
    Range { start: usize, stop: usize, step: usize },
}

impl MRange {
    /// Sorted, deduplicated values.
    pub fn values(&self) -> Vec<usize> {
        let mut v = match self {
            MRange::List(v) => v.clone(),
            MRange::Range { start, stop, step } if *step > 0 => (*start..=*stop).step_by(*step).collect(),
            MRange::Range { .. } => Vec::new(),
        };
        v.sort_unstable();
        v.dedup();
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpamConfig {
    pub n: usize,
    /// Diagonal rate of the nearest-neighbor model.
    pub gamma0: f64,
    pub deltas: Vec<f64>,
    pub channel_seeds: usize,
    /// GHZ endpoints; default all zeros and all ones.
    pub a: Option<Vec<u8>>,
    pub b: Option<Vec<u8>>,
    /// Curve spans `[0, horizon/Γ]`.
    pub horizon: f64,
    pub points: usize,
    /// Fit window `[0, fit_window/Γ]`.
    pub fit_window: f64,
}

impl Default for SpamConfig {
    fn default() -> Self {
        Self {
            n: 3,
            gamma0: 1.0,
            deltas: vec![0.0, 0.01, 0.05, 0.1],
            channel_seeds: 20,
            a: None,
            b: None,
            horizon: 12.0,
            points: 481,
            fit_window: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChooserConfig {
    /// Columns `Γτ0 = 2^k` for `k` in this inclusive range.
    pub log2_min: i32,
    pub log2_max: i32,
    pub h: f64,
    /// Extra walk steps; defaults to `h/μ`.
    pub eta: Option<f64>,
    pub repetitions: usize,
    pub delta: f64,
    pub epsilon: f64,
    pub constants: ChooserConstants,
    /// Success level that defines the boundary.
    pub target: f64,
}

impl Default for ChooserConfig {
    fn default() -> Self {
        Self {
            log2_min: -8,
            log2_max: 8,
            h: 8.0,
            eta: None,
            repetitions: 200,
            delta: 0.25,
            epsilon: 0.05,
            constants: ChooserConstants::default(),
            target: 0.9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlanConfig {
    pub n: Vec<usize>,
    pub s: Vec<usize>,
    pub delta: Vec<f64>,
    pub methods: Vec<PlanMethod>,
}

impl Default for PlanConfig {
    fn default() -> Self {
        Self {
            n: vec![16, 64, 256, 1024],
            s: vec![16],
            delta: vec![0.1],
            methods: vec![PlanMethod::Naive, PlanMethod::CsRip, PlanMethod::CsRipless],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ComplexConfig {
    pub n: usize,
    /// Nonzero pairs in each of `T` and `R`.
    pub pairs: usize,
    /// Correlated pairs of the real part.
    pub v_pairs: usize,
    pub m: MRange,
}

impl Default for ComplexConfig {
    fn default() -> Self {
        Self {
            n: 16,
            pairs: 2,
            v_pairs: 2,
            m: MRange::Range {
                start: 8,
                stop: 160,
                step: 8,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub n: Vec<usize>,
    /// Correlated pairs in each random model.
    pub s: Vec<usize>,
    pub m: MRange,
    pub noise: NoiseSpec,
    /// Noise levels of the noise sweep.
    pub sigmas: Vec<f64>,
    /// The noise sweep runs at `m_factor · m_c` unless `m_post` is set.
    pub m_factor: f64,
    pub m_post: Option<usize>,
    pub program: ProgramKind,
    /// LASSO regularization; derived from the noise model when absent.
    pub lambda: Option<f64>,
    /// Scale `τ` of the shot-noise radii, `τδ < 1/4`.
    pub tau: f64,
    pub instances: usize,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub solver: SolverOptions,
    pub psd_project: bool,
    pub constants: LambdaConstants,
    /// Error level that defines `m_c`.
    pub threshold: f64,
    pub bootstrap_resamples: usize,
    pub confidence: f64,
    /// Adds wall-clock solve times, which makes output nondeterministic.
    pub timing: bool,
    pub spam: SpamConfig,
    pub chooser: ChooserConfig,
    pub plan: PlanConfig,
    pub complex: ComplexConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            kind: ExperimentKind::SweepPhase,
            n: vec![64],
            s: vec![12],
            m: MRange::Range {
                start: 20,
                stop: 400,
                step: 20,
            },
            noise: NoiseSpec::Exact,
            sigmas: vec![0.01, 0.03, 0.1, 0.3],
            m_factor: 2.0,
            m_post: None,
            program: ProgramKind::Sequential,
            lambda: None,
            tau: 2.0,
            instances: 20,
            seed: 0,
            out: None,
            solver: SolverOptions::default(),
            psd_project: false,
            constants: LambdaConstants::default(),
            threshold: 0.25,
            bootstrap_resamples: 1000,
            confidence: 0.95,
            timing: false,
            spam: SpamConfig::default(),
            chooser: ChooserConfig::default(),
            plan: PlanConfig::default(),
            complex: ComplexConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.instances == 0 {
            return Err(Error::param("instances must be >= 1"));
        }
        if !(self.bootstrap_resamples >= 1 && self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(Error::param("bootstrap needs resamples >= 1 and confidence in (0, 1)"));
        }
        match self.kind {
            ExperimentKind::SweepPhase | ExperimentKind::SweepNoise => {
                if self.n.is_empty() || self.s.is_empty() || self.m.values().is_empty() {
                    return Err(Error::param("n, s and m ranges must be nonempty"));
                }
                if self.n.iter().any(|&n| n < 2) {
                    return Err(Error::param("sweeps need n >= 2"));
                }
                if self.m.values()[0] == 0 {
                    return Err(Error::param("m values must be positive"));
                }
                if !(self.threshold > 0.0) {
                    return Err(Error::param("threshold must be positive"));
                }
                self.noise.validate()?;
                if self.kind == ExperimentKind::SweepNoise {
                    if self.sigmas.is_empty() || self.sigmas.iter().any(|s| !(*s >= 0.0)) {
                        return Err(Error::param("sigmas must be nonempty and nonnegative"));
                    }
                    if !(self.m_factor > 0.0) {
                        return Err(Error::param("m_factor must be positive"));
                    }
                }
            }
            ExperimentKind::Spam => {
                let c = &self.spam;
                if c.n > crate::spam::MAX_QUBITS {
                    return Err(Error::Capacity(format!(
                        "SPAM simulation supports at most {} qubits, asked for {}",
                        crate::spam::MAX_QUBITS,
                        c.n
                    )));
                }
                if c.n < 2 || c.deltas.is_empty() || c.channel_seeds == 0 || c.points < 8 {
                    return Err(Error::param("spam needs n >= 2, deltas, seeds >= 1 and points >= 8"));
                }
                if c.deltas.iter().any(|d| !(*d >= 0.0)) || !(c.gamma0 > 0.0 && c.horizon > c.fit_window && c.fit_window > 0.0) {
                    return Err(Error::param("spam needs deltas >= 0, gamma0 > 0 and horizon > fit_window > 0"));
                }
            }
            ExperimentKind::TimeChooser => {
                let c = &self.chooser;
                if c.log2_min > c.log2_max || c.repetitions == 0 || !(c.h > 0.0) {
                    return Err(Error::param("chooser needs a nonempty column range, repetitions >= 1 and h > 0"));
                }
                if !(c.target > 0.0 && c.target <= 1.0) {
                    return Err(Error::param("chooser target must be in (0, 1]"));
                }
                crate::spectroscopy::walk_trials(c.delta, c.epsilon, c.constants)?;
            }
            ExperimentKind::Plan => {
                let c = &self.plan;
                if c.n.is_empty() || c.s.is_empty() || c.delta.is_empty() || c.methods.is_empty() {
                    return Err(Error::param("plan ranges must be nonempty"));
                }
            }
            ExperimentKind::Complex => {
                let c = &self.complex;
                if c.n < 2 || c.m.values().is_empty() || c.m.values()[0] == 0 {
                    return Err(Error::param("complex recovery needs n >= 2 and positive m values"));
                }
            }
        }
        Ok(())
    }

    pub fn recovery_options(&self) -> RecoveryOptions {
        RecoveryOptions {
            solver: self.solver.clone(),
            psd_project: self.psd_project,
            ..RecoveryOptions::default()
        }
    }
}

/// Distances between an estimate and the truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorMetrics {
    /// Induced ∞-norm: largest absolute row sum.
    pub inf: f64,
    /// Largest absolute entry.
    pub max_abs: f64,
    pub fro: f64,
    /// Entrywise ℓ1 norm.
    pub l1: f64,
}

pub fn error_metrics(w: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<ErrorMetrics> {
    if w.shape() != c.shape() {
        return Err(Error::dim("error metrics", c.nrows(), w.nrows()));
    }
    let d = w - c;
    let inf = d.row_iter().map(|r| r.iter().map(|x| x.abs()).sum::<f64>()).fold(0.0, f64::max);
    Ok(ErrorMetrics {
        inf,
        max_abs: d.iter().fold(0.0, |a, x| a.max(x.abs())),
        fro: d.norm(),
        l1: d.iter().map(|x| x.abs()).sum(),
    })
}

/// A finished run: a table plus a JSON summary.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub kind: ExperimentKind,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
    pub summary: serde_json::Value,
}

impl Report {
    /// CSV text headed by comment lines carrying the config and seed.
    pub fn to_csv(&self, config: &ExperimentConfig) -> Result<String> {
        let mut out = String::new();
        writeln!(out, "# dephasing-cs {}", self.kind.name()).ok();
        writeln!(out, "# seed: {}", config.seed).ok();
        writeln!(out, "# config: {}", serde_json::to_string(config)?).ok();
        writeln!(out, "{}", self.columns.join(",")).ok();
        for row in &self.rows {
            writeln!(out, "{}", row.join(",")).ok();
        }
        Ok(out)
    }

    /// Writes the CSV to `path` and the summary next to it as `.json`.
    pub fn write(&self, config: &ExperimentConfig, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, self.to_csv(config)?)?;
        let summary = serde_json::json!({
            "kind": self.kind.name(),
            "seed": config.seed,
            "config": config,
            "summary": self.summary,
        });
        std::fs::write(path.with_extension("json"), serde_json::to_string_pretty(&summary)? + "\n")?;
        Ok(())
    }
}

/// Shortest round-trip form; `nan` and `inf` spelled out.
pub(crate) fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else {
        format!("{x}")
    }
}

pub(crate) fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

pub(crate) fn columns(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

/// Runs the experiment named by `config.kind`.
pub fn run(config: &ExperimentConfig) -> Result<Report> {
    config.validate()?;
    match config.kind {
        ExperimentKind::SweepPhase => Ok(run_phase_transition(config)?.report()),
        ExperimentKind::SweepNoise => Ok(run_noise_sweep(config)?.report()),
        ExperimentKind::Spam => run_spam_experiment(config)?.report(),
        ExperimentKind::TimeChooser => Ok(run_time_chooser_map(config)?.report()),
        ExperimentKind::Plan => {
            let c = &config.plan;
            let mut plans = Vec::new();
            for &n in &c.n {
                for &s in &c.s {
                    for &delta in &c.delta {
                        for &method in &c.methods {
                            plans.push(sample_complexity_plan(n, s, delta, method)?);
                        }
                    }
                }
            }
            Ok(plan::report(&plans))
        }
        ExperimentKind::Complex => Ok(run_complex_recovery(config)?.report()),
    }
}
