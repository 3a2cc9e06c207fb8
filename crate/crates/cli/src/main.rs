use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use dephasing_cs::experiments::{self, error_metrics, program_for, ExperimentConfig, ExperimentKind};
use dephasing_cs::noise_model::ModelFile;
use dephasing_cs::recovery::reconstruct;
use dephasing_cs::sensing::simulate_campaign;
use dephasing_cs::{Campaign, Error, NoiseModel, SensingEnsemble};

#[derive(Debug, Parser)]
#[command(name = "dephasing-cs", version, about = "Sparse correlated dephasing: simulation, reconstruction and sweeps")]
struct Cli {
    /// Experiment configuration (JSON); defaults apply to missing fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed, overriding the config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output path. JSON commands print to stdout without it; sweeps fall
    /// back to the config's `out` and then to stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw a random sparse noise model.
    Generate(GenerateArgs),
    /// Simulate a measurement campaign on a model.
    Measure(MeasureArgs),
    /// Reconstruct a model from a campaign.
    Reconstruct(ReconstructArgs),
    /// Recovery error against the number of measurements.
    SweepPhase,
    /// Post-transition recovery error against the noise level.
    SweepNoise,
    /// Decay curves under state-preparation and measurement errors.
    Spam,
    /// Success map of the adaptive evolution-time chooser.
    TimeChooser,
    /// Sample-complexity budgets of the naive and compressed-sensing protocols.
    Plan,
    /// Recovery of the imaginary part and Lamb shift from phase rates.
    Complex,
}

#[derive(Debug, Args)]
struct GenerateArgs {
    /// Qubits (default: first `n` of the config).
    #[arg(long)]
    n: Option<usize>,
    /// Correlated pairs (default: first `s` of the config).
    #[arg(long)]
    s: Option<usize>,
}

#[derive(Debug, Args)]
struct MeasureArgs {
    /// Model written by `generate`.
    #[arg(long)]
    model: PathBuf,
    /// Number of random probes (default: largest `m` of the config).
    #[arg(long)]
    m: Option<usize>,
}

#[derive(Debug, Args)]
struct ReconstructArgs {
    /// Campaign written by `measure`.
    #[arg(long)]
    input: PathBuf,
    /// True model; when given, error norms are reported on stderr.
    #[arg(long)]
    model: Option<PathBuf>,
}

/// What `measure` writes and `reconstruct` reads.
#[derive(Debug, Serialize, Deserialize)]
struct MeasureFile {
    ensemble: SensingEnsemble,
    campaign: Campaign,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let code = match e {
                Error::Solver { .. } | Error::Estimation { .. } => 3,
                _ => 2,
            };
            ExitCode::from(code)
        }
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    if let Some(k) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build_global()
            .map_err(|e| Error::Parameter(format!("thread pool: {e}")))?;
    }
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let out = cli.out.as_deref();
    match cli.command {
        Command::Generate(args) => generate(&cfg, &args, out),
        Command::Measure(args) => measure(&cfg, &args, out),
        Command::Reconstruct(args) => reconstruct_cmd(&cfg, &args, out),
        Command::SweepPhase => sweep(cfg, ExperimentKind::SweepPhase, out),
        Command::SweepNoise => sweep(cfg, ExperimentKind::SweepNoise, out),
        Command::Spam => sweep(cfg, ExperimentKind::Spam, out),
        Command::TimeChooser => sweep(cfg, ExperimentKind::TimeChooser, out),
        Command::Plan => sweep(cfg, ExperimentKind::Plan, out),
        Command::Complex => sweep(cfg, ExperimentKind::Complex, out),
    }
}

fn first(v: &[usize], what: &str) -> Result<usize, Error> {
    v.first().copied().ok_or_else(|| Error::Parameter(format!("config has no {what}")))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Error> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

fn emit_json<T: Serialize>(value: &T, out: Option<&Path>) -> Result<(), Error> {
    let text = serde_json::to_string_pretty(value)?;
    match out {
        Some(path) => std::fs::write(path, text + "\n")?,
        None => println!("{text}"),
    }
    Ok(())
}

fn generate(cfg: &ExperimentConfig, args: &GenerateArgs, out: Option<&Path>) -> Result<(), Error> {
    let n = args.n.map_or_else(|| first(&cfg.n, "n"), Ok)?;
    let s = args.s.map_or_else(|| first(&cfg.s, "s"), Ok)?;
    let model = NoiseModel::random_sparse(n, s, cfg.seed)?;
    emit_json(&model.to_file(), out)
}

fn measure(cfg: &ExperimentConfig, args: &MeasureArgs, out: Option<&Path>) -> Result<(), Error> {
    let model = NoiseModel::from_file(&read_json::<ModelFile>(&args.model)?)?;
    let m = match args.m {
        Some(m) => m,
        None => cfg.m.values().last().copied().ok_or_else(|| Error::Parameter("config has no m".into()))?,
    };
    let ensemble = SensingEnsemble::generate(model.n(), m, cfg.seed)?;
    let campaign = simulate_campaign(&model, &ensemble, &cfg.noise, cfg.seed)?;
    emit_json(&MeasureFile { ensemble, campaign }, out)
}

fn reconstruct_cmd(cfg: &ExperimentConfig, args: &ReconstructArgs, out: Option<&Path>) -> Result<(), Error> {
    let MeasureFile { ensemble, campaign } = read_json(&args.input)?;
    campaign.validate()?;
    ensemble.validate()?;
    if campaign.m != ensemble.m || campaign.n != ensemble.n {
        return Err(Error::Parameter("campaign does not match its ensemble".into()));
    }
    let program = program_for(
        cfg.program,
        &campaign.noise,
        &campaign.g,
        &campaign.h,
        &ensemble,
        cfg.tau,
        cfg.lambda,
        cfg.constants,
    )?;
    let result = reconstruct(&campaign.g, &campaign.h, &ensemble, program, &cfg.recovery_options())?;
    if let Some(path) = &args.model {
        let model = NoiseModel::from_file(&read_json::<ModelFile>(path)?)?;
        let e = error_metrics(&result.w(), model.v())?;
        eprintln!("error: inf {:.3e} max_abs {:.3e} fro {:.3e} l1 {:.3e}", e.inf, e.max_abs, e.fro, e.l1);
    }
    emit_json(&result, out)
}

fn sweep(mut cfg: ExperimentConfig, kind: ExperimentKind, out: Option<&Path>) -> Result<(), Error> {
    cfg.kind = kind;
    if let Some(path) = out {
        cfg.out = Some(path.to_path_buf());
    }
    let report = experiments::run(&cfg)?;
    match &cfg.out {
        Some(path) => {
            report.write(&cfg, path)?;
            eprintln!("wrote {} rows to {}", report.rows.len(), path.display());
        }
        None => print!("{}", report.to_csv(&cfg)?),
    }
    Ok(())
}
