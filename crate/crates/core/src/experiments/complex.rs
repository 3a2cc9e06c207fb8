//! Recovery of the imaginary part `T` and the Lamb-shift matrix `R` from
//! exact phase rates.

use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use nalgebra::DMatrix;

use super::{columns, fmt_f64, ExperimentConfig, ExperimentKind, Report};
use crate::error::{Error, Result};
use crate::noise_model::{pair_of_index, uvec_len, NoiseModel};
use crate::optim::SolverOptions;
use crate::recovery::recover_complex;
use crate::rng::{self, derive_seed, domain};
use crate::sensing::{Probe, SensingEnsemble};
use crate::stats::{bootstrap_mean_ci, mean};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComplexErrors {
    pub t_fro: f64,
    pub r_fro: f64,
    /// `sqrt(‖T̂ − T‖_F² + ‖R̂ − R‖_F²)`.
    pub joint: f64,
}

/// Random sparse `V` plus `pairs` random entries in each of `T` and `R`
/// with magnitudes in `[0.2, 0.5]` and random signs.
///
/// With `pairs ≤ 2` the Gershgorin discs of `V + iT` stay in the right half
/// plane, so the model is a valid correlation matrix.
pub fn random_complex_model(n: usize, v_pairs: usize, pairs: usize, seed: u64) -> Result<NoiseModel> {
    let v = NoiseModel::random_sparse(n, v_pairs, seed)?;
    let d = uvec_len(n);
    if pairs > d {
        return Err(Error::param(format!("only {d} pairs available, asked for {pairs}")));
    }
    let fill = |tag: u64, skew: bool| {
        let mut s = rng::stream(seed, &[domain::MODEL, tag]);
        let mut m = DMatrix::zeros(n, n);
        for k in sample(&mut s, d, pairs) {
            let (i, j) = pair_of_index(n, k);
            let mag = s.random_range(0.2..=0.5);
            let x = if s.random::<bool>() { mag } else { -mag };
            m[(i, j)] = x;
            m[(j, i)] = if skew { -x } else { x };
        }
        m
    };
    let t = fill(1, true);
    let r = fill(2, false);
    NoiseModel::new(v.v().clone(), t, r)
}

/// Feeds the exact phase rates of `probes` to [`recover_complex`] and
/// compares with the model.
pub fn complex_round_trip(model: &NoiseModel, probes: &[Probe], opts: &SolverOptions) -> Result<ComplexErrors> {
    let omegas = probes
        .iter()
        .map(|p| Ok(model.rates_for_bits(p.a(), p.b())?.1))
        .collect::<Result<Vec<f64>>>()?;
    let (t, r) = recover_complex(&omegas, probes, 0.0, opts)?;
    let t_fro = (t - model.t()).norm();
    let r_fro = (r - model.r()).norm();
    Ok(ComplexErrors {
        t_fro,
        r_fro,
        joint: t_fro.hypot(r_fro),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexRecord {
    pub n: usize,
    pub pairs: usize,
    pub m: usize,
    pub instances: usize,
    pub failures: usize,
    pub err_joint: f64,
    pub err_joint_ci: (f64, f64),
    pub err_joint_max: f64,
    pub err_t: f64,
    pub err_r: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexSweep {
    pub records: Vec<ComplexRecord>,
}

impl ComplexSweep {
    pub fn report(&self) -> Report {
        let rows = self
            .records
            .iter()
            .map(|r| {
                vec![
                    r.n.to_string(),
                    r.pairs.to_string(),
                    r.m.to_string(),
                    r.instances.to_string(),
                    r.failures.to_string(),
                    fmt_f64(r.err_joint),
                    fmt_f64(r.err_joint_ci.0),
                    fmt_f64(r.err_joint_ci.1),
                    fmt_f64(r.err_joint_max),
                    fmt_f64(r.err_t),
                    fmt_f64(r.err_r),
                ]
            })
            .collect();
        Report {
            kind: ExperimentKind::Complex,
            columns: columns(&[
                "n",
                "pairs",
                "m",
                "instances",
                "failures",
                "err_joint",
                "err_joint_lo",
                "err_joint_hi",
                "err_joint_max",
                "err_t",
                "err_r",
            ]),
            rows,
            summary: serde_json::json!({ "records": self.records.len() }),
        }
    }
}

/// Round-trip error of random complex models as the number of probes grows.
pub fn run_complex_recovery(cfg: &ExperimentConfig) -> Result<ComplexSweep> {
    cfg.validate()?;
    let c = &cfg.complex;
    let ms = c.m.values();
    let m_max = *ms.last().expect("validated nonempty");
    let setups = (0..cfg.instances)
        .into_par_iter()
        .map(|i| {
            let seed = derive_seed(cfg.seed, &[domain::INSTANCE, c.n as u64, c.pairs as u64, i as u64]);
            Ok((random_complex_model(c.n, c.v_pairs, c.pairs, seed)?, SensingEnsemble::generate(c.n, m_max, seed)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let work: Vec<(usize, usize)> = (0..ms.len()).flat_map(|a| (0..cfg.instances).map(move |i| (a, i))).collect();
    let outcomes = work
        .par_iter()
        .map(|&(a, i)| {
            let (model, ens) = &setups[i];
            match complex_round_trip(model, &ens.probes[..ms[a]], &cfg.solver) {
                Ok(e) => Ok(Some(e)),
                Err(Error::Solver { .. }) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let records = ms
        .iter()
        .zip(outcomes.chunks(cfg.instances))
        .map(|(&m, chunk)| {
            let ok: Vec<ComplexErrors> = chunk.iter().flatten().copied().collect();
            let joint: Vec<f64> = ok.iter().map(|e| e.joint).collect();
            let ci = if joint.is_empty() {
                (f64::NAN, f64::NAN)
            } else {
                let seed = derive_seed(cfg.seed, &[domain::BOOTSTRAP, c.n as u64, c.pairs as u64, m as u64]);
                bootstrap_mean_ci(&joint, cfg.bootstrap_resamples, cfg.confidence, seed)?
            };
            Ok(ComplexRecord {
                n: c.n,
                pairs: c.pairs,
                m,
                instances: chunk.len(),
                failures: chunk.len() - ok.len(),
                err_joint: mean(&joint),
                err_joint_ci: ci,
                err_joint_max: joint.iter().copied().fold(0.0, f64::max),
                err_t: mean(&ok.iter().map(|e| e.t_fro).collect::<Vec<_>>()),
                err_r: mean(&ok.iter().map(|e| e.r_fro).collect::<Vec<_>>()),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ComplexSweep { records })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::{ComplexConfig, MRange};

    #[test]
    fn model_shape() {
        let m = random_complex_model(8, 2, 2, 5).unwrap();
        let t = m.t();
        assert!((t + t.transpose()).amax() == 0.0);
        assert_eq!(t.iter().filter(|x| **x != 0.0).count(), 4);
        assert_eq!(m.r().iter().filter(|x| **x != 0.0).count(), 4);
        assert!(m.min_eigenvalue() >= -1e-12);
    }

    #[test]
    fn real_model_gives_zero() {
        let model = NoiseModel::random_sparse(6, 2, 3).unwrap();
        let ens = SensingEnsemble::generate(6, 10, 3).unwrap();
        let e = complex_round_trip(&model, &ens.probes, &SolverOptions::default()).unwrap();
        assert_eq!(e.joint, 0.0);
    }

    #[test]
    fn sweep_reaches_exact_recovery() {
        let cfg = ExperimentConfig {
            kind: ExperimentKind::Complex,
            instances: 3,
            complex: ComplexConfig {
                n: 8,
                m: MRange::List(vec![4, 60]),
                ..ComplexConfig::default()
            },
            ..ExperimentConfig::default()
        };
        let sweep = run_complex_recovery(&cfg).unwrap();
        assert_eq!(sweep.records.len(), 2);
        assert!(sweep.records[0].err_joint > 0.1);
        assert!(sweep.records[1].err_joint < 1e-6, "{:?}", sweep.records[1]);
    }
}
