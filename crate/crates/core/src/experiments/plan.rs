//! Measurement-setting and sample budgets of the naive and compressed-sensing
//! protocols, with all unknown constants set to 1 and natural logarithms.

use serde::{Deserialize, Serialize};

use super::{columns, fmt_f64, ExperimentKind, Report};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlanMethod {
    Naive,
    CsRip,
    CsRipless,
}

impl PlanMethod {
    pub fn name(self) -> &'static str {
        match self {
            Self::Naive => "naive",
            Self::CsRip => "cs-rip",
            Self::CsRipless => "cs-ripless",
        }
    }
}

impl std::str::FromStr for PlanMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "naive" => Ok(Self::Naive),
            "cs-rip" => Ok(Self::CsRip),
            "cs-ripless" => Ok(Self::CsRipless),
            other => Err(Error::param(format!("unknown plan method {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanRow {
    /// `single_qubit`, `multi_qubit` or `total`.
    pub stage: String,
    pub settings: f64,
    /// Blank for the total row.
    pub samples_per_setting: Option<f64>,
    pub total_samples: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Crossover {
    pub cs_total: f64,
    pub naive_total: f64,
    pub cs_beats_naive: bool,
    /// Largest `s ≤ n(n−1)/2` for which the plan needs fewer samples than
    /// the naive one.
    pub max_advantageous_s: Option<usize>,
    /// Sparsity below which the asymptotic advantage holds:
    /// `n^{3/2}/ln²n` (RIP) or `n^{2/3}/ln²n` (RIPless).
    pub asymptotic_s_limit: f64,
    pub asymptotic_condition_holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplePlan {
    pub n: usize,
    pub s: usize,
    pub delta: f64,
    pub method: PlanMethod,
    pub rows: Vec<PlanRow>,
    /// Absent for the naive method.
    pub crossover: Option<Crossover>,
}

impl SamplePlan {
    pub fn total(&self) -> f64 {
        self.rows.last().map_or(0.0, |r| r.total_samples)
    }
}

fn stage(name: &str, settings: f64, per: f64) -> PlanRow {
    PlanRow {
        stage: name.into(),
        settings,
        samples_per_setting: Some(per),
        total_samples: settings * per,
    }
}

fn rows_for(n: usize, s: usize, delta: f64, method: PlanMethod) -> Vec<PlanRow> {
    let nf = n as f64;
    let sf = s as f64;
    let l = nf.ln();
    let d2 = delta * delta;
    let big = nf.max(sf);
    let single = match method {
        PlanMethod::CsRipless => stage("single_qubit", nf, sf.powi(3) * l.powi(6) / d2),
        _ => stage("single_qubit", nf, nf / d2),
    };
    let multi = match method {
        PlanMethod::Naive => stage("multi_qubit", (n * (n - 1) / 2) as f64, nf / d2),
        PlanMethod::CsRip => stage("multi_qubit", sf * l.powi(4), big / d2),
        PlanMethod::CsRipless => stage("multi_qubit", sf * l, sf * sf * big * l.powi(5) / d2),
    };
    let total = PlanRow {
        stage: "total".into(),
        settings: single.settings + multi.settings,
        samples_per_setting: None,
        total_samples: single.total_samples + multi.total_samples,
    };
    vec![single, multi, total]
}

fn total_of(n: usize, s: usize, delta: f64, method: PlanMethod) -> f64 {
    rows_for(n, s, delta, method)[2].total_samples
}

/// Settings and samples for each stage of `method` at relative accuracy
/// `delta`, plus a comparison against the naive protocol.
pub fn sample_complexity_plan(n: usize, s: usize, delta: f64, method: PlanMethod) -> Result<SamplePlan> {
    if n < 2 {
        return Err(Error::param("plan needs n >= 2"));
    }
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::param(format!("delta must be positive, got {delta}")));
    }
    let rows = rows_for(n, s, delta, method);
    let crossover = (method != PlanMethod::Naive).then(|| {
        let cs_total = rows[2].total_samples;
        let naive_total = total_of(n, s, delta, PlanMethod::Naive);
        // The plan total grows with s and the naive total does not.
        let wins = |k: usize| total_of(n, k, delta, method) < naive_total;
        let max_advantageous_s = wins(1).then(|| {
            let (mut lo, mut hi) = (1usize, n * (n - 1) / 2);
            while lo < hi {
                let mid = lo + (hi - lo).div_ceil(2);
                if wins(mid) {
                    lo = mid;
                } else {
                    hi = mid - 1;
                }
            }
            lo
        });
        let l2 = (n as f64).ln().powi(2);
        let asymptotic_s_limit = match method {
            PlanMethod::CsRip => (n as f64).powf(1.5) / l2,
            _ => (n as f64).powf(2.0 / 3.0) / l2,
        };
        Crossover {
            cs_total,
            naive_total,
            cs_beats_naive: cs_total < naive_total,
            max_advantageous_s,
            asymptotic_s_limit,
            asymptotic_condition_holds: (s as f64) <= asymptotic_s_limit,
        }
    });
    Ok(SamplePlan {
        n,
        s,
        delta,
        method,
        rows,
        crossover,
    })
}

pub(crate) fn report(plans: &[SamplePlan]) -> Report {
    let mut rows = Vec::new();
    for p in plans {
        for r in &p.rows {
            rows.push(vec![
                p.method.name().to_string(),
                p.n.to_string(),
                p.s.to_string(),
                fmt_f64(p.delta),
                r.stage.clone(),
                fmt_f64(r.settings),
                r.samples_per_setting.map(fmt_f64).unwrap_or_default(),
                fmt_f64(r.total_samples),
            ]);
        }
    }
    let crossovers: Vec<_> = plans
        .iter()
        .filter_map(|p| {
            p.crossover.as_ref().map(|c| {
                serde_json::json!({
                    "method": p.method.name(), "n": p.n, "s": p.s, "delta": p.delta, "crossover": c,
                })
            })
        })
        .collect();
    Report {
        kind: ExperimentKind::Plan,
        columns: columns(&[
            "method",
            "n",
            "s",
            "delta",
            "stage",
            "settings",
            "samples_per_setting",
            "total_samples",
        ]),
        rows,
        summary: serde_json::json!({ "crossovers": crossovers }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop_assert, proptest};

    #[test]
    fn naive_counts() {
        let p = sample_complexity_plan(10, 3, 0.1, PlanMethod::Naive).unwrap();
        assert_eq!(p.rows[0].settings, 10.0);
        assert_eq!(p.rows[1].settings, 45.0);
        assert!((p.rows[1].total_samples - 45.0 * 10.0 / 0.01).abs() < 1e-6);
        assert!((p.total() - 55.0 * 1000.0).abs() < 1e-6);
        assert!(p.crossover.is_none());
    }

    #[test]
    fn dense_models_never_win() {
        for method in [PlanMethod::CsRip, PlanMethod::CsRipless] {
            for n in [8, 32, 128, 512] {
                let p = sample_complexity_plan(n, n * n, 0.1, method).unwrap();
                let c = p.crossover.unwrap();
                assert!(!c.cs_beats_naive && !c.asymptotic_condition_holds, "{method:?} n={n}");
            }
        }
    }

    #[test]
    fn advantage_boundary_matches_scan() {
        for method in [PlanMethod::CsRip, PlanMethod::CsRipless] {
            for n in [64, 300, 2000] {
                let c = sample_complexity_plan(n, 1, 0.1, method).unwrap().crossover.unwrap();
                let naive = total_of(n, 1, 0.1, PlanMethod::Naive);
                let scan = (1..=n * (n - 1) / 2).rev().find(|&k| total_of(n, k, 0.1, method) < naive);
                assert_eq!(c.max_advantageous_s, scan, "{method:?} n={n}");
            }
        }
    }

    #[test]
    fn large_sparse_registers_win() {
        let p = sample_complexity_plan(1 << 20, 4, 0.1, PlanMethod::CsRip).unwrap();
        assert!(p.crossover.unwrap().cs_beats_naive);
    }

    proptest! {
        #[test]
        fn halving_delta_quadruples(n in 2usize..300, s in 0usize..200, d in 0.01f64..0.5) {
            for method in [PlanMethod::Naive, PlanMethod::CsRip, PlanMethod::CsRipless] {
                let a = sample_complexity_plan(n, s, d, method).unwrap();
                let b = sample_complexity_plan(n, s, d / 2.0, method).unwrap();
                for (ra, rb) in a.rows.iter().zip(&b.rows) {
                    prop_assert!((rb.total_samples - 4.0 * ra.total_samples).abs() <= 1e-9 * rb.total_samples.max(1.0));
                    prop_assert!(ra.settings == rb.settings);
                }
            }
        }

        #[test]
        fn totals_are_stage_sums(n in 2usize..300, s in 0usize..200) {
            let p = sample_complexity_plan(n, s, 0.1, PlanMethod::CsRipless).unwrap();
            prop_assert!((p.rows[2].total_samples - p.rows[0].total_samples - p.rows[1].total_samples).abs() <= 1e-9 * p.total());
        }
    }
}
