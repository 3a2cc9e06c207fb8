//! Ramsey experiments on a single GHZ-type coherence: shot simulation, decay
//! rate estimation and the adaptive choice of evolution time.

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Drift bound of the evolution-time random walk outside its basin.
pub const WALK_MU: f64 = 0.09;
/// Extra clamp margin for the walk position beyond `±h`.
pub const WALK_CLAMP_MARGIN: i64 = 64;

/// Outcome counts from `n_plus + n_minus` repetitions at time `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShotCounts {
    pub n_plus: u64,
    pub n_minus: u64,
    pub t: f64,
}

impl ShotCounts {
    pub fn new(n_plus: u64, n_minus: u64, t: f64) -> Result<Self> {
        if n_plus + n_minus == 0 {
            return Err(Error::param("shot record needs at least one trial"));
        }
        if !(t >= 0.0) {
            return Err(Error::param(format!("evolution time must be >= 0, got {t}")));
        }
        Ok(Self { n_plus, n_minus, t })
    }

    pub fn n_trials(&self) -> u64 {
        self.n_plus + self.n_minus
    }

    /// `(N₊ − N₋) / N_trials`, an unbiased estimate of `e^{−Γt} cos Ωt`.
    pub fn delta(&self) -> f64 {
        (self.n_plus as f64 - self.n_minus as f64) / self.n_trials() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayEstimate {
    pub gamma_hat: f64,
    pub omega_hat: Option<f64>,
    pub t_used: f64,
    pub n_trials: u64,
    pub delta_observed: f64,
}

/// Probability of the "+" outcome, `½(1 + e^{−Γt} cos Ωt)`.
pub fn plus_probability(gamma: f64, omega: f64, t: f64) -> f64 {
    (0.5 * (1.0 + (-gamma * t).exp() * (omega * t).cos())).clamp(0.0, 1.0)
}

/// Simulates `n_trials` Ramsey shots.
pub fn sample_ramsey<R: Rng + ?Sized>(
    gamma: f64,
    omega: f64,
    t: f64,
    n_trials: u64,
    rng: &mut R,
) -> Result<ShotCounts> {
    if !(gamma >= 0.0) {
        return Err(Error::param(format!("decay rate must be >= 0, got {gamma}")));
    }
    if !(t >= 0.0) {
        return Err(Error::param(format!("evolution time must be >= 0, got {t}")));
    }
    if n_trials == 0 {
        return Err(Error::param("n_trials must be at least 1"));
    }
    let p = plus_probability(gamma, omega, t);
    let n_plus = Binomial::new(n_trials, p)
        .expect("probability is clamped to [0, 1]")
        .sample(rng);
    ShotCounts::new(n_plus, n_trials - n_plus, t)
}

/// `Γ̂ = −ln(Δ)/t`; fails when `Δ ≤ 0`.
pub fn estimate_gamma(counts: &ShotCounts) -> Result<DecayEstimate> {
    let t = counts.t;
    if !(t > 0.0) {
        return Err(Error::param("rate estimation needs t > 0"));
    }
    let delta = counts.delta();
    if delta <= 0.0 {
        return Err(Error::Estimation {
            probe: None,
            reason: format!(
                "observed contrast {delta} <= 0 at t = {t} with {} trials; raise the trial count or shorten t",
                counts.n_trials()
            ),
        });
    }
    Ok(DecayEstimate {
        gamma_hat: -delta.ln() / t,
        omega_hat: None,
        t_used: t,
        n_trials: counts.n_trials(),
        delta_observed: delta,
    })
}

/// Smallest `N` with `N ≥ (2/δ²) ln(2/ε)`.
pub fn trials_for(delta: f64, epsilon: f64) -> Result<u64> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::param(format!("delta must lie in (0, 1), got {delta}")));
    }
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::param(format!("epsilon must lie in (0, 1), got {epsilon}")));
    }
    let bound = 2.0 / (delta * delta) * (2.0 / epsilon).ln();
    // Forgive round-off so that exact integers are not pushed up by one.
    Ok((bound * (1.0 - 4.0 * f64::EPSILON)).ceil().max(1.0) as u64)
}

/// Constants of the Bernstein-type trial count for the time chooser.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChooserConstants {
    pub c: f64,
    pub k: f64,
}

impl Default for ChooserConstants {
    fn default() -> Self {
        Self { c: 0.125, k: 2.0 }
    }
}

/// `N_steps = ⌈h/μ + η⌉`.
pub fn walk_steps(h: f64, eta: f64) -> usize {
    (h / WALK_MU + eta).ceil() as usize
}

/// `N_trials = ⌈(1/c) max(K/δ, K²/δ²) ln(2/ε)⌉` for averaging walk endpoints.
pub fn walk_trials(delta: f64, epsilon: f64, constants: ChooserConstants) -> Result<u64> {
    if !(delta > 0.0) || !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::param("walk trial count needs delta > 0 and epsilon in (0, 1)"));
    }
    if !(constants.c > 0.0 && constants.k > 0.0) {
        return Err(Error::param("chooser constants must be positive"));
    }
    let k = constants.k;
    let n = (k / delta).max(k * k / (delta * delta)) * (2.0 / epsilon).ln() / constants.c;
    Ok(n.ceil() as u64)
}

/// Up-move probability after a "+" outcome.
pub fn walk_up_probability() -> f64 {
    let e = std::f64::consts::E;
    (e - 1.0) / (e + 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeChoice {
    pub t_hat: f64,
    /// Average walk endpoint; `t̂ = 2^ξ τ₀`.
    pub xi: f64,
    pub n_steps: usize,
    pub n_trials: u64,
}

fn check_walk(tau0: f64, h: f64, eta: f64, n_trials: u64) -> Result<()> {
    if !(tau0 > 0.0) {
        return Err(Error::param("tau0 must be positive"));
    }
    if !(h >= 0.0) || !(eta >= 0.0) {
        return Err(Error::param("h and eta must be nonnegative"));
    }
    if n_trials == 0 {
        return Err(Error::param("n_trials must be at least 1"));
    }
    Ok(())
}

/// Adaptive evolution-time search by a biased random walk on `t = 2^s τ₀`.
///
/// `sampler(t, rng)` runs one Ramsey shot at time `t` and returns `true` for
/// the "+" outcome.
pub fn choose_time<R, F>(
    mut sampler: F,
    tau0: f64,
    h: f64,
    eta: f64,
    n_trials: u64,
    rng: &mut R,
) -> Result<TimeChoice>
where
    R: Rng + ?Sized,
    F: FnMut(f64, &mut R) -> bool,
{
    check_walk(tau0, h, eta, n_trials)?;
    let n_steps = walk_steps(h, eta);
    let clamp = h.ceil() as i64 + WALK_CLAMP_MARGIN;
    let up = walk_up_probability();
    let mut total = 0i64;
    for _ in 0..n_trials {
        let mut s = 0i64;
        for _ in 0..n_steps {
            let t = tau0 * 2f64.powi(s as i32);
            if sampler(t, rng) {
                if rng.random::<f64>() < up {
                    s += 1;
                }
            } else {
                s -= 1;
            }
            s = s.clamp(-clamp, clamp);
        }
        total += s;
    }
    let xi = total as f64 / n_trials as f64;
    Ok(TimeChoice {
        t_hat: 2f64.powf(xi) * tau0,
        xi,
        n_steps,
        n_trials,
    })
}

/// Transition table of the walk for a known coherence: for each position
/// `s`, the probability of moving up and of staying put.
pub struct WalkTable {
    offset: i64,
    up: Vec<f64>,
    up_or_stay: Vec<f64>,
}

impl WalkTable {
    pub fn new(gamma: f64, omega: f64, tau0: f64, clamp: i64) -> Self {
        let q = walk_up_probability();
        let mut up = Vec::new();
        let mut up_or_stay = Vec::new();
        for s in -clamp..=clamp {
            let p = plus_probability(gamma, omega, tau0 * 2f64.powi(s as i32));
            up.push(p * q);
            up_or_stay.push(p);
        }
        Self {
            offset: clamp,
            up,
            up_or_stay,
        }
    }

    /// One step from `s` driven by a single uniform draw.
    #[inline]
    pub fn step(&self, s: i64, u: f64) -> i64 {
        let idx = (s + self.offset) as usize;
        let last = self.up.len() as i64 - 1 - self.offset;
        if u < self.up[idx] {
            (s + 1).min(last)
        } else if u < self.up_or_stay[idx] {
            s
        } else {
            (s - 1).max(-self.offset)
        }
    }
}

/// [`choose_time`] for a simulated coherence with known `(Γ, Ω)`, using one
/// uniform draw per step.
pub fn choose_time_simulated<R: Rng + ?Sized>(
    gamma: f64,
    omega: f64,
    tau0: f64,
    h: f64,
    eta: f64,
    n_trials: u64,
    rng: &mut R,
) -> Result<TimeChoice> {
    check_walk(tau0, h, eta, n_trials)?;
    let n_steps = walk_steps(h, eta);
    let table = WalkTable::new(gamma, omega, tau0, h.ceil() as i64 + WALK_CLAMP_MARGIN);
    let mut total = 0i64;
    for _ in 0..n_trials {
        let mut s = 0i64;
        for _ in 0..n_steps {
            s = table.step(s, rng.random::<f64>());
        }
        total += s;
    }
    let xi = total as f64 / n_trials as f64;
    Ok(TimeChoice {
        t_hat: 2f64.powf(xi) * tau0,
        xi,
        n_steps,
        n_trials,
    })
}

/// Retry policy for `Δ ≤ 0`: double the trials up to three times, then
/// halve the evolution time.
pub fn estimate_with_retry<R: Rng + ?Sized>(
    gamma: f64,
    omega: f64,
    t: f64,
    n_trials: u64,
    probe: usize,
    rng: &mut R,
) -> Result<(DecayEstimate, ShotCounts)> {
    const MAX_DOUBLINGS: usize = 3;
    const MAX_HALVINGS: usize = 20;
    let mut trials = n_trials;
    let mut time = t;
    for attempt in 0..=(MAX_DOUBLINGS + MAX_HALVINGS) {
        let counts = sample_ramsey(gamma, omega, time, trials, rng)?;
        match estimate_gamma(&counts) {
            Ok(est) => return Ok((est, counts)),
            Err(Error::Estimation { .. }) if attempt < MAX_DOUBLINGS => trials *= 2,
            Err(Error::Estimation { .. }) => time *= 0.5,
            Err(e) => return Err(e),
        }
    }
    Err(Error::Estimation {
        probe: Some(probe),
        reason: format!("contrast stayed <= 0 after retries (last t = {time}, {trials} trials)"),
    })
}

/// One point of a two-quadrature Ramsey record: `p_plus ≈ ½(1 + e^{−Γt}cos Ωt)`
/// and `p_y ≈ ½(1 + e^{−Γt}sin Ωt)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureSample {
    pub t: f64,
    pub p_plus: f64,
    pub p_y: f64,
}

const FIT_TOL: f64 = 1e-13;
const FIT_MAX_ITER: usize = 200;

/// Fits `e^{(−Γ+iΩ)t}` to the complex signal `(2p₊ − 1) + i(2p_y − 1)` by
/// damped Gauss-Newton, started from weighted log-magnitude and
/// unwrapped-phase regressions.
pub fn estimate_complex_rates(samples: &[QuadratureSample]) -> Result<(f64, f64)> {
    if samples.len() < 6 {
        return Err(Error::Estimation {
            probe: None,
            reason: format!("need at least 6 time points, got {}", samples.len()),
        });
    }
    if samples.iter().any(|s| !(s.t >= 0.0)) || samples.windows(2).any(|w| w[1].t <= w[0].t) {
        return Err(Error::param("sample times must be nonnegative and strictly increasing"));
    }
    let ts: Vec<f64> = samples.iter().map(|s| s.t).collect();
    let re: Vec<f64> = samples.iter().map(|s| 2.0 * s.p_plus - 1.0).collect();
    let im: Vec<f64> = samples.iter().map(|s| 2.0 * s.p_y - 1.0).collect();

    // Initial guess.
    let mags: Vec<f64> = re.iter().zip(&im).map(|(a, b)| a.hypot(*b)).collect();
    let mut phase = Vec::with_capacity(ts.len());
    let mut prev = im[0].atan2(re[0]);
    let mut acc = prev;
    phase.push(acc);
    for k in 1..ts.len() {
        let raw = im[k].atan2(re[k]);
        let d = (raw - prev + std::f64::consts::PI).rem_euclid(std::f64::consts::TAU)
            - std::f64::consts::PI;
        acc += d;
        prev = raw;
        phase.push(acc);
    }
    let weights: Vec<f64> = mags.iter().map(|m| m * m).collect();
    let log_mag: Vec<f64> = mags.iter().map(|m| m.max(1e-300).ln()).collect();
    let (_, slope_mag) = weighted_line(&ts, &log_mag, &weights);
    let (_, slope_phase) = weighted_line(&ts, &phase, &weights);
    let mut params = [-slope_mag, slope_phase];

    let cost = |p: [f64; 2]| -> f64 {
        ts.iter()
            .zip(re.iter().zip(&im))
            .map(|(&t, (&x, &y))| {
                let e = (-p[0] * t).exp();
                (x - e * (p[1] * t).cos()).powi(2) + (y - e * (p[1] * t).sin()).powi(2)
            })
            .sum()
    };
    let mut current = cost(params);
    let mut damping = 1e-6;
    for _ in 0..FIT_MAX_ITER {
        // Normal equations of the 2-parameter Gauss-Newton step.
        let (mut jtj, mut jtr) = ([[0.0; 2]; 2], [0.0; 2]);
        for (&t, (&x, &y)) in ts.iter().zip(re.iter().zip(&im)) {
            let e = (-params[0] * t).exp();
            let (c, s) = ((params[1] * t).cos(), (params[1] * t).sin());
            let (rx, ry) = (x - e * c, y - e * s);
            let jx = [-t * e * c, -t * e * s];
            let jy = [-t * e * s, t * e * c];
            for a in 0..2 {
                jtr[a] += jx[a] * rx + jy[a] * ry;
                for b in 0..2 {
                    jtj[a][b] += jx[a] * jx[b] + jy[a] * jy[b];
                }
            }
        }
        let solve = |lam: f64| {
            let a00 = jtj[0][0] * (1.0 + lam);
            let a11 = jtj[1][1] * (1.0 + lam);
            let det = a00 * a11 - jtj[0][1] * jtj[1][0];
            [
                (a11 * jtr[0] - jtj[0][1] * jtr[1]) / det,
                (a00 * jtr[1] - jtj[1][0] * jtr[0]) / det,
            ]
        };
        let mut accepted = false;
        for _ in 0..40 {
            let step = solve(damping);
            if !step.iter().all(|s| s.is_finite()) {
                damping *= 10.0;
                continue;
            }
            let trial = [params[0] + step[0], params[1] + step[1]];
            let c = cost(trial);
            if c <= current {
                let small = step[0].abs() <= FIT_TOL * (1.0 + params[0].abs())
                    && step[1].abs() <= FIT_TOL * (1.0 + params[1].abs());
                params = trial;
                current = c;
                damping = (damping * 0.3).max(1e-12);
                accepted = true;
                if small {
                    return Ok((params[0], params[1]));
                }
                break;
            }
            damping *= 10.0;
        }
        if !accepted {
            // No descent direction left: we are at a stationary point.
            return Ok((params[0], params[1]));
        }
    }
    Err(Error::Estimation {
        probe: None,
        reason: format!(
            "damped oscillation fit did not converge (Γ = {}, Ω = {}, cost {current:e})",
            params[0], params[1]
        ),
    })
}

/// Weighted least-squares line `y ≈ a + b x`; returns `(a, b)`.
pub(crate) fn weighted_line(x: &[f64], y: &[f64], w: &[f64]) -> (f64, f64) {
    let sw: f64 = w.iter().sum();
    let mx = x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let my = y.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for ((&xi, &yi), &wi) in x.iter().zip(y).zip(w) {
        sxx += wi * (xi - mx) * (xi - mx);
        sxy += wi * (xi - mx) * (yi - my);
    }
    let b = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (my - b * mx, b)
}

/// One row of an exported shot record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShotRecord {
    pub probe_id: usize,
    pub t: f64,
    pub n_plus: u64,
    pub n_minus: u64,
    pub seed: u64,
}

pub const SHOT_CSV_HEADER: &str = "probe_id,t,n_plus,n_minus,seed";

impl ShotRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{:e},{},{},{}",
            self.probe_id, self.t, self.n_plus, self.n_minus, self.seed
        )
    }
}
