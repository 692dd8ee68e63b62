//! Monte-Carlo model of the phase a nuclear spin picks up through the
//! hyperfine coupling while the electron runs remote-entanglement attempts.
//!
//! Phases are tracked in the frame where electron state 0 adds nothing.

use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::streams::{derive_stream, StreamRng};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DephasingError {
    #[error("invalid parameter {name} = {value}")]
    InvalidParameter { name: &'static str, value: f64 },
    #[error("need at least {min} {what}, got {got}")]
    TooFew { what: &'static str, min: usize, got: usize },
}

fn check_prob(name: &'static str, value: f64) -> Result<(), DephasingError> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(DephasingError::InvalidParameter { name, value })
    }
}

fn check_time(name: &'static str, value: f64) -> Result<(), DephasingError> {
    if value >= 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(DephasingError::InvalidParameter { name, value })
    }
}

/// Distribution of the time the optical reset needs to bring the electron
/// back to 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ResetModel {
    /// Mixture of Exp(τ₁) and Exp(τ₂) with weights A and B.
    TwoTimescale { a: f64, b: f64, tau1: f64, tau2: f64 },
    SingleExponential { mean: f64 },
}

impl ResetModel {
    /// Fit of the measured repump curve.
    pub fn measured() -> Self {
        ResetModel::TwoTimescale { a: 0.480, b: 0.503, tau1: 142e-9, tau2: 905e-9 }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            ResetModel::TwoTimescale { a, b, tau1, tau2 } => (a * tau1 + b * tau2) / (a + b),
            ResetModel::SingleExponential { mean } => mean,
        }
    }

    pub fn validate(&self) -> Result<(), DephasingError> {
        let positive = |name, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(DephasingError::InvalidParameter { name, value: v })
            }
        };
        match *self {
            ResetModel::TwoTimescale { a, b, tau1, tau2 } => {
                positive("reset.a", a)?;
                positive("reset.b", b)?;
                positive("reset.tau1", tau1)?;
                positive("reset.tau2", tau2)
            }
            ResetModel::SingleExponential { mean } => positive("reset.mean", mean),
        }
    }
}

/// Draw one reset time.
pub fn sample_reset_time<R: Rng + ?Sized>(model: &ResetModel, rng: &mut R) -> f64 {
    // 1 - u lies in (0, 1], so the logarithm is finite.
    let exp = |rng: &mut R, tau: f64| -tau * (1.0 - rng.gen::<f64>()).ln();
    match *model {
        ResetModel::TwoTimescale { a, b, tau1, tau2 } => {
            let tau = if rng.gen::<f64>() * (a + b) < a { tau1 } else { tau2 };
            exp(rng, tau)
        }
        ResetModel::SingleExponential { mean } => exp(rng, mean),
    }
}

/// Electron spin projection drawn with P(0) = 1 − p_init and
/// P(−1) = P(+1) = p_init/2.
pub fn sample_initial_state<R: Rng + ?Sized>(p_init: f64, rng: &mut R) -> i8 {
    let r: f64 = rng.gen();
    if r < 1.0 - p_init {
        0
    } else if r < 1.0 - 0.5 * p_init {
        -1
    } else {
        1
    }
}

/// Inversion probability of an α rotation, sin²(α/2).
pub fn p_mw_from_alpha(alpha: f64) -> f64 {
    (0.5 * alpha).sin().powi(2)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DephasingConfig {
    /// Hyperfine coupling A∥ in rad/s.
    pub a_par: f64,
    pub p_init: f64,
    pub p_mw: f64,
    pub p_opt: f64,
    pub p_echo: f64,
    pub t_a: f64,
    pub t_b: f64,
    pub reset: ResetModel,
    pub n_trials: usize,
    pub n_samples: usize,
    pub echo: bool,
}

impl DephasingConfig {
    /// Sequence as run in the experiment, without an electron echo.
    pub fn no_echo() -> Self {
        Self {
            a_par: 2.0 * std::f64::consts::PI * 80.0,
            p_init: 0.03,
            p_mw: 0.5,
            p_opt: 0.01,
            p_echo: 0.0,
            t_a: 6.1e-6,
            t_b: 2.4e-6,
            reset: ResetModel::measured(),
            n_trials: 1_000_000,
            n_samples: 4000,
            echo: false,
        }
    }

    /// Faster sequence with an electron echo in the middle of t_b.
    pub fn with_echo() -> Self {
        Self {
            p_init: 0.01,
            p_echo: 0.01,
            t_a: 5.1e-6,
            t_b: 1.3e-6,
            reset: ResetModel::SingleExponential { mean: 200e-9 },
            n_samples: 1000,
            echo: true,
            ..Self::no_echo()
        }
    }

    pub fn validate(&self) -> Result<(), DephasingError> {
        if !self.a_par.is_finite() {
            return Err(DephasingError::InvalidParameter { name: "a_par", value: self.a_par });
        }
        check_prob("p_init", self.p_init)?;
        check_prob("p_mw", self.p_mw)?;
        check_prob("p_opt", self.p_opt)?;
        check_prob("p_echo", self.p_echo)?;
        check_time("t_a", self.t_a)?;
        check_time("t_b", self.t_b)?;
        self.reset.validate()?;
        if self.n_trials < 1 {
            return Err(DephasingError::TooFew { what: "trials", min: 1, got: self.n_trials });
        }
        if self.n_samples < 2 {
            return Err(DephasingError::TooFew { what: "samples", min: 2, got: self.n_samples });
        }
        Ok(())
    }
}

/// Swap 0 and −1, leave +1.
fn flip(s: i8) -> i8 {
    match s {
        0 => -1,
        -1 => 0,
        other => other,
    }
}

/// Phase of one entanglement attempt.
pub fn run_trial<R: Rng + ?Sized>(cfg: &DephasingConfig, rng: &mut R) -> f64 {
    let mut s = sample_initial_state(cfg.p_init, rng);
    let mut weighted = s as f64 * cfg.t_a;
    if rng.gen::<f64>() < cfg.p_mw {
        s = flip(s);
    }
    if rng.gen::<f64>() < cfg.p_opt && s == 0 {
        s = if rng.gen::<f64>() < 0.5 { -1 } else { 1 };
    }
    if cfg.echo {
        weighted += s as f64 * 0.5 * cfg.t_b;
        if rng.gen::<f64>() > cfg.p_echo {
            s = flip(s);
        }
        weighted += s as f64 * 0.5 * cfg.t_b;
    } else {
        weighted += s as f64 * cfg.t_b;
    }
    if s != 0 {
        let mut t_c = sample_reset_time(&cfg.reset, rng);
        if cfg.echo {
            // The echo timing already places the mean reset time in the
            // second half of t_b.
            t_c -= cfg.reset.mean();
        }
        weighted += s as f64 * t_c;
    }
    cfg.a_par * weighted
}

/// Sample average of cos(Φₙ − Φ̄ₙ) for n = 0..=N, with its standard error.
#[derive(Debug, Clone, PartialEq)]
pub struct DephasingCurve {
    pub mean_cos: Vec<f64>,
    pub stderr_cos: Vec<f64>,
    pub n_samples: usize,
}

impl DephasingCurve {
    pub fn n_trials(&self) -> usize {
        self.mean_cos.len() - 1
    }

    /// F(n) = ½ + ½⟨cos(Φₙ − Φ̄ₙ)⟩.
    pub fn fidelity(&self, n: usize) -> f64 {
        0.5 + 0.5 * self.mean_cos[n]
    }

    pub fn fidelity_stderr(&self, n: usize) -> f64 {
        0.5 * self.stderr_cos[n]
    }
}

const BLOCK: usize = 1024;

/// Ensemble of `n_samples` phase walks of `n_trials` steps, sample `k` using
/// stream `k` of `master_seed`. `step` draws one trial phase.
pub fn ensemble_with<F>(n_trials: usize, n_samples: usize, master_seed: u64, step: F) -> Result<DephasingCurve, DephasingError>
where
    F: Fn(&mut StreamRng) -> f64 + Sync,
{
    if n_samples < 2 {
        return Err(DephasingError::TooFew { what: "samples", min: 2, got: n_samples });
    }
    let k = n_samples;
    let mut rngs: Vec<StreamRng> = (0..k as u64).map(|i| derive_stream(master_seed, i)).collect();
    // Deviation of each sample from the running sample mean. Updating it
    // with per-trial deviations cancels any offset common to all samples.
    let mut dev = vec![0.0f64; k];
    let mut buf = vec![0.0f64; k * BLOCK];
    let mut mean_cos = Vec::with_capacity(n_trials + 1);
    let mut stderr_cos = Vec::with_capacity(n_trials + 1);
    mean_cos.push(1.0);
    stderr_cos.push(0.0);
    let kf = k as f64;

    let mut done = 0;
    while done < n_trials {
        let b = BLOCK.min(n_trials - done);
        buf.par_chunks_mut(BLOCK).zip(rngs.par_iter_mut()).for_each(|(row, rng)| {
            for x in row[..b].iter_mut() {
                *x = step(rng);
            }
        });
        for j in 0..b {
            let mean_step = (0..k).map(|s| buf[s * BLOCK + j]).sum::<f64>() / kf;
            let (mut c1, mut c2) = (0.0, 0.0);
            for (s, d) in dev.iter_mut().enumerate() {
                *d += buf[s * BLOCK + j] - mean_step;
                let c = d.cos();
                c1 += c;
                c2 += c * c;
            }
            let m = c1 / kf;
            let var = ((c2 - kf * m * m) / (kf - 1.0)).max(0.0);
            mean_cos.push(m);
            stderr_cos.push((var / kf).sqrt());
        }
        done += b;
    }
    Ok(DephasingCurve { mean_cos, stderr_cos, n_samples })
}

pub fn run_ensemble(cfg: &DephasingConfig, master_seed: u64) -> Result<DephasingCurve, DephasingError> {
    cfg.validate()?;
    ensemble_with(cfg.n_trials, cfg.n_samples, master_seed, |rng| run_trial(cfg, rng))
}

/// First n at which ⟨cos(Φₙ − Φ̄ₙ)⟩ drops below 1/e, interpolated linearly
/// between trial counts. None if the curve never crosses.
pub fn decay_constant(curve: &DephasingCurve) -> Option<f64> {
    let threshold = (-1.0f64).exp();
    let c = &curve.mean_cos;
    (1..c.len()).find(|&n| c[n] < threshold).map(|n| {
        let (hi, lo) = (c[n - 1], c[n]);
        (n - 1) as f64 + (hi - threshold) / (hi - lo)
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridPoint {
    pub p_init: f64,
    pub p_echo: f64,
    pub fidelity: f64,
    pub stderr: f64,
}

/// Final fidelity over a grid of initialisation and echo errors. Point `i`
/// of the row-major grid uses master seed `master_seed + i`.
pub fn sweep_echo_grid(base: &DephasingConfig, p_inits: &[f64], p_echos: &[f64], master_seed: u64) -> Result<Vec<GridPoint>, DephasingError> {
    if p_inits.is_empty() || p_echos.is_empty() {
        return Err(DephasingError::TooFew { what: "grid values", min: 1, got: 0 });
    }
    let mut out = Vec::with_capacity(p_inits.len() * p_echos.len());
    for &p_init in p_inits {
        for &p_echo in p_echos {
            let cfg = DephasingConfig { p_init, p_echo, echo: true, ..base.clone() };
            let seed = master_seed.wrapping_add(out.len() as u64);
            let curve = run_ensemble(&cfg, seed)?;
            let n = curve.n_trials();
            out.push(GridPoint { p_init, p_echo, fidelity: curve.fidelity(n), stderr: curve.fidelity_stderr(n) });
        }
    }
    Ok(out)
}
