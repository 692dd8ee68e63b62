//! Three-tone weak microwave drive on the electron spin-1 coupled to the
//! nitrogen spin-1, in the frame rotating with the driven transition.
//!
//! Electron and nitrogen levels are ordered m = +1, 0, −1. The electron
//! m_s = +1 level is the undriven one, offset by 2D. The nitrogen projection
//! is conserved, so the 9-level problem splits into three 3-level blocks.

use std::f64::consts::{FRAC_1_SQRT_2, TAU};

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use thiserror::Error;

use crate::densmat::{CMatrix, C64};
use crate::streams::derive_stream;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PulseError {
    #[error("time step {dt} s exceeds the limit {limit} s")]
    StepTooLarge { dt: f64, limit: f64 },
    #[error("invalid parameter {name} = {value}")]
    InvalidParameter { name: &'static str, value: f64 },
    #[error("need at least {min} detuning samples, got {got}")]
    TooFewSamples { min: usize, got: usize },
    #[error("AC-Stark shift undefined at zero detuning")]
    ZeroDetuning,
}

const M: [f64; 3] = [1.0, 0.0, -1.0];
const UP: usize = 0;
const ZERO: usize = 1;
const DOWN: usize = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct PulseParameters {
    /// Zero-field splitting, rad/s.
    pub d: f64,
    /// Nitrogen quadrupole splitting, rad/s.
    pub q: f64,
    /// Nitrogen Zeeman term γ_N·B_z, rad/s.
    pub gamma_n_bz: f64,
    /// Electron-nitrogen hyperfine A∥, rad/s.
    pub a_par: f64,
    /// Rabi frequency of each tone, rad/s.
    pub omega: f64,
    /// Relative amplitude of the tones at offsets 0, +A∥, −A∥.
    pub tone_scale: [f64; 3],
    pub phases: [f64; 3],
    /// Standard deviation of the transition frequency, Hz.
    pub sigma_f: f64,
    /// Length of a simulated trajectory, s.
    pub duration: f64,
    pub dt: f64,
}

impl Default for PulseParameters {
    fn default() -> Self {
        Self {
            d: TAU * 2.877e9,
            q: -TAU * 4.945e6,
            gamma_n_bz: TAU * 3.077e3 * 46.8,
            a_par: TAU * 2.18e6,
            omega: TAU * 92e3,
            tone_scale: [1.0; 3],
            phases: [0.0; 3],
            sigma_f: 4.5e3,
            duration: 8e-6,
            dt: 1e-9,
        }
    }
}

impl PulseParameters {
    /// Largest step that resolves the drive: 1/(50·f) for the fastest
    /// time-dependent frequency f. Static terms are exponentiated exactly.
    pub fn max_dt(&self) -> f64 {
        let f = self.a_par.abs().max(self.omega.abs()) / TAU;
        1.0 / (50.0 * f)
    }

    pub fn validate(&self) -> Result<(), PulseError> {
        for (name, value) in [("d", self.d), ("q", self.q), ("gamma_n_bz", self.gamma_n_bz), ("a_par", self.a_par)] {
            if !value.is_finite() {
                return Err(PulseError::InvalidParameter { name, value });
            }
        }
        if !(self.omega > 0.0 && self.omega.is_finite()) {
            return Err(PulseError::InvalidParameter { name: "omega", value: self.omega });
        }
        if !(self.sigma_f >= 0.0 && self.sigma_f.is_finite()) {
            return Err(PulseError::InvalidParameter { name: "sigma_f", value: self.sigma_f });
        }
        if !(self.duration > 0.0) {
            return Err(PulseError::InvalidParameter { name: "duration", value: self.duration });
        }
        if !(self.dt > 0.0) || self.dt > self.max_dt() {
            return Err(PulseError::StepTooLarge { dt: self.dt, limit: self.max_dt() });
        }
        Ok(())
    }

    /// Sum over tones of e^{iθ_k(t)} times the tone amplitude.
    fn drive_phasor(&self, t: f64) -> C64 {
        let offsets = [0.0, self.a_par, -self.a_par];
        (0..3)
            .map(|k| C64::from_polar(self.tone_scale[k], offsets[k] * t + self.phases[k]))
            .sum::<C64>()
    }
}

/// Spin-1 S_z, S_x, S_y in the m = +1, 0, −1 basis.
fn spin1() -> [Matrix3<C64>; 3] {
    let r = C64::new(FRAC_1_SQRT_2, 0.0);
    let i = C64::new(0.0, FRAC_1_SQRT_2);
    let z = C64::new(0.0, 0.0);
    let sz = Matrix3::from_diagonal(&Vector3::new(C64::new(1.0, 0.0), z, C64::new(-1.0, 0.0)));
    let sx = Matrix3::new(z, r, z, r, z, r, z, r, z);
    let sy = Matrix3::new(z, -i, z, i, z, -i, z, i, z);
    [sz, sx, sy]
}

/// Hamiltonian of the block with nitrogen projection `m_i` (+1, 0 or −1)
/// at time `t` with a quasi-static detuning δ·S_z.
pub fn block_hamiltonian(p: &PulseParameters, m_i: f64, delta: f64, t: f64) -> Matrix3<C64> {
    let mut h = Matrix3::<C64>::zeros();
    let base = p.q * m_i * m_i + p.gamma_n_bz * m_i;
    for (k, &m_s) in M.iter().enumerate() {
        let undriven = if k == UP { 2.0 * p.d } else { 0.0 };
        h[(k, k)] = C64::new(undriven + base + (p.a_par * m_i + delta) * m_s, 0.0);
    }
    // (Ω/√2)(cos θ S_x − sin θ S_y) summed over tones gives Ω/2·e^{±iθ}
    // on the ladder elements.
    let c = p.drive_phasor(t) * (0.5 * p.omega);
    h[(ZERO, DOWN)] = c;
    h[(DOWN, ZERO)] = c.conj();
    h[(ZERO, UP)] = c.conj();
    h[(UP, ZERO)] = c;
    h
}

/// Full 9×9 Hamiltonian, index = 3·electron + nitrogen.
pub fn hamiltonian_at(p: &PulseParameters, delta: f64, t: f64) -> CMatrix {
    let [sz, sx, sy] = spin1();
    let eye = Matrix3::<C64>::identity();
    let kron = |a: &Matrix3<C64>, b: &Matrix3<C64>| {
        CMatrix::from_fn(9, 9, |r, c| a[(r / 3, c / 3)] * b[(r % 3, c % 3)])
    };
    let mut two = Matrix3::<C64>::zeros();
    two[(UP, UP)] = C64::new(1.0, 0.0);
    let cr = |x: f64| C64::new(x, 0.0);
    let mut h = kron(&two, &eye) * cr(2.0 * p.d)
        + kron(&eye, &(sz * sz)) * cr(p.q)
        + kron(&eye, &sz) * cr(p.gamma_n_bz)
        + kron(&sz, &sz) * cr(p.a_par)
        + kron(&sz, &eye) * cr(delta);
    let offsets = [0.0, p.a_par, -p.a_par];
    for (k, offset) in offsets.iter().enumerate() {
        let theta = offset * t + p.phases[k];
        let drive = (sx * cr(theta.cos()) - sy * cr(theta.sin())) * cr(FRAC_1_SQRT_2 * p.omega * p.tone_scale[k]);
        h += kron(&drive, &eye);
    }
    h
}

/// exp(−iH·dt) for a Hermitian 3×3 H.
fn step_propagator(h: Matrix3<C64>, dt: f64) -> Matrix3<C64> {
    let eig = SymmetricEigen::new(h);
    let phases = eig.eigenvalues.map(|e| C64::from_polar(1.0, -e * dt));
    let v = eig.eigenvectors;
    v * Matrix3::from_diagonal(&phases) * v.adjoint()
}

fn check_time(t: f64) -> Result<(), PulseError> {
    if t >= 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(PulseError::InvalidParameter { name: "time", value: t })
    }
}

/// Evolve electron |0⟩ in block `m_i` for `t_end` and call `visit` with the
/// time and state after every step.
fn evolve_block<F: FnMut(f64, &Vector3<C64>)>(p: &PulseParameters, m_i: f64, delta: f64, t_end: f64, mut visit: F) -> Vector3<C64> {
    let mut psi = Vector3::new(C64::new(0.0, 0.0), C64::new(1.0, 0.0), C64::new(0.0, 0.0));
    let steps = (t_end / p.dt).round() as usize;
    let mut t = 0.0;
    for n in 0..steps {
        let t_next = if n + 1 == steps { t_end } else { (n + 1) as f64 * p.dt };
        let h = block_hamiltonian(p, m_i, delta, 0.5 * (t + t_next));
        psi = step_propagator(h, t_next - t) * psi;
        t = t_next;
        visit(t, &psi);
    }
    psi
}

/// Populations P(m_s) for each nitrogen block (rows m_I = +1, 0, −1) after
/// driving for `t_end`.
pub fn final_populations(p: &PulseParameters, delta: f64, t_end: f64) -> Result<[[f64; 3]; 3], PulseError> {
    p.validate()?;
    check_time(t_end)?;
    let mut out = [[0.0; 3]; 3];
    for (row, &m_i) in M.iter().enumerate() {
        let psi = evolve_block(p, m_i, delta, t_end, |_, _| {});
        out[row] = [psi[0].norm_sqr(), psi[1].norm_sqr(), psi[2].norm_sqr()];
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PulseTrajectory {
    pub times: Vec<f64>,
    /// P(m_s = 0) per nitrogen block m_I = +1, 0, −1.
    pub p0: [Vec<f64>; 3],
    /// P(m_s = −1) per nitrogen block.
    pub p_minus: [Vec<f64>; 3],
    /// Largest deviation of the state norm from 1.
    pub norm_drift: f64,
}

impl PulseTrajectory {
    /// Electron |0⟩ population for the equal mixture of nitrogen states.
    pub fn averaged_p0(&self) -> Vec<f64> {
        (0..self.times.len()).map(|i| (self.p0[0][i] + self.p0[1][i] + self.p0[2][i]) / 3.0).collect()
    }

    pub fn averaged_p_minus(&self) -> Vec<f64> {
        (0..self.times.len()).map(|i| (self.p_minus[0][i] + self.p_minus[1][i] + self.p_minus[2][i]) / 3.0).collect()
    }
}

/// Drive electron |0⟩ for `p.duration`, recording populations at t = 0 and
/// after every step.
pub fn propagate(p: &PulseParameters, delta: f64) -> Result<PulseTrajectory, PulseError> {
    p.validate()?;
    let steps = (p.duration / p.dt).round() as usize;
    let mut times = Vec::with_capacity(steps + 1);
    times.push(0.0);
    let mut p0: [Vec<f64>; 3] = Default::default();
    let mut p_minus: [Vec<f64>; 3] = Default::default();
    let mut norm_drift: f64 = 0.0;
    for (row, &m_i) in M.iter().enumerate() {
        p0[row].push(1.0);
        p_minus[row].push(0.0);
        evolve_block(p, m_i, delta, p.duration, |t, psi| {
            if row == 0 {
                times.push(t);
            }
            p0[row].push(psi[ZERO].norm_sqr());
            p_minus[row].push(psi[DOWN].norm_sqr());
            norm_drift = norm_drift.max((psi.norm_squared() - 1.0).abs());
        });
    }
    Ok(PulseTrajectory { times, p0, p_minus, norm_drift })
}

/// Time of the first maximum of the nitrogen-averaged inversion without
/// detuning, refined by a parabola through the three samples around it.
pub fn pi_time(p: &PulseParameters) -> Result<f64, PulseError> {
    let traj = propagate(p, 0.0)?;
    let inv = traj.averaged_p_minus();
    let mut best = 1;
    for i in 1..inv.len() - 1 {
        if inv[i] > inv[best] {
            best = i;
        }
        if inv[i] < inv[best] - 0.2 {
            break;
        }
    }
    if best + 1 >= inv.len() {
        return Ok(traj.times[best]);
    }
    let (a, b, c) = (inv[best - 1], inv[best], inv[best + 1]);
    let denom = a - 2.0 * b + c;
    let shift = if denom.abs() > 0.0 { 0.5 * (a - c) / denom } else { 0.0 };
    Ok(traj.times[best] + shift * p.dt)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Infidelity {
    pub mean: f64,
    pub stderr: f64,
    pub pi_time: f64,
}

/// Mean of 1 − P(m_s = −1) at the π time over Gaussian detunings with
/// standard deviation 2π·σ_f and over the nitrogen projections. Sample `i`
/// uses stream `i` of `master_seed`.
pub fn inversion_infidelity(p: &PulseParameters, n_samples: usize, master_seed: u64) -> Result<Infidelity, PulseError> {
    if n_samples < 100 {
        return Err(PulseError::TooFewSamples { min: 100, got: n_samples });
    }
    let t_pi = pi_time(p)?;
    let normal = Normal::new(0.0, TAU * p.sigma_f).map_err(|_| PulseError::InvalidParameter { name: "sigma_f", value: p.sigma_f })?;
    let values: Vec<f64> = (0..n_samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = derive_stream(master_seed, i as u64);
            let delta = normal.sample(&mut rng);
            let pops = final_populations(p, delta, t_pi)?;
            Ok(1.0 - pops.iter().map(|row| row[DOWN]).sum::<f64>() / 3.0)
        })
        .collect::<Result<_, PulseError>>()?;
    let n = n_samples as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(Infidelity { mean, stderr: (var / n).sqrt(), pi_time: t_pi })
}

/// Approximate AC-Stark shift Ω²/(2Δ) of a tone detuned by Δ.
pub fn ac_stark(omega: f64, delta: f64) -> Result<f64, PulseError> {
    if delta == 0.0 {
        return Err(PulseError::ZeroDetuning);
    }
    Ok(omega * omega / (2.0 * delta))
}
