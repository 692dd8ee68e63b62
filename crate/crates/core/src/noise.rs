//! Noise processes: nuclear and electron decoherence, two-qubit gate
//! depolarization, readout errors and the heralded Bell-pair source.

use rand::Rng;
use thiserror::Error;

use crate::densmat::{gates, max_abs, CMatrix, QubitId, Register, RegisterError, C64};

const COMPLETENESS_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NoiseError {
    #[error("negative duration {0}")]
    NegativeTime(f64),
    #[error("probability {0} outside [0, 1]")]
    InvalidProbability(f64),
    #[error("invalid decoherence times T1 = {t1}, T2 = {t2}")]
    InvalidPair { t1: f64, t2: f64 },
    #[error("time constant must be positive, got {0}")]
    NonPositiveTime(f64),
    #[error("empty list of time constants")]
    Empty,
    #[error("Kraus set is not complete (deviation {0:.3e})")]
    Incomplete(f64),
    #[error(transparent)]
    Register(#[from] RegisterError),
}

/// Relaxation and dephasing times of a qubit. `t1 = f64::INFINITY` means no
/// amplitude damping.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecoherencePair {
    pub t1: f64,
    pub t2: f64,
}

impl DecoherencePair {
    pub fn new(t1: f64, t2: f64) -> Result<Self, NoiseError> {
        let ok = t1 > 0.0 && t2 > 0.0 && t2.is_finite() && t2 <= 2.0 * t1;
        if !ok {
            return Err(NoiseError::InvalidPair { t1, t2 });
        }
        Ok(Self { t1, t2 })
    }

    /// Pure dephasing, no relaxation.
    pub fn dephasing_only(t2: f64) -> Result<Self, NoiseError> {
        Self::new(f64::INFINITY, t2)
    }
}

#[derive(Debug, Clone)]
pub struct KrausSet {
    pub ops: Vec<CMatrix>,
    pub arity: usize,
}

impl KrausSet {
    pub fn new(ops: Vec<CMatrix>) -> Result<Self, NoiseError> {
        let d = ops.first().map(|k| k.nrows()).ok_or(NoiseError::Empty)?;
        let arity = d.trailing_zeros() as usize;
        let dev = completeness_defect(&ops);
        if dev > COMPLETENESS_TOL {
            return Err(NoiseError::Incomplete(dev));
        }
        Ok(Self { ops, arity })
    }

    /// Superoperator on the row-major vectorization of ρ.
    pub fn superop(&self) -> CMatrix {
        let d = 1usize << self.arity;
        let mut s = CMatrix::zeros(d * d, d * d);
        for k in &self.ops {
            s += k.kronecker(&k.conjugate());
        }
        s
    }

    pub fn apply(&self, rho: &CMatrix) -> CMatrix {
        let d = rho.nrows();
        let mut out = CMatrix::zeros(d, d);
        for k in &self.ops {
            out += k * rho * k.adjoint();
        }
        out
    }
}

pub fn completeness_defect(ops: &[CMatrix]) -> f64 {
    let d = ops[0].nrows();
    let mut sum = CMatrix::zeros(d, d);
    for k in ops {
        sum += k.adjoint() * k;
    }
    max_abs(&(sum - CMatrix::identity(d, d)))
}

fn real2(a: f64, b: f64, c: f64, d: f64) -> CMatrix {
    CMatrix::from_row_slice(2, 2, &[C64::new(a, 0.0), C64::new(b, 0.0), C64::new(c, 0.0), C64::new(d, 0.0)])
}

fn check_time(t: f64) -> Result<(), NoiseError> {
    if t < 0.0 || t.is_nan() {
        return Err(NoiseError::NegativeTime(t));
    }
    Ok(())
}

fn check_prob(p: f64) -> Result<(), NoiseError> {
    if !(0.0..=1.0).contains(&p) {
        return Err(NoiseError::InvalidProbability(p));
    }
    Ok(())
}

/// Generalized amplitude damping towards I/2.
pub fn gad_kraus(t: f64, t1: f64) -> Result<KrausSet, NoiseError> {
    check_time(t)?;
    if t1 <= 0.0 || t1.is_nan() {
        return Err(NoiseError::NonPositiveTime(t1));
    }
    let s = std::f64::consts::FRAC_1_SQRT_2;
    // √(1−γ₁) and √γ₁ without cancellation.
    let a = (-0.5 * t / t1).exp();
    let b = (-(-t / t1).exp_m1()).sqrt();
    KrausSet::new(vec![
        real2(s, 0.0, 0.0, s * a),
        real2(0.0, s * b, 0.0, 0.0),
        real2(s * a, 0.0, 0.0, s),
        real2(0.0, 0.0, s * b, 0.0),
    ])
}

/// 1/T̄2 = 2/T2 − 1/T1.
pub fn effective_t2bar(pair: DecoherencePair) -> Result<f64, NoiseError> {
    let rate = 2.0 / pair.t2 - 1.0 / pair.t1;
    if rate <= 0.0 || !rate.is_finite() {
        return Err(NoiseError::InvalidPair { t1: pair.t1, t2: pair.t2 });
    }
    Ok(1.0 / rate)
}

pub fn pd_kraus(t: f64, t2bar: f64) -> Result<KrausSet, NoiseError> {
    check_time(t)?;
    if t2bar <= 0.0 || t2bar.is_nan() {
        return Err(NoiseError::NonPositiveTime(t2bar));
    }
    let a = (-0.5 * t / t2bar).exp();
    let b = (-(-t / t2bar).exp_m1()).sqrt();
    KrausSet::new(vec![real2(1.0, 0.0, 0.0, a), real2(0.0, 0.0, 0.0, b)])
}

/// Combined GAD then PD superoperator for an idle interval.
pub fn decoherence_superop(t: f64, pair: DecoherencePair) -> Result<CMatrix, NoiseError> {
    let pd = pd_kraus(t, effective_t2bar(pair)?)?.superop();
    if pair.t1.is_finite() {
        Ok(pd * gad_kraus(t, pair.t1)?.superop())
    } else {
        Ok(pd)
    }
}

/// Superoperator of the unital qubit channel that scales ⟨X⟩, ⟨Y⟩ by
/// `lambda_xy` and ⟨Z⟩ by `lambda_z`. PD∘GAD over `t` is the case
/// λ_xy = e^{−t/T2}, λ_z = e^{−t/T1}, and such channels compose by
/// multiplying their factors.
pub fn pauli_decay_superop(lambda_xy: f64, lambda_z: f64) -> CMatrix {
    let mut s = CMatrix::zeros(4, 4);
    let (keep, flip) = (0.5 * (1.0 + lambda_z), 0.5 * (1.0 - lambda_z));
    s[(0, 0)] = C64::new(keep, 0.0);
    s[(3, 3)] = C64::new(keep, 0.0);
    s[(0, 3)] = C64::new(flip, 0.0);
    s[(3, 0)] = C64::new(flip, 0.0);
    s[(1, 1)] = C64::new(lambda_xy, 0.0);
    s[(2, 2)] = C64::new(lambda_xy, 0.0);
    s
}

pub fn idle_decoherence(reg: &mut Register, q: QubitId, t: f64, pair: DecoherencePair) -> Result<(), NoiseError> {
    check_time(t)?;
    if !reg.is_allocated(q) {
        return Err(RegisterError::UnknownQubit(q).into());
    }
    if t == 0.0 {
        return Ok(());
    }
    let s = decoherence_superop(t, pair)?;
    reg.apply_superop(&[q], &s)?;
    Ok(())
}

/// Kraus form of the two-qubit depolarizing channel.
pub fn depolarizing_kraus(p: f64) -> Result<KrausSet, NoiseError> {
    check_prob(p)?;
    let mut ops = Vec::with_capacity(16);
    for i in 0..4 {
        for j in 0..4 {
            let w = if i == 0 && j == 0 { 1.0 - p } else { p / 15.0 };
            if w > 0.0 {
                ops.push(gates::pauli(i).kronecker(&gates::pauli(j)) * C64::new(w.sqrt(), 0.0));
            }
        }
    }
    KrausSet::new(ops)
}

pub fn depolarize_two_qubit(reg: &mut Register, q1: QubitId, q2: QubitId, p: f64) -> Result<(), NoiseError> {
    check_prob(p)?;
    if p == 0.0 {
        return Ok(());
    }
    reg.apply_superop(&[q1, q2], &depolarizing_kraus(p)?.superop())?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Basis {
    Z,
    X,
}

/// Projective measurement whose outcome and post-state are both flipped
/// with probability `p_m`. X-basis measurements rotate with a Hadamard first.
pub fn noisy_measure<R: Rng + ?Sized>(
    reg: &mut Register,
    q: QubitId,
    basis: Basis,
    p_m: f64,
    rng: &mut R,
) -> Result<u8, NoiseError> {
    check_prob(p_m)?;
    if basis == Basis::X {
        reg.apply_unitary(&[q], &gates::h())?;
    }
    let flip = p_m > 0.0 && rng.gen::<f64>() < p_m;
    if flip {
        reg.apply_unitary(&[q], &gates::x())?;
    }
    Ok(reg.measure_z(q, rng)?)
}

/// (1 − p_n)|ψ⟩⟨ψ| + p_n|11⟩⟨11| with |ψ⟩ = (|01⟩ + |10⟩)/√2.
pub fn re_bell_source(p_n: f64) -> Result<CMatrix, NoiseError> {
    check_prob(p_n)?;
    let mut rho = CMatrix::zeros(4, 4);
    let h = C64::new(0.5 * (1.0 - p_n), 0.0);
    rho[(1, 1)] = h;
    rho[(1, 2)] = h;
    rho[(2, 1)] = h;
    rho[(2, 2)] = h;
    rho[(3, 3)] = C64::new(p_n, 0.0);
    Ok(rho)
}

/// Source state after an X on the second qubit: a noisy (|00⟩ + |11⟩)/√2.
pub fn re_bell_resource(p_n: f64) -> Result<CMatrix, NoiseError> {
    let x2 = gates::identity().kronecker(&gates::x());
    Ok(&x2 * re_bell_source(p_n)? * &x2)
}

/// Root-sum-square combination of dephasing times: (Σ 1/Tᵢ²)^(−1/2).
pub fn quadrature_combine(times: &[f64]) -> Result<f64, NoiseError> {
    if times.is_empty() {
        return Err(NoiseError::Empty);
    }
    let mut acc = 0.0;
    for &t in times {
        if t <= 0.0 || t.is_nan() {
            return Err(NoiseError::NonPositiveTime(t));
        }
        acc += 1.0 / (t * t);
    }
    Ok(acc.powf(-0.5))
}
