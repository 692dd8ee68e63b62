//! Factored density-matrix register.
//!
//! Qubits live in independent factors that are merged lazily when a
//! multi-qubit operation spans more than one factor. Measurement and
//! discarding shrink factors again. Inside a factor the first qubit is the
//! most significant bit of the basis index.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use thiserror::Error;

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;

/// Allowed deviation of a factor trace from one.
pub const TRACE_TOL: f64 = 1e-10;
/// Most negative eigenvalue tolerated by [`Register::validate`].
pub const POSITIVITY_TOL: f64 = 1e-10;
/// Branches below this probability cannot be projected onto.
pub const BRANCH_TOL: f64 = 1e-15;
const UNITARY_TOL: f64 = 1e-10;
const KRAUS_TOL: f64 = 1e-10;

/// Highest slot index in a node: 0 is the electron, 1..=3 are carbons.
pub const MAX_SLOT: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct QubitId {
    pub node: usize,
    pub slot: usize,
}

impl QubitId {
    pub fn new(node: usize, slot: usize) -> Result<Self, RegisterError> {
        if slot > MAX_SLOT {
            return Err(RegisterError::InvalidSlot(slot));
        }
        Ok(Self { node, slot })
    }

    /// Communication qubit of a node.
    pub fn electron(node: usize) -> Self {
        Self { node, slot: 0 }
    }

    /// Carbon memory `index` (1-based) of a node.
    pub fn carbon(node: usize, index: usize) -> Self {
        assert!((1..=MAX_SLOT).contains(&index), "carbon index {index} out of range");
        Self { node, slot: index }
    }

    pub fn is_electron(&self) -> bool {
        self.slot == 0
    }
}

impl fmt::Display for QubitId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}.{}", self.node, self.slot)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RegisterError {
    #[error("slot {0} exceeds the per-node maximum of 3")]
    InvalidSlot(usize),
    #[error("qubit {0} is already allocated")]
    DuplicateQubit(QubitId),
    #[error("qubit {0} is not allocated")]
    UnknownQubit(QubitId),
    #[error("operands must be distinct")]
    RepeatedOperand,
    #[error("matrix dimension {got} does not match {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("operator is not unitary (deviation {0:.3e})")]
    NotUnitary(f64),
    #[error("Kraus set is not trace preserving (deviation {0:.3e})")]
    IncompleteKraus(f64),
    #[error("state is not a normalized Hermitian matrix (trace {0})")]
    NotNormalized(f64),
    #[error("target vector is not normalized (norm {0})")]
    BadTarget(f64),
    #[error("measurement branch has probability {0:.3e}")]
    DegenerateBranch(f64),
    #[error("numerical invariant violated: {0}")]
    Invariant(String),
}

#[derive(Debug, Clone)]
struct Factor {
    qubits: Vec<QubitId>,
    rho: CMatrix,
}

impl Factor {
    fn position(&self, q: QubitId) -> usize {
        self.qubits.iter().position(|&x| x == q).expect("owner map out of sync")
    }
}

/// Density matrix of a set of qubits stored as a product of factors.
#[derive(Debug, Clone, Default)]
pub struct Register {
    factors: BTreeMap<usize, Factor>,
    owner: BTreeMap<QubitId, usize>,
    next_key: usize,
}

impl Register {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_allocated(&self, q: QubitId) -> bool {
        self.owner.contains_key(&q)
    }

    pub fn qubits(&self) -> impl Iterator<Item = QubitId> + '_ {
        self.owner.keys().copied()
    }

    pub fn num_factors(&self) -> usize {
        self.factors.len()
    }

    /// Qubits sharing a factor with `q`, in factor order.
    pub fn factor_of(&self, q: QubitId) -> Result<&[QubitId], RegisterError> {
        let key = self.key(q)?;
        Ok(&self.factors[&key].qubits)
    }

    /// Allocate `q` in |0⟩ as a factor of its own.
    pub fn allocate(&mut self, q: QubitId) -> Result<(), RegisterError> {
        let mut rho = CMatrix::zeros(2, 2);
        rho[(0, 0)] = C64::new(1.0, 0.0);
        self.allocate_state(&[q], rho)
    }

    /// Allocate fresh qubits jointly in the state `rho`.
    pub fn allocate_state(&mut self, qubits: &[QubitId], rho: CMatrix) -> Result<(), RegisterError> {
        check_distinct(qubits)?;
        for &q in qubits {
            if self.is_allocated(q) {
                return Err(RegisterError::DuplicateQubit(q));
            }
        }
        let d = 1usize << qubits.len();
        if rho.nrows() != d || rho.ncols() != d {
            return Err(RegisterError::DimensionMismatch { expected: d, got: rho.nrows() });
        }
        let tr = trace(&rho);
        if (tr.re - 1.0).abs() > TRACE_TOL || tr.im.abs() > TRACE_TOL || hermitian_defect(&rho) > TRACE_TOL {
            return Err(RegisterError::NotNormalized(tr.re));
        }
        let key = self.next_key;
        self.next_key += 1;
        for &q in qubits {
            self.owner.insert(q, key);
        }
        self.factors.insert(key, Factor { qubits: qubits.to_vec(), rho });
        Ok(())
    }

    /// Trace `q` out of the register.
    pub fn discard(&mut self, q: QubitId) -> Result<(), RegisterError> {
        let key = self.key(q)?;
        self.owner.remove(&q);
        let f = self.factors.get_mut(&key).unwrap();
        if f.qubits.len() == 1 {
            self.factors.remove(&key);
            return Ok(());
        }
        let p = f.position(q);
        f.rho = partial_trace(&f.rho, f.qubits.len(), p);
        f.qubits.remove(p);
        Ok(())
    }

    pub fn apply_unitary(&mut self, qubits: &[QubitId], u: &CMatrix) -> Result<(), RegisterError> {
        let d = 1usize << qubits.len();
        if u.nrows() != d || u.ncols() != d {
            return Err(RegisterError::DimensionMismatch { expected: d, got: u.nrows() });
        }
        let dev = max_abs(&(u.adjoint() * u - CMatrix::identity(d, d)));
        if dev > UNITARY_TOL {
            return Err(RegisterError::NotUnitary(dev));
        }
        let s = u.kronecker(&u.conjugate());
        self.apply_superop(qubits, &s)
    }

    /// Apply the channel ρ ↦ Σ K ρ K†.
    pub fn apply_channel(&mut self, qubits: &[QubitId], kraus: &[CMatrix]) -> Result<(), RegisterError> {
        let d = 1usize << qubits.len();
        let mut completeness = CMatrix::zeros(d, d);
        let mut s = CMatrix::zeros(d * d, d * d);
        for k in kraus {
            if k.nrows() != d || k.ncols() != d {
                return Err(RegisterError::DimensionMismatch { expected: d, got: k.nrows() });
            }
            completeness += k.adjoint() * k;
            s += k.kronecker(&k.conjugate());
        }
        let dev = max_abs(&(completeness - CMatrix::identity(d, d)));
        if dev > KRAUS_TOL {
            return Err(RegisterError::IncompleteKraus(dev));
        }
        self.apply_superop(qubits, &s)
    }

    /// Apply a superoperator acting on the row-major vectorization of the
    /// reduced block of `qubits`. The caller guarantees it is a valid channel.
    pub fn apply_superop(&mut self, qubits: &[QubitId], s: &CMatrix) -> Result<(), RegisterError> {
        let n = qubits.len();
        let dd = 1usize << (2 * n);
        if s.nrows() != dd || s.ncols() != dd {
            return Err(RegisterError::DimensionMismatch { expected: dd, got: s.nrows() });
        }
        let (key, positions) = self.gather(qubits)?;
        let f = self.factors.get_mut(&key).unwrap();
        let k = f.qubits.len();
        superop_kernel(&mut f.rho, k, &positions, s);
        check_trace(&f.rho)
    }

    /// Probability that a Z measurement of `q` yields `outcome`.
    pub fn probability_z(&self, q: QubitId, outcome: u8) -> Result<f64, RegisterError> {
        let key = self.key(q)?;
        let f = &self.factors[&key];
        let k = f.qubits.len();
        let mask = 1usize << (k - 1 - f.position(q));
        let want = if outcome == 0 { 0 } else { mask };
        let p: f64 = (0..1usize << k).filter(|i| i & mask == want).map(|i| f.rho[(i, i)].re).sum();
        Ok(p.clamp(0.0, 1.0))
    }

    /// Project `q` onto |outcome⟩ and renormalize. The qubit stays allocated
    /// in its own factor. Returns the branch probability.
    pub fn project_z(&mut self, q: QubitId, outcome: u8) -> Result<f64, RegisterError> {
        let p = self.probability_z(q, outcome)?;
        if p < BRANCH_TOL {
            return Err(RegisterError::DegenerateBranch(p));
        }
        let key = self.key(q)?;
        let f = self.factors.get_mut(&key).unwrap();
        let k = f.qubits.len();
        let mut post = CMatrix::zeros(2, 2);
        post[(outcome as usize, outcome as usize)] = C64::new(1.0, 0.0);
        if k == 1 {
            f.rho = post;
            return Ok(p);
        }
        let pos = f.position(q);
        f.rho = project(&f.rho, k, pos, outcome) / C64::new(p, 0.0);
        f.qubits.remove(pos);
        let key2 = self.next_key;
        self.next_key += 1;
        self.owner.insert(q, key2);
        self.factors.insert(key2, Factor { qubits: vec![q], rho: post });
        Ok(p)
    }

    /// Ideal projective Z measurement.
    pub fn measure_z<R: Rng + ?Sized>(&mut self, q: QubitId, rng: &mut R) -> Result<u8, RegisterError> {
        let p0 = self.probability_z(q, 0)?;
        let u: f64 = rng.gen();
        let outcome = if u < p0 { 0 } else { 1 };
        self.project_z(q, outcome)?;
        Ok(outcome)
    }

    /// Reduced density matrix of `qubits`, in the given order.
    pub fn reduced_state(&self, qubits: &[QubitId]) -> Result<CMatrix, RegisterError> {
        check_distinct(qubits)?;
        let mut keys: Vec<usize> = Vec::new();
        for &q in qubits {
            let k = self.key(q)?;
            if !keys.contains(&k) {
                keys.push(k);
            }
        }
        let mut prod = CMatrix::from_element(1, 1, C64::new(1.0, 0.0));
        let mut order: Vec<QubitId> = Vec::new();
        for key in keys {
            let f = &self.factors[&key];
            let mut rho = f.rho.clone();
            let mut kept = f.qubits.clone();
            for p in (0..f.qubits.len()).rev() {
                if !qubits.contains(&f.qubits[p]) {
                    rho = partial_trace(&rho, kept.len(), p);
                    kept.remove(p);
                }
            }
            prod = prod.kronecker(&rho);
            order.extend(kept);
        }
        let n = qubits.len();
        let d = 1usize << n;
        let pos: Vec<usize> = qubits.iter().map(|q| order.iter().position(|x| x == q).unwrap()).collect();
        let perm: Vec<usize> = (0..d)
            .map(|i| {
                (0..n)
                    .filter(|&j| (i >> (n - 1 - j)) & 1 == 1)
                    .map(|j| 1usize << (n - 1 - pos[j]))
                    .sum()
            })
            .collect();
        Ok(CMatrix::from_fn(d, d, |r, c| prod[(perm[r], perm[c])]))
    }

    /// ⟨t|ρ|t⟩ for the reduced state of `qubits`.
    pub fn fidelity_pure(&self, qubits: &[QubitId], target: &[C64]) -> Result<f64, RegisterError> {
        let d = 1usize << qubits.len();
        if target.len() != d {
            return Err(RegisterError::DimensionMismatch { expected: d, got: target.len() });
        }
        let norm: f64 = target.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-10 {
            return Err(RegisterError::BadTarget(norm));
        }
        let rho = self.reduced_state(qubits)?;
        let mut f = C64::new(0.0, 0.0);
        for r in 0..d {
            for c in 0..d {
                f += target[r].conj() * rho[(r, c)] * target[c];
            }
        }
        Ok(f.re)
    }

    /// Full invariant check: unit trace, Hermiticity and positivity of every factor.
    pub fn validate(&self) -> Result<(), RegisterError> {
        for f in self.factors.values() {
            check_trace(&f.rho)?;
            let h = hermitian_defect(&f.rho);
            if h > TRACE_TOL {
                return Err(RegisterError::Invariant(format!("Hermiticity defect {h:.3e}")));
            }
            let min = min_eigenvalue(&f.rho);
            if min < -POSITIVITY_TOL {
                return Err(RegisterError::Invariant(format!("negative eigenvalue {min:.3e}")));
            }
        }
        Ok(())
    }

    fn key(&self, q: QubitId) -> Result<usize, RegisterError> {
        self.owner.get(&q).copied().ok_or(RegisterError::UnknownQubit(q))
    }

    /// Merge the factors of `qubits` and return the merged key and positions.
    fn gather(&mut self, qubits: &[QubitId]) -> Result<(usize, Vec<usize>), RegisterError> {
        check_distinct(qubits)?;
        let mut keys: Vec<usize> = Vec::new();
        for &q in qubits {
            let k = self.key(q)?;
            if !keys.contains(&k) {
                keys.push(k);
            }
        }
        let first = keys[0];
        for &other in &keys[1..] {
            let g = self.factors.remove(&other).unwrap();
            for &q in &g.qubits {
                self.owner.insert(q, first);
            }
            let f = self.factors.get_mut(&first).unwrap();
            f.rho = f.rho.kronecker(&g.rho);
            f.qubits.extend(g.qubits);
        }
        let f = &self.factors[&first];
        Ok((first, qubits.iter().map(|&q| f.position(q)).collect()))
    }
}

fn check_distinct(qubits: &[QubitId]) -> Result<(), RegisterError> {
    for (i, a) in qubits.iter().enumerate() {
        if qubits[i + 1..].contains(a) {
            return Err(RegisterError::RepeatedOperand);
        }
    }
    if qubits.is_empty() {
        return Err(RegisterError::DimensionMismatch { expected: 1, got: 0 });
    }
    Ok(())
}

/// Largest entry modulus.
pub fn max_abs(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

pub fn trace(m: &CMatrix) -> C64 {
    (0..m.nrows()).map(|i| m[(i, i)]).sum()
}

fn hermitian_defect(m: &CMatrix) -> f64 {
    max_abs(&(m - m.adjoint()))
}

fn check_trace(rho: &CMatrix) -> Result<(), RegisterError> {
    let tr = trace(rho);
    if (tr.re - 1.0).abs() > TRACE_TOL || tr.im.abs() > TRACE_TOL {
        return Err(RegisterError::Invariant(format!("trace drifted to {tr}")));
    }
    Ok(())
}

/// Smallest eigenvalue of a Hermitian matrix.
pub fn min_eigenvalue(m: &CMatrix) -> f64 {
    let h = (m + m.adjoint()) * C64::new(0.5, 0.0);
    h.symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min)
}

#[inline]
fn insert_bit(i: usize, mask: usize, bit: usize) -> usize {
    let low = i & (mask - 1);
    ((i & !(mask - 1)) << 1) | low | (bit * mask)
}

/// Trace out position `p` of a `k`-qubit matrix.
fn partial_trace(rho: &CMatrix, k: usize, p: usize) -> CMatrix {
    let mask = 1usize << (k - 1 - p);
    let d = 1usize << (k - 1);
    CMatrix::from_fn(d, d, |r, c| {
        rho[(insert_bit(r, mask, 0), insert_bit(c, mask, 0))] + rho[(insert_bit(r, mask, 1), insert_bit(c, mask, 1))]
    })
}

/// Unnormalized block of a `k`-qubit matrix with position `p` fixed to `m`.
fn project(rho: &CMatrix, k: usize, p: usize, m: u8) -> CMatrix {
    let mask = 1usize << (k - 1 - p);
    let d = 1usize << (k - 1);
    let b = m as usize;
    CMatrix::from_fn(d, d, |r, c| rho[(insert_bit(r, mask, b), insert_bit(c, mask, b))])
}

fn superop_kernel(rho: &mut CMatrix, k: usize, positions: &[usize], s: &CMatrix) {
    let d = 1usize << k;
    let n = positions.len();
    let m = 1usize << n;
    let mm = m * m;
    let masks: Vec<usize> = positions.iter().map(|&p| 1usize << (k - 1 - p)).collect();
    let offs: Vec<usize> = (0..m)
        .map(|a| (0..n).filter(|&j| (a >> (n - 1 - j)) & 1 == 1).map(|j| masks[j]).sum())
        .collect();
    let pm: usize = masks.iter().sum();
    let rest: Vec<usize> = (0..d).filter(|i| i & pm == 0).collect();
    let srow: Vec<C64> = (0..mm).flat_map(|i| (0..mm).map(move |j| (i, j))).map(|(i, j)| s[(i, j)]).collect();
    let data = rho.as_mut_slice();
    let mut v = vec![C64::new(0.0, 0.0); mm];
    for &c0 in &rest {
        for &r0 in &rest {
            for a in 0..m {
                for b in 0..m {
                    v[a * m + b] = data[(c0 + offs[b]) * d + r0 + offs[a]];
                }
            }
            for a in 0..m {
                for b in 0..m {
                    let row = &srow[(a * m + b) * mm..(a * m + b + 1) * mm];
                    let mut acc = C64::new(0.0, 0.0);
                    for (x, y) in row.iter().zip(&v) {
                        acc += x * y;
                    }
                    data[(c0 + offs[b]) * d + r0 + offs[a]] = acc;
                }
            }
        }
    }
}

/// Standard gate matrices.
pub mod gates {
    use super::{CMatrix, C64};

    fn re(v: &[f64], d: usize) -> CMatrix {
        CMatrix::from_row_iterator(d, d, v.iter().map(|&x| C64::new(x, 0.0)))
    }

    pub fn identity() -> CMatrix {
        CMatrix::identity(2, 2)
    }

    pub fn x() -> CMatrix {
        re(&[0.0, 1.0, 1.0, 0.0], 2)
    }

    pub fn y() -> CMatrix {
        let i = C64::new(0.0, 1.0);
        let z = C64::new(0.0, 0.0);
        CMatrix::from_row_slice(2, 2, &[z, -i, i, z])
    }

    pub fn z() -> CMatrix {
        re(&[1.0, 0.0, 0.0, -1.0], 2)
    }

    pub fn h() -> CMatrix {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        re(&[s, s, s, -s], 2)
    }

    /// Control on the first operand.
    pub fn cnot() -> CMatrix {
        re(
            &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0],
            4,
        )
    }

    pub fn cz() -> CMatrix {
        re(
            &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, -1.0],
            4,
        )
    }

    pub fn swap() -> CMatrix {
        re(
            &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0],
            4,
        )
    }

    /// Pauli by index: 0 = I, 1 = X, 2 = Y, 3 = Z.
    pub fn pauli(i: usize) -> CMatrix {
        match i {
            0 => identity(),
            1 => x(),
            2 => y(),
            3 => z(),
            _ => panic!("Pauli index {i} out of range"),
        }
    }
}

/// |ψ⟩⟨ψ| for a state vector.
pub fn projector(psi: &[C64]) -> CMatrix {
    let d = psi.len();
    CMatrix::from_fn(d, d, |r, c| psi[r] * psi[c].conj())
}

/// Real amplitudes to a complex state vector.
pub fn ket(amps: &[f64]) -> Vec<C64> {
    amps.iter().map(|&a| C64::new(a, 0.0)).collect()
}
