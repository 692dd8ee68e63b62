//! NV-centre network runtime: hardware parameters, per-node clocks with
//! dynamical-decoupling scheduling, timed noisy operations and heralded
//! link generation.
//!
//! Each node keeps its own clock, so operations in different nodes overlap
//! in time. Whenever a node's clock advances, every qubit of that node that
//! is not an operand is charged decoherence for the interval. Qubits that do
//! not belong to a hardware node (reference qubits) never decohere.
//!
//! Feed-forward Pauli corrections are kept in a Pauli frame: they are
//! propagated through the Clifford gates, flip measurement records, and are
//! applied to the state by [`NetworkState::apply_frame`]. Every noise process
//! here commutes with X and Z conjugation, so this matches applying them
//! immediately.

use std::collections::BTreeMap;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Geometric};
use thiserror::Error;

use crate::densmat::{gates, CMatrix, QubitId, Register, RegisterError};
use crate::noise::{self, Basis, DecoherencePair, NoiseError};

pub const MAX_CARBONS: usize = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetworkError {
    #[error(transparent)]
    Register(#[from] RegisterError),
    #[error(transparent)]
    Noise(#[from] NoiseError),
    #[error("node {0} does not exist")]
    InvalidNode(usize),
    #[error("a node holds at most 3 carbons, requested {0}")]
    TooManyCarbons(usize),
    #[error("topology violation: {0}")]
    Topology(String),
    #[error("qubit {0} cannot be measured directly")]
    NotCommunicationQubit(QubitId),
    #[error("unknown gate '{0}'")]
    UnknownGate(String),
    #[error("invalid hardware profile: {0}")]
    InvalidProfile(String),
    #[error("no link between nodes {0} and {1}")]
    MissingLink(usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GateTimes {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub h: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HardwareProfile {
    pub p_g: f64,
    pub p_m: f64,
    pub p_n: f64,
    pub p_re: f64,
    pub t_meas: f64,
    pub t_re: f64,
    pub electron_gates: GateTimes,
    pub carbon_gates: GateTimes,
    pub t_cnot: f64,
    pub t_cz: f64,
    pub t_swap: f64,
    pub carbon_idle: DecoherencePair,
    pub carbon_re: DecoherencePair,
    pub electron_t2_idle: f64,
    pub dd_tau: f64,
    pub dd_pi: f64,
}

impl HardwareProfile {
    /// Isotopically purified samples.
    pub fn purified() -> Self {
        let t_re = 6e-6;
        Self {
            p_g: 0.01,
            p_m: 0.01,
            p_n: 0.1,
            p_re: 1e-4,
            t_meas: 4e-6,
            t_re,
            electron_gates: GateTimes { x: 0.14e-6, y: 0.14e-6, z: 0.1e-6, h: 0.1e-6 },
            carbon_gates: GateTimes { x: 13e-3, y: 13e-3, z: 6.5e-3, h: 6.5e-3 },
            t_cnot: 25e-3,
            t_cz: 25e-3,
            t_swap: 75e-3,
            carbon_idle: DecoherencePair { t1: 300.0, t2: 10.0 },
            carbon_re: DecoherencePair { t1: 1.2, t2: 1.2 },
            electron_t2_idle: 1.0,
            dd_tau: 2500.0 * t_re,
            dd_pi: 13e-3,
        }
    }

    /// Samples with natural carbon abundance.
    pub fn natural() -> Self {
        let base = Self::purified();
        Self {
            carbon_gates: GateTimes { x: 1e-3, y: 1e-3, z: 0.5e-3, h: 0.5e-3 },
            t_cnot: 0.5e-3,
            t_cz: 0.5e-3,
            t_swap: 1.5e-3,
            carbon_re: DecoherencePair { t1: 0.03, t2: 0.012 },
            dd_tau: 250.0 * base.t_re,
            dd_pi: 1e-3,
            ..base
        }
    }

    /// Every error probability and duration zero, links always succeed.
    pub fn noiseless() -> Self {
        let zero = GateTimes { x: 0.0, y: 0.0, z: 0.0, h: 0.0 };
        Self {
            p_g: 0.0,
            p_m: 0.0,
            p_n: 0.0,
            p_re: 1.0,
            t_meas: 0.0,
            t_re: 0.0,
            electron_gates: zero,
            carbon_gates: zero,
            t_cnot: 0.0,
            t_cz: 0.0,
            t_swap: 0.0,
            dd_tau: 0.0,
            dd_pi: 0.0,
            ..Self::purified()
        }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "purified" => Some(Self::purified()),
            "natural" => Some(Self::natural()),
            "noiseless" => Some(Self::noiseless()),
            _ => None,
        }
    }

    /// Length of one τ−π−τ echo block.
    pub fn dd_period(&self) -> f64 {
        2.0 * self.dd_tau + self.dd_pi
    }

    pub fn electron_pair(&self) -> DecoherencePair {
        DecoherencePair { t1: f64::INFINITY, t2: self.electron_t2_idle }
    }

    pub fn validate(&self) -> Result<(), NetworkError> {
        let bad = |m: String| Err(NetworkError::InvalidProfile(m));
        for (name, p) in [("p_g", self.p_g), ("p_m", self.p_m), ("p_n", self.p_n), ("p_re", self.p_re)] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} = {p} is not a probability"));
            }
        }
        if self.p_re == 0.0 {
            return bad("p_re must be positive".into());
        }
        let e = self.electron_gates;
        let c = self.carbon_gates;
        let durations = [
            ("t_meas", self.t_meas),
            ("t_re", self.t_re),
            ("te_x", e.x),
            ("te_y", e.y),
            ("te_z", e.z),
            ("te_h", e.h),
            ("tc_x", c.x),
            ("tc_y", c.y),
            ("tc_z", c.z),
            ("tc_h", c.h),
            ("t_cnot", self.t_cnot),
            ("t_cz", self.t_cz),
            ("t_swap", self.t_swap),
            ("dd_tau", self.dd_tau),
            ("dd_pi", self.dd_pi),
        ];
        for (name, t) in durations {
            if !(t >= 0.0 && t.is_finite()) {
                return bad(format!("{name} = {t} is not a valid duration"));
            }
        }
        if (self.t_swap - 3.0 * self.t_cnot).abs() > 1e-12 * self.t_swap.max(1.0) {
            return bad(format!("t_swap = {} must equal three CNOT durations ({})", self.t_swap, 3.0 * self.t_cnot));
        }
        for (name, pair) in [("carbon idle", self.carbon_idle), ("carbon RE", self.carbon_re)] {
            DecoherencePair::new(pair.t1, pair.t2)
                .map_err(|err| NetworkError::InvalidProfile(format!("{name}: {err}")))?;
        }
        if !(self.electron_t2_idle > 0.0) {
            return bad("electron T2 must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gate {
    X,
    Y,
    Z,
    H,
    Cnot,
    Cz,
    Swap,
}

impl Gate {
    pub fn arity(self) -> usize {
        match self {
            Gate::X | Gate::Y | Gate::Z | Gate::H => 1,
            _ => 2,
        }
    }

    fn matrix(self) -> CMatrix {
        match self {
            Gate::X => gates::x(),
            Gate::Y => gates::y(),
            Gate::Z => gates::z(),
            Gate::H => gates::h(),
            Gate::Cnot => gates::cnot(),
            Gate::Cz => gates::cz(),
            Gate::Swap => gates::swap(),
        }
    }
}

impl FromStr for Gate {
    type Err = NetworkError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "x" => Gate::X,
            "y" => Gate::Y,
            "z" => Gate::Z,
            "h" => Gate::H,
            "cnot" | "cx" => Gate::Cnot,
            "cz" => Gate::Cz,
            "swap" => Gate::Swap,
            _ => return Err(NetworkError::UnknownGate(s.to_string())),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkResult {
    pub nodes: (usize, usize),
    pub attempts: u64,
    pub elapsed: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChargeKind {
    Idle,
    IdleRe,
    Busy,
}

/// One entry of the optional time-accounting log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Charge {
    pub qubit: QubitId,
    pub start: f64,
    pub duration: f64,
    pub kind: ChargeKind,
}

#[derive(Debug, Clone)]
pub struct Node {
    pub carbons: usize,
    pub clock: f64,
    /// Start of the current DD grid.
    pub anchor: f64,
    /// True while the node runs consecutive operations without decoupling.
    pub burst_open: bool,
    pub re_active: bool,
}

/// Pending Pauli X^x Z^z on one qubit.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FramePauli {
    pub x: bool,
    pub z: bool,
}

#[derive(Debug, Clone)]
pub struct NetworkState {
    pub profile: HardwareProfile,
    pub nodes: Vec<Node>,
    pub register: Register,
    /// Links generated since the network was built.
    pub links_generated: u64,
    links: Vec<(usize, usize)>,
    frame: BTreeMap<QubitId, FramePauli>,
    /// Idle decoherence not yet applied to the state, as accumulated
    /// (t/T2, t/T1) exponents. Flushed when the qubit is next operated on.
    pending: BTreeMap<QubitId, (f64, f64)>,
    audit: Option<Vec<Charge>>,
}

pub fn build_network(profile: HardwareProfile, n_nodes: usize, carbons: usize) -> Result<NetworkState, NetworkError> {
    profile.validate()?;
    if carbons > MAX_CARBONS {
        return Err(NetworkError::TooManyCarbons(carbons));
    }
    let mut net = NetworkState {
        profile,
        nodes: (0..n_nodes)
            .map(|_| Node { carbons, clock: 0.0, anchor: 0.0, burst_open: false, re_active: false })
            .collect(),
        register: Register::new(),
        links_generated: 0,
        links: Vec::new(),
        frame: BTreeMap::new(),
        pending: BTreeMap::new(),
        audit: None,
    };
    net.initialize_qubits()?;
    Ok(net)
}

/// Geometric number of attempts until the first success.
pub fn sample_attempts<R: Rng + ?Sized>(p_re: f64, rng: &mut R) -> Result<u64, NetworkError> {
    if !(p_re > 0.0 && p_re <= 1.0) {
        return Err(NoiseError::InvalidProbability(p_re).into());
    }
    if p_re == 1.0 {
        return Ok(1);
    }
    let g = Geometric::new(p_re).map_err(|_| NoiseError::InvalidProbability(p_re))?;
    Ok(g.sample(rng) + 1)
}

impl NetworkState {
    pub fn enable_audit(&mut self) {
        self.audit = Some(Vec::new());
    }

    pub fn audit(&self) -> Option<&[Charge]> {
        self.audit.as_deref()
    }

    /// Latest node clock.
    pub fn clock(&self) -> f64 {
        self.nodes.iter().map(|n| n.clock).fold(0.0, f64::max)
    }

    pub fn node_clock(&self, node: usize) -> f64 {
        self.nodes[node].clock
    }

    pub fn has_link(&self, a: usize, b: usize) -> bool {
        self.links.iter().any(|&(x, y)| (x, y) == (a, b) || (x, y) == (b, a))
    }

    /// Hardware qubits of a node.
    pub fn node_qubits(&self, node: usize) -> Vec<QubitId> {
        (0..=self.nodes[node].carbons).map(|s| QubitId { node, slot: s }).collect()
    }

    fn initialize_qubits(&mut self) -> Result<(), NetworkError> {
        for n in 0..self.nodes.len() {
            for q in self.node_qubits(n) {
                if self.register.is_allocated(q) {
                    self.register.discard(q)?;
                }
                self.register.allocate(q)?;
            }
        }
        self.pending.clear();
        Ok(())
    }

    /// Discard all hardware qubit states and re-initialize them in |0⟩.
    /// Clocks keep running.
    pub fn reset_qubits(&mut self) -> Result<(), NetworkError> {
        self.links.clear();
        self.frame.clear();
        self.initialize_qubits()
    }

    /// Re-initialize the qubits of some nodes only.
    pub fn reset_nodes(&mut self, nodes: &[usize]) -> Result<(), NetworkError> {
        for &n in nodes {
            self.check_node(n)?;
            self.links.retain(|&(a, b)| a != n && b != n);
            for q in self.node_qubits(n) {
                self.frame.remove(&q);
                self.pending.remove(&q);
                if self.register.is_allocated(q) {
                    self.register.discard(q)?;
                }
                self.register.allocate(q)?;
            }
        }
        Ok(())
    }

    /// Replace the state of `qubits` (hardware or not) by `rho`.
    pub fn prepare_state(&mut self, qubits: &[QubitId], rho: CMatrix) -> Result<(), NetworkError> {
        for &q in qubits {
            self.frame.remove(&q);
            self.pending.remove(&q);
            if self.register.is_allocated(q) {
                self.register.discard(q)?;
            }
        }
        self.register.allocate_state(qubits, rho)?;
        Ok(())
    }

    /// Re-initialize a hardware qubit whose content is no longer needed.
    /// Exact whenever that content would only be swapped out and
    /// discarded: the SWAP plus Pauli noise leaves the other qubits'
    /// state independent of it.
    pub fn recycle(&mut self, q: QubitId) -> Result<(), NetworkError> {
        self.check_qubit(q)?;
        self.frame.remove(&q);
        self.pending.remove(&q);
        if self.register.is_allocated(q) {
            self.register.discard(q)?;
        }
        self.register.allocate(q)?;
        Ok(())
    }

    /// Record a Pauli correction on `q` without touching the state.
    pub fn frame_pauli(&mut self, q: QubitId, x: bool, z: bool) {
        let f = self.frame.entry(q).or_default();
        f.x ^= x;
        f.z ^= z;
    }

    pub fn frame(&self, q: QubitId) -> FramePauli {
        self.frame.get(&q).copied().unwrap_or_default()
    }

    /// Apply and clear every pending frame correction.
    pub fn apply_frame(&mut self) -> Result<(), NetworkError> {
        let frame = std::mem::take(&mut self.frame);
        for (q, f) in frame {
            if f.x {
                self.register.apply_unitary(&[q], &gates::x())?;
            }
            if f.z {
                self.register.apply_unitary(&[q], &gates::z())?;
            }
        }
        Ok(())
    }

    /// Conjugate the frame through a Clifford gate.
    fn propagate(&mut self, gate: Gate, qubits: &[QubitId]) {
        match gate {
            Gate::X | Gate::Y | Gate::Z => {}
            Gate::H => {
                let f = self.frame(qubits[0]);
                self.frame.insert(qubits[0], FramePauli { x: f.z, z: f.x });
            }
            Gate::Cnot => {
                let (c, t) = (self.frame(qubits[0]), self.frame(qubits[1]));
                self.frame.insert(qubits[0], FramePauli { x: c.x, z: c.z ^ t.z });
                self.frame.insert(qubits[1], FramePauli { x: t.x ^ c.x, z: t.z });
            }
            Gate::Cz => {
                let (a, b) = (self.frame(qubits[0]), self.frame(qubits[1]));
                self.frame.insert(qubits[0], FramePauli { x: a.x, z: a.z ^ b.x });
                self.frame.insert(qubits[1], FramePauli { x: b.x, z: b.z ^ a.x });
            }
            Gate::Swap => {
                let (a, b) = (self.frame(qubits[0]), self.frame(qubits[1]));
                self.frame.insert(qubits[0], b);
                self.frame.insert(qubits[1], a);
            }
        }
    }

    fn check_node(&self, node: usize) -> Result<(), NetworkError> {
        if node >= self.nodes.len() {
            return Err(NetworkError::InvalidNode(node));
        }
        Ok(())
    }

    fn check_qubit(&self, q: QubitId) -> Result<(), NetworkError> {
        self.check_node(q.node)?;
        if q.slot > self.nodes[q.node].carbons {
            return Err(NetworkError::Topology(format!("node {} has no slot {}", q.node, q.slot)));
        }
        Ok(())
    }

    fn log(&mut self, qubit: QubitId, start: f64, duration: f64, kind: ChargeKind) {
        if let Some(log) = self.audit.as_mut() {
            log.push(Charge { qubit, start, duration, kind });
        }
    }

    /// Advance a node clock by `dt`, charging decoherence to every allocated
    /// qubit of the node except `busy`.
    fn advance(&mut self, node: usize, dt: f64, busy: &[QubitId]) -> Result<(), NetworkError> {
        if dt <= 0.0 {
            return Ok(());
        }
        let start = self.nodes[node].clock;
        let re = self.nodes[node].re_active;
        for q in self.node_qubits(node) {
            if busy.contains(&q) {
                self.log(q, start, dt, ChargeKind::Busy);
                continue;
            }
            if !self.register.is_allocated(q) {
                continue;
            }
            let pair = match (q.is_electron(), re) {
                (true, _) => self.profile.electron_pair(),
                (false, true) => self.profile.carbon_re,
                (false, false) => self.profile.carbon_idle,
            };
            let rates = self.pending.entry(q).or_insert((0.0, 0.0));
            rates.0 += dt / pair.t2;
            if pair.t1.is_finite() {
                rates.1 += dt / pair.t1;
            }
            self.log(q, start, dt, if re && !q.is_electron() { ChargeKind::IdleRe } else { ChargeKind::Idle });
        }
        self.nodes[node].clock = start + dt;
        Ok(())
    }

    /// Apply the idle decoherence accumulated on `qubits`.
    fn flush(&mut self, qubits: &[QubitId]) -> Result<(), NetworkError> {
        for q in qubits {
            if let Some((a_xy, a_z)) = self.pending.remove(q) {
                let s = noise::pauli_decay_superop((-a_xy).exp(), (-a_z).exp());
                self.register.apply_superop(&[*q], &s)?;
            }
        }
        Ok(())
    }

    /// Apply all accumulated idle decoherence. Channels on distinct qubits
    /// commute, so deferring them until a qubit is touched is exact.
    pub fn flush_all(&mut self) -> Result<(), NetworkError> {
        let qubits: Vec<QubitId> = self.pending.keys().copied().collect();
        self.flush(&qubits)
    }

    /// Idle `node` until time `t`. Any wait ends the node's burst.
    pub fn wait_until(&mut self, node: usize, t: f64) -> Result<(), NetworkError> {
        self.check_node(node)?;
        let dt = t - self.nodes[node].clock;
        if dt > 0.0 {
            self.advance(node, dt, &[])?;
            self.nodes[node].burst_open = false;
        }
        Ok(())
    }

    /// Bring every listed node to their common latest clock.
    pub fn sync(&mut self, nodes: &[usize]) -> Result<f64, NetworkError> {
        let t = nodes.iter().map(|&n| self.nodes[n].clock).fold(0.0, f64::max);
        for &n in nodes {
            self.wait_until(n, t)?;
        }
        Ok(t)
    }

    /// Bring every node to the global clock and return it.
    pub fn finalize(&mut self) -> Result<f64, NetworkError> {
        let all: Vec<usize> = (0..self.nodes.len()).collect();
        let t = self.sync(&all)?;
        self.flush_all()?;
        Ok(t)
    }

    /// First DD boundary of `node` at or after `t`.
    pub fn next_boundary(&self, node: usize, t: f64) -> f64 {
        let period = self.profile.dd_period();
        let anchor = self.nodes[node].anchor;
        if period <= 0.0 || t <= anchor {
            return t.max(anchor);
        }
        let k = ((t - anchor) / period - 1e-9).ceil();
        anchor + k * period
    }

    /// Wait until the listed nodes can start a joint operation between echo
    /// blocks: each node's next boundary after the latest clock, and then the
    /// latest of those. Returns the time spent beyond the latest clock.
    pub fn dd_align(&mut self, nodes: &[usize]) -> Result<f64, NetworkError> {
        for &n in nodes {
            self.check_node(n)?;
        }
        let t0 = nodes.iter().map(|&n| self.nodes[n].clock).fold(0.0, f64::max);
        let target = nodes
            .iter()
            .map(|&n| self.next_boundary(n, t0))
            .fold(t0, f64::max);
        for &n in nodes {
            self.wait_until(n, target)?;
        }
        Ok(target - t0)
    }

    fn begin_local(&mut self, node: usize) -> Result<(), NetworkError> {
        if !self.nodes[node].burst_open {
            self.dd_align(&[node])?;
            self.nodes[node].burst_open = true;
        }
        Ok(())
    }

    fn end_local(&mut self, node: usize) {
        self.nodes[node].anchor = self.nodes[node].clock;
    }

    fn gate_duration(&self, gate: Gate, q: QubitId) -> f64 {
        let t = if q.is_electron() { self.profile.electron_gates } else { self.profile.carbon_gates };
        match gate {
            Gate::X => t.x,
            Gate::Y => t.y,
            Gate::Z => t.z,
            Gate::H => t.h,
            Gate::Cnot => self.profile.t_cnot,
            Gate::Cz => self.profile.t_cz,
            Gate::Swap => self.profile.t_swap,
        }
    }

    /// Apply a native gate with its duration and noise.
    pub fn timed_gate(&mut self, gate: Gate, qubits: &[QubitId]) -> Result<(), NetworkError> {
        if qubits.len() != gate.arity() {
            return Err(NetworkError::Topology(format!("{gate:?} acts on {} qubit(s)", gate.arity())));
        }
        for &q in qubits {
            self.check_qubit(q)?;
        }
        let node = qubits[0].node;
        if gate.arity() == 2 {
            let (a, b) = (qubits[0], qubits[1]);
            if a.node != b.node {
                return Err(NetworkError::Topology(format!("{a} and {b} are in different nodes")));
            }
            if a.is_electron() == b.is_electron() {
                return Err(NetworkError::Topology(format!("{a} and {b} are not an electron-carbon pair")));
            }
            if gate == Gate::Cnot && !a.is_electron() {
                return Err(NetworkError::Topology(format!("CNOT controlled by carbon {a}")));
            }
        }
        self.begin_local(node)?;
        self.flush(qubits)?;
        let p_g = self.profile.p_g;
        match gate {
            Gate::Swap => {
                let (e, c) = if qubits[0].is_electron() { (qubits[0], qubits[1]) } else { (qubits[1], qubits[0]) };
                let step = self.profile.t_swap / 3.0;
                for pair in [[e, c], [c, e], [e, c]] {
                    self.register.apply_unitary(&pair, &gates::cnot())?;
                    self.propagate(Gate::Cnot, &pair);
                    noise::depolarize_two_qubit(&mut self.register, e, c, p_g)?;
                    self.advance(node, step, qubits)?;
                }
            }
            _ => {
                self.register.apply_unitary(qubits, &gate.matrix())?;
                self.propagate(gate, qubits);
                if gate.arity() == 2 {
                    noise::depolarize_two_qubit(&mut self.register, qubits[0], qubits[1], p_g)?;
                }
                let dt = self.gate_duration(gate, qubits[0]);
                self.advance(node, dt, qubits)?;
            }
        }
        self.end_local(node);
        Ok(())
    }

    /// CNOT between an electron and a carbon of one node in either direction.
    /// A carbon control is compiled as H·CZ·H on the electron.
    pub fn cnot(&mut self, control: QubitId, target: QubitId) -> Result<(), NetworkError> {
        if control.is_electron() {
            return self.timed_gate(Gate::Cnot, &[control, target]);
        }
        if !target.is_electron() {
            return Err(NetworkError::Topology(format!("CNOT between carbons {control} and {target}")));
        }
        self.timed_gate(Gate::H, &[target])?;
        self.timed_gate(Gate::Cz, &[control, target])?;
        self.timed_gate(Gate::H, &[target])
    }

    pub fn timed_measure<R: Rng + ?Sized>(&mut self, q: QubitId, basis: Basis, rng: &mut R) -> Result<u8, NetworkError> {
        self.check_qubit(q)?;
        if !q.is_electron() {
            return Err(NetworkError::NotCommunicationQubit(q));
        }
        self.begin_local(q.node)?;
        self.flush(&[q])?;
        let f = self.frame.remove(&q).unwrap_or_default();
        let flip = match basis {
            Basis::Z => f.x,
            Basis::X => f.z,
        };
        let outcome = noise::noisy_measure(&mut self.register, q, basis, self.profile.p_m, rng)? ^ flip as u8;
        let dt = self.profile.t_meas + if basis == Basis::X { self.profile.electron_gates.h } else { 0.0 };
        self.advance(q.node, dt, &[q])?;
        self.end_local(q.node);
        self.links.retain(|&(a, b)| a != q.node && b != q.node);
        Ok(outcome)
    }

    /// Heralded entanglement between the electrons of nodes `a` and `b`.
    pub fn generate_link<R: Rng + ?Sized>(&mut self, a: usize, b: usize, rng: &mut R) -> Result<LinkResult, NetworkError> {
        self.check_node(a)?;
        self.check_node(b)?;
        if a == b {
            return Err(NetworkError::Topology(format!("link from node {a} to itself")));
        }
        self.dd_align(&[a, b])?;
        let attempts = sample_attempts(self.profile.p_re, rng)?;
        let elapsed = attempts as f64 * self.profile.t_re;
        let (ea, eb) = (QubitId::electron(a), QubitId::electron(b));
        for e in [ea, eb] {
            self.frame.remove(&e);
            self.pending.remove(&e);
            if self.register.is_allocated(e) {
                self.register.discard(e)?;
            }
        }
        self.links.retain(|&(x, y)| x != a && y != a && x != b && y != b);
        for n in [a, b] {
            self.nodes[n].re_active = true;
            self.advance(n, elapsed, &[])?;
            self.log(QubitId::electron(n), self.nodes[n].clock - elapsed, elapsed, ChargeKind::Busy);
            self.nodes[n].re_active = false;
        }
        self.register.allocate_state(&[ea, eb], noise::re_bell_resource(self.profile.p_n)?)?;
        for n in [a, b] {
            self.nodes[n].burst_open = true;
            self.end_local(n);
        }
        self.links.push((a, b));
        self.links_generated += 1;
        Ok(LinkResult { nodes: (a, b), attempts, elapsed })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::densmat::{ket, projector, C64};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn phi_plus() -> Vec<C64> {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        ket(&[s, 0.0, 0.0, s])
    }

    #[test]
    fn presets_are_valid() {
        HardwareProfile::purified().validate().unwrap();
        HardwareProfile::natural().validate().unwrap();
        HardwareProfile::noiseless().validate().unwrap();
        assert!((HardwareProfile::purified().dd_period() - 0.043).abs() < 1e-12);
        assert!((HardwareProfile::natural().dd_period() - 0.004).abs() < 1e-12);
        let mut p = HardwareProfile::purified();
        p.t_swap = 0.05;
        assert!(p.validate().is_err());
        p = HardwareProfile::purified();
        p.p_m = 1.5;
        assert!(p.validate().is_err());
    }

    #[test]
    fn build_examples() {
        let net = build_network(HardwareProfile::purified(), 2, 1).unwrap();
        assert_eq!(net.register.qubits().count(), 4);
        for q in net.register.qubits() {
            assert!((net.register.probability_z(q, 0).unwrap() - 1.0).abs() < 1e-15);
        }
        let net = build_network(HardwareProfile::purified(), 4, 3).unwrap();
        assert_eq!(net.register.qubits().count(), 16);
        assert_eq!(build_network(HardwareProfile::purified(), 1, 4).unwrap_err(), NetworkError::TooManyCarbons(4));
    }

    #[test]
    fn attempts_distribution() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        assert_eq!(sample_attempts(1.0, &mut rng).unwrap(), 1);
        assert!(sample_attempts(0.0, &mut rng).is_err());
        let n = 1_000_000;
        let mean = (0..n).map(|_| sample_attempts(1e-4, &mut rng).unwrap() as f64).sum::<f64>() / n as f64;
        let sigma = ((1.0 - 1e-4) / 1e-8 / n as f64).sqrt();
        assert!((mean - 1e4).abs() < 3.0 * sigma, "mean {mean}");
        let ones = (0..100_000).filter(|_| sample_attempts(0.5, &mut rng).unwrap() == 1).count() as f64;
        assert!((ones / 1e5 - 0.5).abs() < 3.0 * (0.25f64 / 1e5).sqrt());
    }

    #[test]
    fn single_link_decay_constants() {
        let mut p = HardwareProfile::purified();
        p.p_re = 1.0;
        p.p_n = 0.0;
        p.t_re = 0.1;
        let mut net = build_network(p.clone(), 3, 1).unwrap();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let plus = projector(&ket(&[s, s]));
        for n in 0..3 {
            net.prepare_state(&[QubitId::carbon(n, 1)], plus.clone()).unwrap();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let link = net.generate_link(0, 1, &mut rng).unwrap();
        assert_eq!(link.attempts, 1);
        assert!((link.elapsed - 0.1).abs() < 1e-15);
        assert!((net.register.fidelity_pure(&[QubitId::electron(0), QubitId::electron(1)], &phi_plus()).unwrap() - 1.0).abs() < 1e-12);
        net.finalize().unwrap();
        let coh = |net: &NetworkState, n| net.register.reduced_state(&[QubitId::carbon(n, 1)]).unwrap()[(0, 1)].re;
        assert!((coh(&net, 0) - 0.5 * (-0.1 / p.carbon_re.t2).exp()).abs() < 1e-12);
        assert!((coh(&net, 1) - 0.5 * (-0.1 / p.carbon_re.t2).exp()).abs() < 1e-12);
        assert!((coh(&net, 2) - 0.5 * (-0.1 / p.carbon_idle.t2).exp()).abs() < 1e-12);
    }

    #[test]
    fn noisy_link_fidelity() {
        let mut p = HardwareProfile::purified();
        p.p_re = 1.0;
        let mut net = build_network(p, 2, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        net.generate_link(0, 1, &mut rng).unwrap();
        let f = net.register.fidelity_pure(&[QubitId::electron(0), QubitId::electron(1)], &phi_plus()).unwrap();
        assert!((f - 0.9).abs() < 1e-12);
    }

    #[test]
    fn gate_durations_and_topology() {
        let mut net = build_network(HardwareProfile::purified(), 2, 2).unwrap();
        let e = QubitId::electron(0);
        let c = QubitId::carbon(0, 1);
        net.timed_gate(Gate::H, &[e]).unwrap();
        assert!((net.node_clock(0) - 0.1e-6).abs() < 1e-15);
        net.timed_gate(Gate::Cz, &[c, e]).unwrap();
        assert!((net.node_clock(0) - 0.1e-6 - 25e-3).abs() < 1e-12);
        net.timed_gate(Gate::Swap, &[e, c]).unwrap();
        assert!((net.node_clock(0) - 0.1e-6 - 100e-3).abs() < 1e-12);
        assert_eq!(net.node_clock(1), 0.0);
        assert!(matches!(net.timed_gate(Gate::Cnot, &[c, e]), Err(NetworkError::Topology(_))));
        assert!(matches!(
            net.timed_gate(Gate::Cnot, &[c, QubitId::carbon(0, 2)]),
            Err(NetworkError::Topology(_))
        ));
        assert!(matches!(
            net.timed_gate(Gate::Cnot, &[e, QubitId::carbon(1, 1)]),
            Err(NetworkError::Topology(_))
        ));
        assert!("toffoli".parse::<Gate>().is_err());
    }

    #[test]
    fn compiled_cnot_matches_native() {
        let mut net = build_network(HardwareProfile::noiseless(), 1, 1).unwrap();
        let e = QubitId::electron(0);
        let c = QubitId::carbon(0, 1);
        net.timed_gate(Gate::X, &[c]).unwrap();
        net.cnot(c, e).unwrap();
        assert!((net.register.probability_z(e, 1).unwrap() - 1.0).abs() < 1e-12);
        let mut p = HardwareProfile::purified();
        p.p_g = 0.0;
        let mut net = build_network(p, 1, 1).unwrap();
        net.cnot(c, e).unwrap();
        assert!((net.node_clock(0) - (25e-3 + 0.2e-6)).abs() < 1e-12);
    }

    #[test]
    fn measurement_timing() {
        let mut net = build_network(HardwareProfile::purified(), 1, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        net.timed_measure(QubitId::electron(0), Basis::Z, &mut rng).unwrap();
        assert!((net.node_clock(0) - 4e-6).abs() < 1e-15);
        net.timed_measure(QubitId::electron(0), Basis::X, &mut rng).unwrap();
        assert!((net.node_clock(0) - 8.1e-6).abs() < 1e-15);
        assert_eq!(
            net.timed_measure(QubitId::carbon(0, 1), Basis::Z, &mut rng),
            Err(NetworkError::NotCommunicationQubit(QubitId::carbon(0, 1)))
        );
    }

    #[test]
    fn dd_alignment() {
        let mut net = build_network(HardwareProfile::purified(), 2, 1).unwrap();
        assert_eq!(net.dd_align(&[0]).unwrap(), 0.0);
        net.wait_until(0, 0.010).unwrap();
        let waited = net.dd_align(&[0]).unwrap();
        assert!((waited - 0.033).abs() < 1e-12);
        assert!((net.node_clock(0) - 0.043).abs() < 1e-12);
        // Ops after a wait start on the grid, ops inside a burst do not wait.
        let e = QubitId::electron(1);
        net.wait_until(1, 0.05).unwrap();
        net.timed_gate(Gate::H, &[e]).unwrap();
        assert!((net.node_clock(1) - (0.086 + 0.1e-6)).abs() < 1e-12);
        net.timed_gate(Gate::H, &[e]).unwrap();
        assert!((net.node_clock(1) - (0.086 + 0.2e-6)).abs() < 1e-12);
    }

    #[test]
    fn frame_matches_immediate_correction() {
        use crate::densmat::CMatrix;
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let e = QubitId::electron(0);
        let c = QubitId::carbon(0, 1);
        let g = CMatrix::from_fn(4, 4, |_, _| C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5));
        let rho = &g * g.adjoint();
        let rho = &rho / crate::densmat::trace(&rho);
        for (x, z) in [(true, false), (false, true), (true, true)] {
            let mut framed = build_network(HardwareProfile::noiseless(), 1, 1).unwrap();
            framed.prepare_state(&[e, c], rho.clone()).unwrap();
            let mut direct = framed.clone();
            framed.frame_pauli(e, x, z);
            if x {
                direct.timed_gate(Gate::X, &[e]).unwrap();
            }
            if z {
                direct.timed_gate(Gate::Z, &[e]).unwrap();
            }
            for net in [&mut framed, &mut direct] {
                net.timed_gate(Gate::H, &[e]).unwrap();
                net.cnot(c, e).unwrap();
                net.timed_gate(Gate::Swap, &[e, c]).unwrap();
                net.timed_gate(Gate::Cnot, &[e, c]).unwrap();
                net.apply_frame().unwrap();
            }
            let a = framed.register.reduced_state(&[e, c]).unwrap();
            let b = direct.register.reduced_state(&[e, c]).unwrap();
            assert!(crate::densmat::max_abs(&(a - b)) < 1e-12);
        }
    }

    #[test]
    fn frame_flips_measurement_record() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut net = build_network(HardwareProfile::noiseless(), 1, 1).unwrap();
        let e = QubitId::electron(0);
        net.frame_pauli(e, true, false);
        assert_eq!(net.timed_measure(e, Basis::Z, &mut rng).unwrap(), 1);
        assert_eq!(net.frame(e), FramePauli::default());
        net.reset_qubits().unwrap();
        net.timed_gate(Gate::H, &[e]).unwrap();
        net.frame_pauli(e, false, true);
        assert_eq!(net.timed_measure(e, Basis::X, &mut rng).unwrap(), 1);
    }

    #[test]
    fn time_is_conserved() {
        let mut net = build_network(HardwareProfile::purified(), 2, 1).unwrap();
        net.enable_audit();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        net.generate_link(0, 1, &mut rng).unwrap();
        net.timed_gate(Gate::Swap, &[QubitId::electron(0), QubitId::carbon(0, 1)]).unwrap();
        net.timed_measure(QubitId::electron(1), Basis::X, &mut rng).unwrap();
        net.generate_link(0, 1, &mut rng).unwrap();
        net.cnot(QubitId::carbon(0, 1), QubitId::electron(0)).unwrap();
        let end = net.finalize().unwrap();
        let log = net.audit().unwrap();
        for n in 0..2 {
            for q in net.node_qubits(n) {
                let mut entries: Vec<&Charge> = log.iter().filter(|c| c.qubit == q).collect();
                entries.sort_by(|a, b| a.start.partial_cmp(&b.start).unwrap());
                let mut t = 0.0;
                for c in entries {
                    assert!((c.start - t).abs() < 1e-12, "gap for {q} at {t}");
                    t = c.start + c.duration;
                }
                assert!((t - end).abs() < 1e-12, "{q} accounted until {t}, clock {end}");
            }
        }
    }
}
