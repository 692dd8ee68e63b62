//! Distillation and fusion blocks, the three four-node GHZ protocols and the
//! teleported non-local CNOT.
//!
//! Entangled states are tracked as one share per node. Bell pairs are
//! generated on the electrons and then either stored in a carbon or consumed
//! right away. All feed-forward corrections go through the network's Pauli
//! frame.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::densmat::{ket, QubitId, C64};
use crate::network::{build_network, Gate, HardwareProfile, NetworkError, NetworkState};
use crate::noise::{Basis, DecoherencePair};
use crate::stats::{band68, mean_stderr};
use crate::streams::derive_stream;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProtocolError {
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error("{protocol} needs {required} carbons per node, the network has {available}")]
    InsufficientCarbons { protocol: String, required: usize, available: usize },
    #[error("protocol needs {required} nodes, the network has {available}")]
    WrongNodeCount { required: usize, available: usize },
    #[error("states must overlap in exactly one node, found {0}")]
    Overlap(usize),
    #[error("share layout not supported: {0}")]
    Layout(String),
    #[error("unknown protocol '{0}'")]
    UnknownProtocol(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl ProtocolError {
    /// True for failures of the numerical invariants of the simulation.
    pub fn is_numerical(&self) -> bool {
        use crate::densmat::RegisterError as R;
        matches!(
            self,
            ProtocolError::Network(NetworkError::Register(R::Invariant(_) | R::DegenerateBranch(_)))
        )
    }
}

/// Shares of one multipartite entangled state, at most one per node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EntangledState {
    pub qubits: Vec<QubitId>,
}

impl EntangledState {
    pub fn new(qubits: Vec<QubitId>) -> Self {
        Self { qubits }
    }

    pub fn nodes(&self) -> Vec<usize> {
        self.qubits.iter().map(|q| q.node).collect()
    }

    pub fn share(&self, node: usize) -> Option<QubitId> {
        self.qubits.iter().copied().find(|q| q.node == node)
    }

    fn share_or(&self, node: usize) -> Result<QubitId, ProtocolError> {
        self.share(node).ok_or_else(|| ProtocolError::Layout(format!("no share in node {node}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stabilizer {
    ZZ,
    XX,
}

impl Stabilizer {
    pub fn complement(self) -> Self {
        match self {
            Stabilizer::ZZ => Stabilizer::XX,
            Stabilizer::XX => Stabilizer::ZZ,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricPair {
    pub f_entanglement: f64,
    pub f_average: f64,
    pub dimension: usize,
}

impl MetricPair {
    /// F_av = (d·F_e + 1)/(d + 1).
    pub fn from_entanglement(f_entanglement: f64, dimension: usize) -> Self {
        let d = dimension as f64;
        Self { f_entanglement, f_average: (d * f_entanglement + 1.0) / (d + 1.0), dimension }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProtocolOutcome {
    pub fidelity: f64,
    pub duration: f64,
    pub bell_pairs_used: u64,
    pub restarts: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GhzProtocol {
    Plain,
    Modicum,
    Expedient,
}

impl GhzProtocol {
    pub const ALL: [GhzProtocol; 3] = [GhzProtocol::Plain, GhzProtocol::Modicum, GhzProtocol::Expedient];

    /// Carbons per node the schedule needs.
    pub fn required_carbons(self) -> usize {
        match self {
            GhzProtocol::Plain => 1,
            GhzProtocol::Modicum => 2,
            GhzProtocol::Expedient => 3,
        }
    }

    /// Bell pairs consumed by one pass without failures.
    pub fn pairs_per_pass(self) -> u64 {
        match self {
            GhzProtocol::Plain => 3,
            GhzProtocol::Modicum => 4,
            GhzProtocol::Expedient => 22,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            GhzProtocol::Plain => "plain",
            GhzProtocol::Modicum => "modicum",
            GhzProtocol::Expedient => "expedient",
        }
    }
}

impl fmt::Display for GhzProtocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GhzProtocol {
    type Err = ProtocolError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "plain" => Ok(GhzProtocol::Plain),
            "modicum" => Ok(GhzProtocol::Modicum),
            "expedient" => Ok(GhzProtocol::Expedient),
            _ => Err(ProtocolError::UnknownProtocol(s.to_string())),
        }
    }
}

/// (|0…0⟩ + |1…1⟩)/√2 on `n` qubits.
pub fn ghz_vector(n: usize) -> Vec<C64> {
    let d = 1usize << n;
    let mut v = vec![0.0; d];
    v[0] = std::f64::consts::FRAC_1_SQRT_2;
    v[d - 1] = std::f64::consts::FRAC_1_SQRT_2;
    ket(&v)
}

/// Fresh Bell pair on the electrons of `a` and `b`.
pub fn bell_pair<R: Rng + ?Sized>(net: &mut NetworkState, a: usize, b: usize, rng: &mut R) -> Result<EntangledState, ProtocolError> {
    net.generate_link(a, b, rng)?;
    Ok(EntangledState::new(vec![QubitId::electron(a), QubitId::electron(b)]))
}

/// Swap every electron share of `state` into carbon `slot` of its node, or
/// every carbon share back onto the electron. Whatever the destination held
/// before is treated as spent.
pub fn swap_shares(net: &mut NetworkState, state: &EntangledState, slot: usize) -> Result<EntangledState, ProtocolError> {
    let mut out = Vec::with_capacity(state.qubits.len());
    for &q in &state.qubits {
        let e = QubitId::electron(q.node);
        let c = QubitId { node: q.node, slot };
        let (free, dest) = if q.is_electron() { (c, c) } else { (e, e) };
        net.recycle(free)?;
        net.timed_gate(Gate::Swap, &[e, c])?;
        out.push(dest);
    }
    Ok(EntangledState::new(out))
}

/// Parity check of a two-node stabilizer of `target` using the Bell pair
/// `ancilla` held on the electrons of the same two nodes. Returns true on
/// even parity.
pub fn single_selection<R: Rng + ?Sized>(
    net: &mut NetworkState,
    target: &EntangledState,
    ancilla: &EntangledState,
    stabilizer: Stabilizer,
    rng: &mut R,
) -> Result<bool, ProtocolError> {
    if ancilla.qubits.len() != 2 || ancilla.qubits.iter().any(|q| !q.is_electron()) {
        return Err(ProtocolError::Layout("ancilla must be a Bell pair on electrons".into()));
    }
    let mut parity = 0u8;
    for &e in &ancilla.qubits {
        let t = target.share_or(e.node)?;
        if t.is_electron() {
            return Err(ProtocolError::Layout(format!("target share {t} must be stored in a carbon")));
        }
        let m = match stabilizer {
            Stabilizer::ZZ => {
                net.cnot(t, e)?;
                net.timed_measure(e, Basis::Z, rng)?
            }
            Stabilizer::XX => {
                net.cnot(e, t)?;
                net.timed_measure(e, Basis::X, rng)?
            }
        };
        parity ^= m;
    }
    net.sync(&ancilla.nodes())?;
    Ok(parity == 0)
}

/// Two nested parity checks: a stored pair is first checked against the
/// complementary stabilizer by a second pair and then used to check `target`.
/// Consumes two links and the carbons in `anc_slot`.
pub fn double_selection<R: Rng + ?Sized>(
    net: &mut NetworkState,
    target: &EntangledState,
    nodes: (usize, usize),
    stabilizer: Stabilizer,
    anc_slot: usize,
    rng: &mut R,
) -> Result<bool, ProtocolError> {
    let (a, b) = nodes;
    let first = bell_pair(net, a, b, rng)?;
    let stored = swap_shares(net, &first, anc_slot)?;
    let second = bell_pair(net, a, b, rng)?;
    if !single_selection(net, &stored, &second, stabilizer.complement(), rng)? {
        return Ok(false);
    }
    let back = swap_shares(net, &stored, anc_slot)?;
    single_selection(net, target, &back, stabilizer, rng)
}

/// Three parity checks: the stored pair is checked against XX and then ZZ by
/// two further pairs before it checks `target`. Consumes three links.
pub fn triple_selection<R: Rng + ?Sized>(
    net: &mut NetworkState,
    target: &EntangledState,
    nodes: (usize, usize),
    stabilizer: Stabilizer,
    anc_slot: usize,
    rng: &mut R,
) -> Result<bool, ProtocolError> {
    let (a, b) = nodes;
    let first = bell_pair(net, a, b, rng)?;
    let stored = swap_shares(net, &first, anc_slot)?;
    for check in [Stabilizer::XX, Stabilizer::ZZ] {
        let helper = bell_pair(net, a, b, rng)?;
        if !single_selection(net, &stored, &helper, check, rng)? {
            return Ok(false);
        }
    }
    let back = swap_shares(net, &stored, anc_slot)?;
    single_selection(net, target, &back, stabilizer, rng)
}

/// Fuse two states on disjoint nodes with the Bell pair held on the
/// electrons of `link.0` (a node of `x`) and `link.1` (a node of `y`).
/// Deterministic: the parity record fixes an X correction on `y`.
pub fn block_fusion_bell<R: Rng + ?Sized>(
    net: &mut NetworkState,
    x: &EntangledState,
    y: &EntangledState,
    link: (usize, usize),
    rng: &mut R,
) -> Result<EntangledState, ProtocolError> {
    let (a, b) = link;
    if !net.has_link(a, b) {
        return Err(NetworkError::MissingLink(a, b).into());
    }
    if x.nodes().iter().any(|n| y.nodes().contains(n)) {
        return Err(ProtocolError::Layout("fused states must occupy disjoint nodes".into()));
    }
    let (xa, yb) = (x.share_or(a)?, y.share_or(b)?);
    let mut parity = 0u8;
    for share in [xa, yb] {
        if share.is_electron() {
            return Err(ProtocolError::Layout(format!("share {share} must be stored in a carbon")));
        }
        let e = QubitId::electron(share.node);
        net.cnot(share, e)?;
        parity ^= net.timed_measure(e, Basis::Z, rng)?;
    }
    if parity == 1 {
        for &q in &y.qubits {
            net.frame_pauli(q, true, false);
        }
    }
    let mut qubits = x.qubits.clone();
    qubits.extend(&y.qubits);
    Ok(EntangledState::new(qubits))
}

/// Fuse two states sharing one node, where `x` holds a carbon and `y` holds
/// the electron there. The electron is measured and removed; the outcome
/// fixes an X correction on `x`.
pub fn block_fusion_overlap<R: Rng + ?Sized>(
    net: &mut NetworkState,
    x: &EntangledState,
    y: &EntangledState,
    rng: &mut R,
) -> Result<EntangledState, ProtocolError> {
    let shared: Vec<usize> = x.nodes().into_iter().filter(|n| y.nodes().contains(n)).collect();
    if shared.len() != 1 {
        return Err(ProtocolError::Overlap(shared.len()));
    }
    let n = shared[0];
    let (c, e) = (x.share_or(n)?, y.share_or(n)?);
    if c.is_electron() || !e.is_electron() {
        return Err(ProtocolError::Layout(format!("fusion in node {n} needs a carbon share and an electron share")));
    }
    net.cnot(c, e)?;
    if net.timed_measure(e, Basis::Z, rng)? == 1 {
        for &q in &x.qubits {
            net.frame_pauli(q, true, false);
        }
    }
    let mut qubits = x.qubits.clone();
    qubits.extend(y.qubits.iter().copied().filter(|&q| q != e));
    Ok(EntangledState::new(qubits))
}

fn check_layout(net: &NetworkState, nodes: usize, carbons: usize, name: &str) -> Result<(), ProtocolError> {
    if net.nodes.len() != nodes {
        return Err(ProtocolError::WrongNodeCount { required: nodes, available: net.nodes.len() });
    }
    let available = net.nodes.iter().map(|n| n.carbons).min().unwrap_or(0);
    if available < carbons {
        return Err(ProtocolError::InsufficientCarbons { protocol: name.to_string(), required: carbons, available });
    }
    Ok(())
}

const A: usize = 0;
const B: usize = 1;
const C: usize = 2;
const D: usize = 3;

/// Build a four-qubit GHZ state over nodes A, B, C, D with the chosen
/// protocol. Stored GHZ shares end in carbon `required_carbons()` of their node.
pub fn run_ghz<R: Rng + ?Sized>(net: &mut NetworkState, protocol: GhzProtocol, rng: &mut R) -> Result<ProtocolOutcome, ProtocolError> {
    let slot = protocol.required_carbons();
    check_layout(net, 4, slot, protocol.name())?;
    let links_before = net.links_generated;
    let mut restarts = 0u64;
    let ghz = loop {
        let attempt = match protocol {
            GhzProtocol::Plain => Some(plain(net, slot, rng)?),
            GhzProtocol::Modicum => modicum(net, slot, rng)?,
            GhzProtocol::Expedient => expedient(net, slot, rng)?,
        };
        match attempt {
            Some(state) => break state,
            None => {
                restarts += 1;
                net.finalize()?;
                net.reset_qubits()?;
            }
        }
    };
    let duration = net.finalize()?;
    net.apply_frame()?;
    net.register.validate().map_err(NetworkError::from)?;
    let fidelity = net.register.fidelity_pure(&ghz.qubits, &ghz_vector(4)).map_err(NetworkError::from)?;
    Ok(ProtocolOutcome { fidelity, duration, bell_pairs_used: net.links_generated - links_before, restarts })
}

/// Three raw pairs: A–B and C–D stored, then fused with an A–C pair.
/// B and D store too, as an electron share left waiting dephases faster
/// than a carbon.
fn plain<R: Rng + ?Sized>(net: &mut NetworkState, slot: usize, rng: &mut R) -> Result<EntangledState, ProtocolError> {
    let ab = bell_pair(net, A, B, rng)?;
    let ab = swap_shares(net, &ab, slot)?;
    let cd = bell_pair(net, C, D, rng)?;
    let cd = swap_shares(net, &cd, slot)?;
    bell_pair(net, A, C, rng)?;
    block_fusion_bell(net, &ab, &cd, (A, C), rng)
}

/// Plain with overlap fusion plus one B–D parity check on the result.
fn modicum<R: Rng + ?Sized>(net: &mut NetworkState, slot: usize, rng: &mut R) -> Result<Option<EntangledState>, ProtocolError> {
    let ab = bell_pair(net, A, B, rng)?;
    let ab = swap_shares(net, &ab, slot)?;
    let cd = bell_pair(net, C, D, rng)?;
    let cd = swap_shares(net, &cd, slot)?;
    let ac = bell_pair(net, A, C, rng)?;
    let bd = bell_pair(net, B, D, rng)?;
    let abc = block_fusion_overlap(net, &ab, &ac, rng)?;
    let ghz = block_fusion_overlap(net, &cd, &abc, rng)?;
    let ok = single_selection(net, &ghz, &bd, Stabilizer::ZZ, rng)?;
    Ok(ok.then_some(ghz))
}

/// One purified Bell pair between `a` and `b`, retried locally until every
/// check passes.
fn expedient_branch<R: Rng + ?Sized>(
    net: &mut NetworkState,
    a: usize,
    b: usize,
    slot: usize,
    rng: &mut R,
) -> Result<EntangledState, ProtocolError> {
    let anc = slot - 1;
    loop {
        let pair = bell_pair(net, a, b, rng)?;
        let pair = swap_shares(net, &pair, slot)?;
        let ok = double_selection(net, &pair, (a, b), Stabilizer::ZZ, anc, rng)?
            && double_selection(net, &pair, (a, b), Stabilizer::XX, anc, rng)?
            && {
                let helper = bell_pair(net, a, b, rng)?;
                single_selection(net, &pair, &helper, Stabilizer::ZZ, rng)?
            };
        if ok {
            return Ok(pair);
        }
        net.sync(&[a, b])?;
        net.reset_nodes(&[a, b])?;
    }
}

/// Purified A–B and C–D pairs fused with a raw A–C pair, followed by three
/// triple-selection checks of the GHZ state.
fn expedient<R: Rng + ?Sized>(net: &mut NetworkState, slot: usize, rng: &mut R) -> Result<Option<EntangledState>, ProtocolError> {
    let ab = expedient_branch(net, A, B, slot, rng)?;
    let cd = expedient_branch(net, C, D, slot, rng)?;
    bell_pair(net, A, C, rng)?;
    let ghz = block_fusion_bell(net, &ab, &cd, (A, C), rng)?;
    for nodes in [(A, C), (B, D), (A, D)] {
        if !triple_selection(net, &ghz, nodes, Stabilizer::ZZ, slot - 1, rng)? {
            return Ok(None);
        }
    }
    Ok(Some(ghz))
}

/// Control carbon of node 0, target carbon of node 1 and their reference
/// partners, in that order.
pub fn cnot_choi_qubits() -> [QubitId; 4] {
    [QubitId::carbon(0, 1), QubitId::carbon(1, 1), QubitId::electron(2), QubitId::electron(3)]
}

/// (CNOT ⊗ I)|Ω⟩ in the order of [`cnot_choi_qubits`].
pub fn cnot_choi_vector() -> Vec<C64> {
    let mut v = vec![0.0; 16];
    for a in 0..2 {
        for b in 0..2 {
            v[(a << 3) | ((a ^ b) << 2) | (a << 1) | b] = 0.5;
        }
    }
    ket(&v)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CnotOutcome {
    pub metrics: MetricPair,
    pub duration: f64,
}

/// Teleported CNOT from the carbon of node 0 to the carbon of node 1 using
/// one electron Bell pair. Returns the entanglement and average fidelity of
/// the implemented channel.
pub fn run_nonlocal_cnot<R: Rng + ?Sized>(net: &mut NetworkState, rng: &mut R) -> Result<CnotOutcome, ProtocolError> {
    check_layout(net, 2, 1, "non-local CNOT")?;
    let [ca, cb, ra, rb] = cnot_choi_qubits();
    let phi = crate::densmat::projector(&ghz_vector(2));
    net.prepare_state(&[ca, ra], phi.clone())?;
    net.prepare_state(&[cb, rb], phi)?;

    net.generate_link(0, 1, rng)?;
    let (ea, eb) = (QubitId::electron(0), QubitId::electron(1));
    net.cnot(ca, ea)?;
    let m1 = net.timed_measure(ea, Basis::Z, rng)?;
    net.cnot(eb, cb)?;
    let m2 = net.timed_measure(eb, Basis::X, rng)?;
    net.frame_pauli(cb, m1 == 1, false);
    net.frame_pauli(ca, false, m2 == 1);

    let duration = net.finalize()?;
    net.apply_frame()?;
    net.register.validate().map_err(NetworkError::from)?;
    let fe = net.register.fidelity_pure(&cnot_choi_qubits(), &cnot_choi_vector()).map_err(NetworkError::from)?;
    Ok(CnotOutcome { metrics: MetricPair::from_entanglement(fe, 4), duration })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub n_1e: f64,
    pub reps: usize,
    pub mean_f_average: f64,
    pub stderr_f_average: f64,
    pub mean_f_entanglement: f64,
    /// 16th, 50th and 84th percentile of the protocol duration.
    pub duration_band: [f64; 3],
}

/// Profile with carbon T1 = T2 = `n_1e`·t_re while entangling.
pub fn with_memory_lifetime(profile: &HardwareProfile, n_1e: f64) -> HardwareProfile {
    let t = n_1e * profile.t_re;
    HardwareProfile { carbon_re: DecoherencePair { t1: t, t2: t }, ..profile.clone() }
}

/// `reps` independent GHZ runs; repetition `r` uses stream `r` of `master_seed`.
pub fn ghz_runs(
    profile: &HardwareProfile,
    protocol: GhzProtocol,
    reps: usize,
    master_seed: u64,
) -> Result<Vec<ProtocolOutcome>, ProtocolError> {
    (0..reps)
        .into_par_iter()
        .map(|r| {
            let mut rng = derive_stream(master_seed, r as u64);
            let mut net = build_network(profile.clone(), 4, protocol.required_carbons())?;
            run_ghz(&mut net, protocol, &mut rng)
        })
        .collect()
}

/// `reps` non-local CNOT runs; repetition `r` uses stream `first_stream + r`.
pub fn cnot_runs(
    profile: &HardwareProfile,
    reps: usize,
    master_seed: u64,
    first_stream: u64,
) -> Result<Vec<CnotOutcome>, ProtocolError> {
    (0..reps)
        .into_par_iter()
        .map(|r| {
            let mut rng = derive_stream(master_seed, first_stream + r as u64);
            let mut net = build_network(profile.clone(), 2, 1)?;
            run_nonlocal_cnot(&mut net, &mut rng)
        })
        .collect()
}

/// Non-local CNOT fidelity for each memory lifetime. Point `i`, repetition
/// `r` uses stream `i·reps + r` of `master_seed`.
pub fn sweep_memory_lifetime(
    profile: &HardwareProfile,
    n_values: &[f64],
    reps: usize,
    master_seed: u64,
) -> Result<Vec<SweepPoint>, ProtocolError> {
    if reps == 0 || n_values.iter().any(|&n| !(n > 0.0)) {
        return Err(ProtocolError::InvalidArgument("lifetimes and repetitions must be positive".into()));
    }
    n_values
        .iter()
        .enumerate()
        .map(|(i, &n)| {
            let runs = cnot_runs(&with_memory_lifetime(profile, n), reps, master_seed, (i * reps) as u64)?;
            let fav: Vec<f64> = runs.iter().map(|o| o.metrics.f_average).collect();
            let fe: Vec<f64> = runs.iter().map(|o| o.metrics.f_entanglement).collect();
            let durations: Vec<f64> = runs.iter().map(|o| o.duration).collect();
            let (mean, se) = mean_stderr(&fav);
            Ok(SweepPoint {
                n_1e: n,
                reps,
                mean_f_average: mean,
                stderr_f_average: se,
                mean_f_entanglement: mean_stderr(&fe).0,
                duration_band: band68(&durations),
            })
        })
        .collect()
}

/// Ratio of entanglement generation rate to memory decoherence rate.
pub fn link_efficiency(r_ent: f64, r_dec: f64) -> Result<f64, ProtocolError> {
    if !(r_ent > 0.0 && r_dec > 0.0) {
        return Err(ProtocolError::InvalidArgument("rates must be positive".into()));
    }
    Ok(r_ent / r_dec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::densmat::{projector, CMatrix, Register};
    use crate::noise::re_bell_resource;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn metric_endpoints() {
        assert_eq!(MetricPair::from_entanglement(1.0, 4).f_average, 1.0);
        assert!((MetricPair::from_entanglement(1.0 / 16.0, 4).f_average - 0.25).abs() < 1e-15);
    }

    #[test]
    fn efficiency_examples() {
        assert_eq!(link_efficiency(2.0, 2.0).unwrap(), 1.0);
        let t_re = 6e-6;
        assert!((link_efficiency(1e-4 / t_re, 1.0 / (1e5 * t_re)).unwrap() - 10.0).abs() < 1e-9);
        assert!((link_efficiency(1e-4 / t_re, 1.0 / (2e3 * t_re)).unwrap() - 0.2).abs() < 1e-12);
        assert!(link_efficiency(0.0, 1.0).is_err());
    }

    #[test]
    fn protocol_names_roundtrip() {
        for p in GhzProtocol::ALL {
            assert_eq!(p.name().parse::<GhzProtocol>().unwrap(), p);
        }
        assert!("fancy".parse::<GhzProtocol>().is_err());
    }

    #[test]
    fn noiseless_protocols_are_exact() {
        for p in GhzProtocol::ALL {
            for seed in 0..5 {
                let mut net = build_network(HardwareProfile::noiseless(), 4, p.required_carbons()).unwrap();
                let out = run_ghz(&mut net, p, &mut rng(seed)).unwrap();
                assert!((out.fidelity - 1.0).abs() < 1e-9, "{p}: {}", out.fidelity);
                assert_eq!(out.restarts, 0);
                assert_eq!(out.bell_pairs_used, p.pairs_per_pass());
            }
        }
        for seed in 0..5 {
            let mut net = build_network(HardwareProfile::noiseless(), 2, 1).unwrap();
            let out = run_nonlocal_cnot(&mut net, &mut rng(seed)).unwrap();
            assert!((out.metrics.f_average - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn insufficient_carbons() {
        let mut net = build_network(HardwareProfile::noiseless(), 4, 2).unwrap();
        assert!(matches!(
            run_ghz(&mut net, GhzProtocol::Expedient, &mut rng(0)),
            Err(ProtocolError::InsufficientCarbons { required: 3, available: 2, .. })
        ));
        let mut net = build_network(HardwareProfile::noiseless(), 3, 3).unwrap();
        assert!(matches!(run_ghz(&mut net, GhzProtocol::Plain, &mut rng(0)), Err(ProtocolError::WrongNodeCount { .. })));
    }

    fn pair_on_carbons(net: &mut NetworkState, a: usize, b: usize, r: &mut ChaCha8Rng) -> EntangledState {
        let p = bell_pair(net, a, b, r).unwrap();
        swap_shares(net, &p, 1).unwrap()
    }

    #[test]
    fn fusion_bell_gives_ghz() {
        let mut r = rng(2);
        for _ in 0..8 {
            let mut net = build_network(HardwareProfile::noiseless(), 4, 1).unwrap();
            let x = pair_on_carbons(&mut net, 0, 1, &mut r);
            let y = pair_on_carbons(&mut net, 2, 3, &mut r);
            assert!(matches!(block_fusion_bell(&mut net, &x, &y, (0, 2), &mut r), Err(ProtocolError::Network(NetworkError::MissingLink(0, 2)))));
            bell_pair(&mut net, 0, 2, &mut r).unwrap();
            let g = block_fusion_bell(&mut net, &x, &y, (0, 2), &mut r).unwrap();
            net.apply_frame().unwrap();
            assert!((net.register.fidelity_pure(&g.qubits, &ghz_vector(4)).unwrap() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn fusion_bell_with_noisy_link() {
        let mut p = HardwareProfile::noiseless();
        p.p_n = 0.1;
        let mut r = rng(3);
        let mut net = build_network(HardwareProfile::noiseless(), 4, 1).unwrap();
        let x = pair_on_carbons(&mut net, 0, 1, &mut r);
        let y = pair_on_carbons(&mut net, 2, 3, &mut r);
        net.profile = p;
        bell_pair(&mut net, 0, 2, &mut r).unwrap();
        let g = block_fusion_bell(&mut net, &x, &y, (0, 2), &mut r).unwrap();
        net.apply_frame().unwrap();
        let f = net.register.fidelity_pure(&g.qubits, &ghz_vector(4)).unwrap();
        assert!(f < 1.0 - 1e-3, "{f}");
    }

    #[test]
    fn fusion_overlap_gives_ghz3() {
        let mut r = rng(4);
        for _ in 0..8 {
            let mut net = build_network(HardwareProfile::noiseless(), 3, 1).unwrap();
            let x = pair_on_carbons(&mut net, 0, 1, &mut r);
            let y = bell_pair(&mut net, 0, 2, &mut r).unwrap();
            let g = block_fusion_overlap(&mut net, &x, &y, &mut r).unwrap();
            assert_eq!(g.qubits.len(), 3);
            net.apply_frame().unwrap();
            assert!((net.register.fidelity_pure(&g.qubits, &ghz_vector(3)).unwrap() - 1.0).abs() < 1e-12);
        }
        let mut net = build_network(HardwareProfile::noiseless(), 4, 1).unwrap();
        let x = pair_on_carbons(&mut net, 0, 1, &mut r);
        let y = bell_pair(&mut net, 2, 3, &mut r).unwrap();
        assert_eq!(block_fusion_overlap(&mut net, &x, &y, &mut r), Err(ProtocolError::Overlap(0)));
    }

    #[test]
    fn fusion_overlap_gate_noise_is_first_order() {
        let mut p = HardwareProfile::noiseless();
        p.p_g = 0.01;
        let mut r = rng(5);
        let trials = 200;
        let mut mean = 0.0;
        for _ in 0..trials {
            let mut net = build_network(HardwareProfile::noiseless(), 3, 1).unwrap();
            let x = pair_on_carbons(&mut net, 0, 1, &mut r);
            let y = bell_pair(&mut net, 0, 2, &mut r).unwrap();
            net.profile = p.clone();
            let g = block_fusion_overlap(&mut net, &x, &y, &mut r).unwrap();
            net.apply_frame().unwrap();
            mean += net.register.fidelity_pure(&g.qubits, &ghz_vector(3)).unwrap() / trials as f64;
        }
        // 14 of the 15 Pauli pairs on (carbon, electron) spoil the result.
        assert!((mean - (1.0 - 14.0 / 15.0 * 0.01)).abs() < 1e-3, "{mean}");
    }

    #[test]
    fn single_selection_noiseless_keeps_state() {
        let mut r = rng(6);
        for stab in [Stabilizer::ZZ, Stabilizer::XX] {
            let mut net = build_network(HardwareProfile::noiseless(), 2, 1).unwrap();
            let t = pair_on_carbons(&mut net, 0, 1, &mut r);
            let anc = bell_pair(&mut net, 0, 1, &mut r).unwrap();
            assert!(single_selection(&mut net, &t, &anc, stab, &mut r).unwrap());
            net.apply_frame().unwrap();
            assert!((net.register.fidelity_pure(&t.qubits, &ghz_vector(2)).unwrap() - 1.0).abs() < 1e-12);
        }
    }

    /// Exact average over outcomes of a ZZ check of ρ(p_n = 0.1) with a
    /// perfect ancilla.
    #[test]
    fn single_selection_distills_network_error() {
        let mut r = rng(7);
        let mut net = build_network(HardwareProfile::noiseless(), 2, 1).unwrap();
        let t = vec![QubitId::carbon(0, 1), QubitId::carbon(1, 1)];
        net.prepare_state(&t, re_bell_resource(0.1).unwrap()).unwrap();
        let target = EntangledState::new(t.clone());
        let (mut kept, mut f_kept) = (0.0, 0.0);
        let n = 400;
        for _ in 0..n {
            let mut trial = net.clone();
            let anc = bell_pair(&mut trial, 0, 1, &mut r).unwrap();
            if single_selection(&mut trial, &target, &anc, Stabilizer::ZZ, &mut r).unwrap() {
                trial.apply_frame().unwrap();
                kept += 1.0;
                f_kept += trial.register.fidelity_pure(&t, &ghz_vector(2)).unwrap();
            }
        }
        assert!(f_kept / kept > 0.9 + 0.05, "{}", f_kept / kept);
        assert!((kept / n as f64 - 0.9).abs() < 0.06);
    }

    #[test]
    fn selection_blocks_account_links() {
        let mut r = rng(8);
        let mut net = build_network(HardwareProfile::noiseless(), 2, 2).unwrap();
        let t = pair_on_carbons(&mut net, 0, 1, &mut r);
        let before = net.links_generated;
        assert!(double_selection(&mut net, &t, (0, 1), Stabilizer::ZZ, 2, &mut r).unwrap());
        assert_eq!(net.links_generated - before, 2);
        assert!(triple_selection(&mut net, &t, (0, 1), Stabilizer::XX, 2, &mut r).unwrap());
        assert_eq!(net.links_generated - before, 5);
        net.apply_frame().unwrap();
        assert!((net.register.fidelity_pure(&t.qubits, &ghz_vector(2)).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn double_selection_succeeds_less_often() {
        let mut p = HardwareProfile::noiseless();
        p.p_n = 0.2;
        let trials = 600;
        let (mut single, mut double) = (0, 0);
        let mut r = rng(9);
        for _ in 0..trials {
            let mut net = build_network(p.clone(), 2, 2).unwrap();
            let t = pair_on_carbons(&mut net, 0, 1, &mut r);
            let mut other = net.clone();
            let anc = bell_pair(&mut net, 0, 1, &mut r).unwrap();
            single += single_selection(&mut net, &t, &anc, Stabilizer::ZZ, &mut r).unwrap() as u32;
            double += double_selection(&mut other, &t, (0, 1), Stabilizer::ZZ, 2, &mut r).unwrap() as u32;
        }
        assert!(double < single, "double {double} single {single}");
    }

    #[test]
    fn depolarized_cnot_output_gives_quarter() {
        let mut reg = Register::new();
        let q = cnot_choi_qubits();
        reg.allocate_state(&q, CMatrix::identity(16, 16) / C64::new(16.0, 0.0)).unwrap();
        let fe = reg.fidelity_pure(&q, &cnot_choi_vector()).unwrap();
        assert!((fe - 1.0 / 16.0).abs() < 1e-15);
        assert!((MetricPair::from_entanglement(fe, 4).f_average - 0.25).abs() < 1e-15);
        let v = cnot_choi_vector();
        assert!((crate::densmat::trace(&projector(&v)).re - 1.0).abs() < 1e-15);
    }

    #[test]
    fn plain_is_symmetric_under_node_relabelling() {
        // Relabelling A↔B and C↔D maps the Plain schedule onto itself up to the
        // fusion nodes; with durations zero only the link and gate noise remain.
        let mut p = HardwareProfile::noiseless();
        p.p_n = 0.1;
        p.p_g = 0.01;
        let reps = 300;
        let mean = |perm: [usize; 4]| {
            let mut total = 0.0;
            for seed in 0..reps {
                let mut r = rng(seed);
                let mut net = build_network(p.clone(), 4, 1).unwrap();
                let ab = bell_pair(&mut net, perm[0], perm[1], &mut r).unwrap();
                let ab = swap_shares(&mut net, &ab, 1).unwrap();
                let cd = bell_pair(&mut net, perm[2], perm[3], &mut r).unwrap();
                let cd = swap_shares(&mut net, &cd, 1).unwrap();
                bell_pair(&mut net, perm[0], perm[2], &mut r).unwrap();
                let g = block_fusion_bell(&mut net, &ab, &cd, (perm[0], perm[2]), &mut r).unwrap();
                net.apply_frame().unwrap();
                let order: Vec<QubitId> = (0..4).map(|n| g.share(n).unwrap()).collect();
                total += net.register.fidelity_pure(&order, &ghz_vector(4)).unwrap();
            }
            total / reps as f64
        };
        let a = mean([0, 1, 2, 3]);
        let b = mean([1, 0, 3, 2]);
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
}
