//! Run configuration and CSV emission for the command-line driver.
//!
//! A config file is TOML with top-level run keys and one flat section per
//! module:
//!
//! ```toml
//! experiment = "ghz"
//! profile = "purified"
//! repetitions = 1000
//! seed = 7
//!
//! [hardware]
//! t2n_re = 0.012
//!
//! [ghz]
//! protocol = "modicum"
//! ```
//!
//! Anything left out takes the value of the selected profile or module
//! default. Unknown keys are rejected.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Deserialize;
use thiserror::Error;

use crate::dephasing::{self, DephasingConfig, DephasingError, ResetModel};
use crate::network::HardwareProfile;
use crate::noise::DecoherencePair;
use crate::protocols::{self, GhzProtocol, ProtocolError};
use crate::pulse::{self, PulseError, PulseParameters};
use crate::stats::{band68, mean_stderr};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("numerical invariant violated: {0}")]
    Numerical(String),
    #[error("simulation failed: {0}")]
    Run(String),
}

impl HarnessError {
    /// 2 for broken numerical invariants, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Numerical(_) => 2,
            _ => 1,
        }
    }
}

impl From<ProtocolError> for HarnessError {
    fn from(e: ProtocolError) -> Self {
        if e.is_numerical() {
            HarnessError::Numerical(e.to_string())
        } else {
            HarnessError::Run(e.to_string())
        }
    }
}

impl From<DephasingError> for HarnessError {
    fn from(e: DephasingError) -> Self {
        HarnessError::Config(e.to_string())
    }
}

impl From<PulseError> for HarnessError {
    fn from(e: PulseError) -> Self {
        HarnessError::Config(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    Ghz,
    CnotSweep,
    Dephasing,
    DephasingGrid,
    Pulse,
}

impl Experiment {
    pub const ALL: [Experiment; 5] =
        [Experiment::Ghz, Experiment::CnotSweep, Experiment::Dephasing, Experiment::DephasingGrid, Experiment::Pulse];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::Ghz => "ghz",
            Experiment::CnotSweep => "cnot-sweep",
            Experiment::Dephasing => "dephasing",
            Experiment::DephasingGrid => "dephasing-grid",
            Experiment::Pulse => "pulse",
        }
    }
}

impl std::fmt::Display for Experiment {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Experiment {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Experiment::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| HarnessError::Config(format!("unknown experiment '{s}'")))
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    experiment: Option<String>,
    profile: Option<String>,
    repetitions: Option<usize>,
    seed: Option<u64>,
    output: Option<PathBuf>,
    #[serde(default)]
    hardware: RawHardware,
    #[serde(default)]
    ghz: RawGhz,
    #[serde(default)]
    cnot: RawCnot,
    #[serde(default)]
    dephasing: RawDephasing,
    #[serde(default)]
    pulse: RawPulse,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawHardware {
    p_g: Option<f64>,
    p_m: Option<f64>,
    p_n: Option<f64>,
    p_re: Option<f64>,
    t_meas: Option<f64>,
    t_re: Option<f64>,
    te_x: Option<f64>,
    te_y: Option<f64>,
    te_z: Option<f64>,
    te_h: Option<f64>,
    tc_x: Option<f64>,
    tc_y: Option<f64>,
    tc_z: Option<f64>,
    tc_h: Option<f64>,
    t_cnot: Option<f64>,
    t_cz: Option<f64>,
    t_swap: Option<f64>,
    t1n_idle: Option<f64>,
    t2n_idle: Option<f64>,
    t1n_re: Option<f64>,
    t2n_re: Option<f64>,
    t2e_idle: Option<f64>,
    dd_tau: Option<f64>,
    dd_pi: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGhz {
    protocol: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCnot {
    n_1e: Option<Vec<f64>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDephasing {
    echo: Option<bool>,
    a_par: Option<f64>,
    p_init: Option<f64>,
    p_mw: Option<f64>,
    alpha: Option<f64>,
    p_opt: Option<f64>,
    p_echo: Option<f64>,
    t_a: Option<f64>,
    t_b: Option<f64>,
    reset: Option<String>,
    reset_a: Option<f64>,
    reset_b: Option<f64>,
    reset_tau1: Option<f64>,
    reset_tau2: Option<f64>,
    reset_mean: Option<f64>,
    n_trials: Option<usize>,
    n_samples: Option<usize>,
    stride: Option<usize>,
    grid_p_init: Option<Vec<f64>>,
    grid_p_echo: Option<Vec<f64>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPulse {
    d: Option<f64>,
    q: Option<f64>,
    gamma_n_bz: Option<f64>,
    a_par: Option<f64>,
    omega: Option<f64>,
    tone_scale: Option<[f64; 3]>,
    phases: Option<[f64; 3]>,
    sigma_f: Option<f64>,
    duration: Option<f64>,
    dt: Option<f64>,
    samples: Option<usize>,
}

/// Fully resolved run settings.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub experiment: Option<Experiment>,
    pub profile_name: String,
    pub profile: HardwareProfile,
    /// Overrides the experiment's own repetition count when set.
    pub repetitions: Option<usize>,
    pub master_seed: u64,
    pub output: Option<PathBuf>,
    pub ghz_protocol: GhzProtocol,
    pub cnot_n_1e: Vec<f64>,
    pub dephasing: DephasingConfig,
    /// Write every `stride`-th point of the dephasing curve.
    pub dephasing_stride: usize,
    pub grid_p_init: Vec<f64>,
    pub grid_p_echo: Vec<f64>,
    pub pulse: PulseParameters,
    pub pulse_samples: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            experiment: None,
            profile_name: "purified".into(),
            profile: HardwareProfile::purified(),
            repetitions: None,
            master_seed: 0,
            output: None,
            ghz_protocol: GhzProtocol::Plain,
            cnot_n_1e: vec![83333.0],
            dephasing: DephasingConfig::no_echo(),
            dephasing_stride: 1000,
            grid_p_init: vec![0.0, 0.01, 0.02, 0.03],
            grid_p_echo: vec![0.0, 0.01, 0.02, 0.03],
            pulse: PulseParameters::default(),
            pulse_samples: 1000,
        }
    }
}

impl RunConfig {
    /// Repetitions actually run: detuning samples for `pulse`, phase-walk
    /// samples for the dephasing experiments.
    pub fn effective_repetitions(&self) -> usize {
        if let Some(r) = self.repetitions {
            return r;
        }
        match self.experiment {
            Some(Experiment::Ghz) | None => 1000,
            Some(Experiment::CnotSweep) => 10_000,
            Some(Experiment::Dephasing | Experiment::DephasingGrid) => self.dephasing.n_samples,
            Some(Experiment::Pulse) => self.pulse_samples,
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.repetitions == Some(0) {
            return Err(HarnessError::Config("repetitions must be at least 1".into()));
        }
        self.profile.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        if self.cnot_n_1e.is_empty() || self.cnot_n_1e.iter().any(|&n| !(n > 0.0 && n.is_finite())) {
            return Err(HarnessError::Config("cnot.n_1e needs at least one positive value".into()));
        }
        if self.dephasing_stride == 0 {
            return Err(HarnessError::Config("dephasing.stride must be at least 1".into()));
        }
        self.dephasing.validate()?;
        self.pulse.validate()?;
        Ok(())
    }
}

fn config_err(e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Config(e.to_string())
}

pub fn parse_config(path: &Path) -> Result<RunConfig, HarnessError> {
    let bytes = std::fs::read(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
    let text = String::from_utf8(bytes).map_err(|_| config_err(format!("{}: not valid UTF-8", path.display())))?;
    parse_config_str(&text).map_err(|e| match e {
        HarnessError::Config(m) => HarnessError::Config(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn parse_config_str(text: &str) -> Result<RunConfig, HarnessError> {
    let raw: RawConfig = toml::from_str(text).map_err(config_err)?;
    let mut cfg = RunConfig {
        experiment: raw.experiment.as_deref().map(Experiment::from_str).transpose()?,
        ..Default::default()
    };
    if let Some(name) = raw.profile {
        cfg.profile = HardwareProfile::by_name(&name).ok_or_else(|| config_err(format!("unknown profile '{name}'")))?;
        cfg.profile_name = name;
    }
    apply_hardware(&mut cfg.profile, &raw.hardware);
    cfg.repetitions = raw.repetitions;
    if let Some(seed) = raw.seed {
        cfg.master_seed = seed;
    }
    cfg.output = raw.output;

    if let Some(name) = raw.ghz.protocol {
        cfg.ghz_protocol = name.parse().map_err(config_err)?;
    }
    if let Some(n) = raw.cnot.n_1e {
        cfg.cnot_n_1e = n;
    }
    apply_dephasing(&mut cfg, raw.dephasing)?;
    apply_pulse(&mut cfg, raw.pulse);

    cfg.validate()?;
    Ok(cfg)
}

fn apply_hardware(p: &mut HardwareProfile, h: &RawHardware) {
    let set = |slot: &mut f64, v: Option<f64>| {
        if let Some(v) = v {
            *slot = v;
        }
    };
    set(&mut p.p_g, h.p_g);
    set(&mut p.p_m, h.p_m);
    set(&mut p.p_n, h.p_n);
    set(&mut p.p_re, h.p_re);
    set(&mut p.t_meas, h.t_meas);
    set(&mut p.t_re, h.t_re);
    set(&mut p.electron_gates.x, h.te_x);
    set(&mut p.electron_gates.y, h.te_y);
    set(&mut p.electron_gates.z, h.te_z);
    set(&mut p.electron_gates.h, h.te_h);
    set(&mut p.carbon_gates.x, h.tc_x);
    set(&mut p.carbon_gates.y, h.tc_y);
    set(&mut p.carbon_gates.z, h.tc_z);
    set(&mut p.carbon_gates.h, h.tc_h);
    set(&mut p.t_cnot, h.t_cnot);
    set(&mut p.t_cz, h.t_cz);
    // A SWAP is three CNOTs unless given explicitly.
    p.t_swap = h.t_swap.unwrap_or(if h.t_cnot.is_some() { 3.0 * p.t_cnot } else { p.t_swap });
    let mut idle = p.carbon_idle;
    let mut re = p.carbon_re;
    set(&mut idle.t1, h.t1n_idle);
    set(&mut idle.t2, h.t2n_idle);
    set(&mut re.t1, h.t1n_re);
    set(&mut re.t2, h.t2n_re);
    p.carbon_idle = DecoherencePair { t1: idle.t1, t2: idle.t2 };
    p.carbon_re = DecoherencePair { t1: re.t1, t2: re.t2 };
    set(&mut p.electron_t2_idle, h.t2e_idle);
    set(&mut p.dd_tau, h.dd_tau);
    set(&mut p.dd_pi, h.dd_pi);
}

fn apply_dephasing(cfg: &mut RunConfig, d: RawDephasing) -> Result<(), HarnessError> {
    let mut c = if d.echo.unwrap_or(false) { DephasingConfig::with_echo() } else { DephasingConfig::no_echo() };
    let set = |slot: &mut f64, v: Option<f64>| {
        if let Some(v) = v {
            *slot = v;
        }
    };
    set(&mut c.a_par, d.a_par);
    set(&mut c.p_init, d.p_init);
    if d.p_mw.is_some() && d.alpha.is_some() {
        return Err(config_err("dephasing: give either p_mw or alpha, not both"));
    }
    set(&mut c.p_mw, d.p_mw.or(d.alpha.map(dephasing::p_mw_from_alpha)));
    set(&mut c.p_opt, d.p_opt);
    set(&mut c.p_echo, d.p_echo);
    set(&mut c.t_a, d.t_a);
    set(&mut c.t_b, d.t_b);

    let kind = d.reset.as_deref().unwrap_or(match c.reset {
        ResetModel::TwoTimescale { .. } => "two-timescale",
        ResetModel::SingleExponential { .. } => "single-exponential",
    });
    c.reset = match kind {
        "two-timescale" => {
            let base = match c.reset {
                t @ ResetModel::TwoTimescale { .. } => t,
                _ => ResetModel::measured(),
            };
            let ResetModel::TwoTimescale { mut a, mut b, mut tau1, mut tau2 } = base else { unreachable!() };
            set(&mut a, d.reset_a);
            set(&mut b, d.reset_b);
            set(&mut tau1, d.reset_tau1);
            set(&mut tau2, d.reset_tau2);
            if d.reset_mean.is_some() {
                return Err(config_err("dephasing: reset_mean applies to the single-exponential reset model"));
            }
            ResetModel::TwoTimescale { a, b, tau1, tau2 }
        }
        "single-exponential" => {
            let mut mean = match c.reset {
                ResetModel::SingleExponential { mean } => mean,
                other => other.mean(),
            };
            set(&mut mean, d.reset_mean);
            if [d.reset_a, d.reset_b, d.reset_tau1, d.reset_tau2].iter().any(Option::is_some) {
                return Err(config_err("dephasing: reset_a/b/tau1/tau2 apply to the two-timescale reset model"));
            }
            ResetModel::SingleExponential { mean }
        }
        other => return Err(config_err(format!("dephasing: unknown reset model '{other}'"))),
    };
    if let Some(n) = d.n_trials {
        c.n_trials = n;
    }
    if let Some(k) = d.n_samples {
        c.n_samples = k;
    }
    if let Some(s) = d.stride {
        cfg.dephasing_stride = s;
    }
    if let Some(v) = d.grid_p_init {
        cfg.grid_p_init = v;
    }
    if let Some(v) = d.grid_p_echo {
        cfg.grid_p_echo = v;
    }
    cfg.dephasing = c;
    Ok(())
}

fn apply_pulse(cfg: &mut RunConfig, r: RawPulse) {
    let p = &mut cfg.pulse;
    let set = |slot: &mut f64, v: Option<f64>| {
        if let Some(v) = v {
            *slot = v;
        }
    };
    set(&mut p.d, r.d);
    set(&mut p.q, r.q);
    set(&mut p.gamma_n_bz, r.gamma_n_bz);
    set(&mut p.a_par, r.a_par);
    set(&mut p.omega, r.omega);
    set(&mut p.sigma_f, r.sigma_f);
    set(&mut p.duration, r.duration);
    set(&mut p.dt, r.dt);
    if let Some(s) = r.tone_scale {
        p.tone_scale = s;
    }
    if let Some(s) = r.phases {
        p.phases = s;
    }
    if let Some(n) = r.samples {
        cfg.pulse_samples = n;
    }
}

/// Outcome of a run: human-readable summary lines. The CSV goes to the
/// writer passed to [`run_experiment`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunReport {
    pub summary: Vec<String>,
}

/// Run the configured experiment and write its CSV to `out`.
pub fn run_experiment(cfg: &RunConfig, out: &mut dyn Write) -> Result<RunReport, HarnessError> {
    cfg.validate()?;
    let experiment = cfg.experiment.ok_or_else(|| config_err("no experiment selected"))?;
    let reps = cfg.effective_repetitions();
    match experiment {
        Experiment::Ghz => run_ghz(cfg, reps, out),
        Experiment::CnotSweep => run_cnot_sweep(cfg, reps, out),
        Experiment::Dephasing => run_dephasing(cfg, reps, out),
        Experiment::DephasingGrid => run_dephasing_grid(cfg, reps, out),
        Experiment::Pulse => run_pulse(cfg, reps, out),
    }
}

fn run_ghz(cfg: &RunConfig, reps: usize, out: &mut dyn Write) -> Result<RunReport, HarnessError> {
    let runs = protocols::ghz_runs(&cfg.profile, cfg.ghz_protocol, reps, cfg.master_seed)?;
    writeln!(out, "rep_index,seed_stream,protocol,fidelity,wall_duration,bell_pairs,restarts")?;
    for (i, r) in runs.iter().enumerate() {
        writeln!(
            out,
            "{i},{i},{},{},{},{},{}",
            cfg.ghz_protocol.name(),
            r.fidelity,
            r.duration,
            r.bell_pairs_used,
            r.restarts
        )?;
    }
    let f: Vec<f64> = runs.iter().map(|r| r.fidelity).collect();
    let d: Vec<f64> = runs.iter().map(|r| r.duration).collect();
    let (m, se) = mean_stderr(&f);
    let [p16, p50, p84] = band68(&d);
    Ok(RunReport {
        summary: vec![
            format!("{} GHZ, {} repetitions, profile {}", cfg.ghz_protocol, reps, cfg.profile_name),
            format!("fidelity {m:.4} ± {se:.4}"),
            format!("duration p16 {p16:.4} s, median {p50:.4} s, p84 {p84:.4} s"),
        ],
    })
}

fn run_cnot_sweep(cfg: &RunConfig, reps: usize, out: &mut dyn Write) -> Result<RunReport, HarnessError> {
    let points = protocols::sweep_memory_lifetime(&cfg.profile, &cfg.cnot_n_1e, reps, cfg.master_seed)?;
    writeln!(
        out,
        "point_index,seed_stream,n_1e,reps,mean_f_average,stderr_f_average,mean_f_entanglement,wall_duration_p16,wall_duration_p50,wall_duration_p84"
    )?;
    let mut summary = vec![format!("non-local CNOT, {reps} repetitions per point, profile {}", cfg.profile_name)];
    for (i, p) in points.iter().enumerate() {
        let [d16, d50, d84] = p.duration_band;
        writeln!(
            out,
            "{i},{},{},{},{},{},{},{d16},{d50},{d84}",
            i * reps,
            p.n_1e,
            p.reps,
            p.mean_f_average,
            p.stderr_f_average,
            p.mean_f_entanglement
        )?;
        summary.push(format!("N = {:e}: F_av {:.4} ± {:.4}", p.n_1e, p.mean_f_average, p.stderr_f_average));
    }
    Ok(RunReport { summary })
}

fn run_dephasing(cfg: &RunConfig, reps: usize, out: &mut dyn Write) -> Result<RunReport, HarnessError> {
    let dc = DephasingConfig { n_samples: reps, ..cfg.dephasing.clone() };
    let curve = dephasing::run_ensemble(&dc, cfg.master_seed)?;
    let n_max = curve.n_trials();
    writeln!(out, "n,mean_f,stderr_f")?;
    for n in (0..=n_max).step_by(cfg.dephasing_stride) {
        writeln!(out, "{n},{},{}", curve.fidelity(n), curve.fidelity_stderr(n))?;
    }
    if n_max % cfg.dephasing_stride != 0 {
        writeln!(out, "{n_max},{},{}", curve.fidelity(n_max), curve.fidelity_stderr(n_max))?;
    }
    let decay = match dephasing::decay_constant(&curve) {
        Some(n) => format!("{n:.0}"),
        None => format!("not reached within {n_max} trials"),
    };
    Ok(RunReport {
        summary: vec![
            format!("dephasing, {} echo, {reps} samples", if dc.echo { "with" } else { "no" }),
            format!("F({n_max}) = {:.4} ± {:.4}", curve.fidelity(n_max), curve.fidelity_stderr(n_max)),
            format!("1/e decay constant: {decay}"),
        ],
    })
}

fn run_dephasing_grid(cfg: &RunConfig, reps: usize, out: &mut dyn Write) -> Result<RunReport, HarnessError> {
    let base = DephasingConfig { n_samples: reps, ..cfg.dephasing.clone() };
    let grid = dephasing::sweep_echo_grid(&base, &cfg.grid_p_init, &cfg.grid_p_echo, cfg.master_seed)?;
    writeln!(out, "p_init,p_echo,fidelity,stderr")?;
    for g in &grid {
        writeln!(out, "{},{},{},{}", g.p_init, g.p_echo, g.fidelity, g.stderr)?;
    }
    Ok(RunReport {
        summary: vec![format!(
            "echo grid: {} points, {reps} samples, N = {}",
            grid.len(),
            base.n_trials
        )],
    })
}

/// Norm drift beyond this marks a broken propagator.
const NORM_TOLERANCE: f64 = 1e-8;

fn run_pulse(cfg: &RunConfig, reps: usize, out: &mut dyn Write) -> Result<RunReport, HarnessError> {
    let traj = pulse::propagate(&cfg.pulse, 0.0)?;
    if traj.norm_drift > NORM_TOLERANCE {
        return Err(HarnessError::Numerical(format!("pulse norm drift {:e}", traj.norm_drift)));
    }
    writeln!(out, "t,p0_mi_plus,p0_mi_zero,p0_mi_minus,pm1_mi_plus,pm1_mi_zero,pm1_mi_minus")?;
    for (i, t) in traj.times.iter().enumerate() {
        writeln!(
            out,
            "{t},{},{},{},{},{},{}",
            traj.p0[0][i], traj.p0[1][i], traj.p0[2][i], traj.p_minus[0][i], traj.p_minus[1][i], traj.p_minus[2][i]
        )?;
    }
    let inf = pulse::inversion_infidelity(&cfg.pulse, reps, cfg.master_seed)?;
    Ok(RunReport {
        summary: vec![
            format!("pi time {:.4} us", inf.pi_time * 1e6),
            format!(
                "inversion infidelity at sigma_f = {} Hz: {:.4} ± {:.4} % over {reps} samples",
                cfg.pulse.sigma_f,
                100.0 * inf.mean,
                100.0 * inf.stderr
            ),
        ],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_purified() {
        let cfg = parse_config_str("").unwrap();
        assert_eq!(cfg.profile, HardwareProfile::purified());
        assert_eq!(cfg.profile.p_g, 0.01);
        assert_eq!(cfg.profile.t_re, 6e-6);
        assert_eq!(cfg.experiment, None);
    }

    #[test]
    fn override_and_unknown_key() {
        let cfg = parse_config_str("experiment = \"ghz\"\n[hardware]\nt2n_re = 0.012\n").unwrap();
        assert_eq!(cfg.profile.carbon_re.t2, 0.012);
        assert_eq!(cfg.experiment, Some(Experiment::Ghz));

        let err = parse_config_str("[hardware]\np_gg = 0.1\n").unwrap_err().to_string();
        assert!(err.contains("p_gg"), "{err}");
        assert!(err.contains("line 2"), "{err}");
    }

    #[test]
    fn type_mismatch_and_bad_values() {
        assert!(parse_config_str("repetitions = \"many\"").is_err());
        assert!(parse_config_str("repetitions = 0").is_err());
        assert!(parse_config_str("profile = \"diamond\"").is_err());
        assert!(parse_config_str("[hardware]\np_g = 1.5").is_err());
        assert!(parse_config_str("[ghz]\nprotocol = \"fancy\"").is_err());
        assert!(parse_config_str("experiment = \"teleport\"").is_err());
        assert!(parse_config_str("[dephasing]\np_mw = 0.5\nalpha = 1.0").is_err());
    }

    #[test]
    fn cnot_override_keeps_swap_consistent() {
        let cfg = parse_config_str("[hardware]\nt_cnot = 1e-3").unwrap();
        assert_eq!(cfg.profile.t_swap, 3e-3);
    }

    #[test]
    fn dephasing_sections() {
        let cfg = parse_config_str("[dephasing]\necho = true\nreset_mean = 3e-7\nalpha = 3.141592653589793").unwrap();
        assert!(cfg.dephasing.echo);
        assert_eq!(cfg.dephasing.reset, ResetModel::SingleExponential { mean: 3e-7 });
        assert!((cfg.dephasing.p_mw - 1.0).abs() < 1e-15);
        assert!(parse_config_str("[dephasing]\nreset_tau1 = 1e-7\nreset = \"single-exponential\"").is_err());
    }

    #[test]
    fn integers_accepted_for_reals() {
        let cfg = parse_config_str("[hardware]\nt2e_idle = 2").unwrap();
        assert_eq!(cfg.profile.electron_t2_idle, 2.0);
    }

    #[test]
    fn exit_codes() {
        assert_eq!(HarnessError::Config("x".into()).exit_code(), 1);
        assert_eq!(HarnessError::Numerical("x".into()).exit_code(), 2);
    }
}
