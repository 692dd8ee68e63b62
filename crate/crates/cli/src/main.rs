//! `qnetsim <experiment> --config <path> [--seed N] [--reps N] [--out path]`
//!
//! The master seed is taken from `--seed`, then `QNETSIM_SEED`, then the
//! config file. CSV goes to `--out`, the config `output` key, or stdout;
//! the summary goes to stderr.
//!
//! Exit codes: 0 success, 1 config or usage error, 2 numerical invariant
//! violation.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use qnet_core::harness::{parse_config, run_experiment, Experiment, HarnessError};

const SEED_VAR: &str = "QNETSIM_SEED";

#[derive(Debug, Parser)]
#[command(name = "qnetsim", version, about = "NV-centre network protocol simulations")]
struct Cli {
    /// ghz, cnot-sweep, dephasing, dephasing-grid or pulse
    experiment: String,
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    let experiment: Experiment = cli.experiment.parse()?;
    let mut cfg = parse_config(&cli.config)?;
    if let Some(e) = cfg.experiment {
        if e != experiment {
            return Err(HarnessError::Config(format!("config is for '{e}', command line asks for '{experiment}'")));
        }
    }
    cfg.experiment = Some(experiment);
    if let Ok(v) = std::env::var(SEED_VAR) {
        cfg.master_seed = v
            .trim()
            .parse()
            .map_err(|_| HarnessError::Config(format!("{SEED_VAR}='{v}' is not an unsigned integer")))?;
    }
    if let Some(s) = cli.seed {
        cfg.master_seed = s;
    }
    if cli.reps.is_some() {
        cfg.repetitions = cli.reps;
    }
    if cli.out.is_some() {
        cfg.output = cli.out;
    }

    let report = match &cfg.output {
        Some(path) => {
            let file = File::create(path).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
            let mut w = BufWriter::new(file);
            let report = run_experiment(&cfg, &mut w)?;
            w.flush()?;
            report
        }
        None => {
            let mut w = BufWriter::new(io::stdout().lock());
            let report = run_experiment(&cfg, &mut w)?;
            w.flush()?;
            report
        }
    };
    eprintln!("seed {}", cfg.master_seed);
    for line in report.summary {
        eprintln!("{line}");
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("qnetsim: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
