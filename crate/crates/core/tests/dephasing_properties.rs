use qnet_core::dephasing::{self, DephasingConfig};

fn echo(p_init: f64, p_echo: f64) -> DephasingConfig {
    DephasingConfig { p_init, p_echo, n_trials: 200_000, n_samples: 400, ..DephasingConfig::with_echo() }
}

#[test]
fn initialisation_errors_dominate_with_echo() {
    for x in [0.01, 0.02] {
        let init = dephasing::run_ensemble(&echo(x, 0.0), 31).unwrap();
        let pulse = dephasing::run_ensemble(&echo(0.0, x), 32).unwrap();
        let n = init.n_trials();
        let (fi, fp) = (init.fidelity(n), pulse.fidelity(n));
        let sigma = init.fidelity_stderr(n).hypot(pulse.fidelity_stderr(n));
        assert!(fi <= fp + 3.0 * sigma, "x = {x}: {fi} vs {fp}");
    }
}

#[test]
fn curve_is_bounded_and_starts_at_one() {
    let cfg = DephasingConfig { n_trials: 5000, n_samples: 100, ..DephasingConfig::no_echo() };
    let curve = dephasing::run_ensemble(&cfg, 4).unwrap();
    assert_eq!(curve.fidelity(0), 1.0);
    assert!(curve.mean_cos.iter().all(|&c| c <= 1.0));
    assert!(curve.fidelity(5000) < 1.0);
}

#[test]
fn error_free_sequence_is_exact() {
    let cfg = DephasingConfig {
        p_init: 0.0,
        p_mw: 0.0,
        p_opt: 0.0,
        n_trials: 3000,
        n_samples: 50,
        ..DephasingConfig::no_echo()
    };
    let curve = dephasing::run_ensemble(&cfg, 5).unwrap();
    assert!(curve.mean_cos.iter().all(|&c| c == 1.0));
}
