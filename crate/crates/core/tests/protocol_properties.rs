use qnet_core::network::{build_network, HardwareProfile};
use qnet_core::protocols::{self, GhzProtocol};
use qnet_core::stats::mean_stderr;
use qnet_core::streams::derive_stream;

fn instantaneous(p_n: f64) -> HardwareProfile {
    HardwareProfile { p_n, p_g: 0.0, p_m: 0.0, ..HardwareProfile::noiseless() }
}

#[test]
fn modicum_beats_plain_when_operations_are_free() {
    let p = instantaneous(0.1);
    let reps = 10_000;
    let fid = |protocol| {
        let runs = protocols::ghz_runs(&p, protocol, reps, 21).unwrap();
        mean_stderr(&runs.iter().map(|r| r.fidelity).collect::<Vec<_>>())
    };
    let (plain, se_p) = fid(GhzProtocol::Plain);
    let (modicum, se_m) = fid(GhzProtocol::Modicum);
    assert!(modicum + 3.0 * (se_p.hypot(se_m)) >= plain, "{modicum} vs {plain}");
    assert!(modicum > plain);
}

#[test]
fn noisy_gates_without_time_still_lower_fidelity() {
    let p = HardwareProfile { p_g: 0.01, ..HardwareProfile::noiseless() };
    let runs = protocols::ghz_runs(&p, GhzProtocol::Plain, 50, 1).unwrap();
    assert!(runs.iter().all(|r| r.fidelity < 1.0 && r.fidelity > 0.8 && r.duration == 0.0));
}

#[test]
fn batch_runs_do_not_depend_on_thread_count() {
    let p = HardwareProfile::purified();
    let parallel = protocols::ghz_runs(&p, GhzProtocol::Modicum, 40, 9).unwrap();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let serial = pool.install(|| protocols::ghz_runs(&p, GhzProtocol::Modicum, 40, 9)).unwrap();
    assert_eq!(parallel, serial);

    let mut rng = derive_stream(9, 3);
    let mut net = build_network(p, 4, 2).unwrap();
    let single = protocols::run_ghz(&mut net, GhzProtocol::Modicum, &mut rng).unwrap();
    assert_eq!(single, parallel[3]);
}

#[test]
fn cnot_fidelity_grows_with_memory_lifetime() {
    let pts = protocols::sweep_memory_lifetime(&HardwareProfile::purified(), &[1e3, 1e4, 1e5, 1e6], 1500, 5).unwrap();
    for w in pts.windows(2) {
        assert!(w[1].mean_f_average > w[0].mean_f_average, "{:?}", w);
    }
}
