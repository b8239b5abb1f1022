use quadeff::ekf::Ekf;
use quadeff::scenario::{run_scenario, simulate, Fault, ScenarioSpec};

#[test]
fn ekf_covariance_stays_symmetric_psd() {
    let spec = ScenarioSpec { duration: 400.0, sigma_f: 0.07, ..Default::default() };
    let flight = simulate(&spec, 5).unwrap();
    assert_eq!(flight.len(), 100_000);
    let mut ekf = Ekf::new(&flight.states[0], &spec.ekf, spec.vehicle).unwrap();
    for k in 0..flight.len() {
        ekf.step(&flight.commands[k], &flight.states[k + 1], flight.dt).unwrap();
        if k % 1000 == 999 {
            let p = &ekf.state.cov;
            assert!((p - p.transpose()).amax() == 0.0, "asymmetric at step {k}");
            let min = p.symmetric_eigenvalues().min();
            assert!(min > -1e-12 * p.amax(), "eigenvalue {min} at step {k}");
        }
    }
}

#[test]
fn estimates_stay_inside_the_box() {
    let spec = ScenarioSpec {
        duration: 12.0,
        sigma_f: 0.1,
        faults: vec![Fault { motor: 4, t_start: 3.0, t_end: 8.0, eta: 0.02 }],
        ..Default::default()
    };
    let trace = run_scenario(&spec, 8).unwrap();
    let cfg = spec.estimator.solver;
    for e in &trace.estimates {
        assert!(cfg.is_interior(&e.record.s_hat.0), "{:?} at t = {}", e.record.s_hat, e.record.t);
    }
    for k in &trace.ekf {
        assert!(k.0.iter().all(|v| (0.0..=1.2).contains(v)));
    }
}
