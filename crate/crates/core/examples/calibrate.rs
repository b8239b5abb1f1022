//! Grid search for the EKF efficiency process noise on a scenario spec.
//!
//!     cargo run --release --example calibrate -- scenarios/degradation.spec [seed]

use quadeff::scenario::{calibrate_q_eta, ScenarioSpec};

const GRID: [f64; 8] = [1e-4, 2e-4, 5e-4, 1e-3, 1.5e-3, 2e-3, 3e-3, 5e-3];

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let path = args.next().ok_or("usage: calibrate <spec> [seed]")?;
    let spec = ScenarioSpec::from_path(path.as_ref())?;
    let seed = spec.resolve_seed(args.next().map(|s| s.parse()).transpose()?)?;
    let cal = calibrate_q_eta(&spec, seed, &GRID)?;
    println!("irls mean rmse {:.5}", cal.irls_rmse);
    for (q, rmse) in &cal.grid {
        println!("q_eta {q:<8e} ekf mean rmse {rmse:.5}");
    }
    println!("best q_eta {:e} (relative gap {:.3})", cal.q_eta, cal.relative_gap());
    Ok(())
}
