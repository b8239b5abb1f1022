use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use quadeff::error::Error;
use quadeff::io;
use quadeff::scenario::{convergence_run, run_scenario, ScenarioSpec};

/// Motor-efficiency estimation on simulated quadrotor flights.
#[derive(Debug, Parser)]
#[command(name = "quadeff", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fly a scenario and write estimates, truth, EKF, weights, KKT trace and metrics.
    Run(Common),
    /// Like `run`, plus a side-by-side IRLS/EKF metrics table.
    Compare(Common),
    /// Estimate a single window from the initial guess and dump every iterate.
    Convergence(Common),
}

#[derive(Debug, Args)]
struct Common {
    /// Scenario spec (TOML).
    spec: PathBuf,
    /// Output directory, created if missing.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the spec's seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    quiet: bool,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io(_) | Error::Csv(_) => 4,
        e if e.is_numerical() => 3,
        _ => 2,
    }
}

fn load(args: &Common) -> Result<(ScenarioSpec, u64), Error> {
    let spec = ScenarioSpec::from_path(&args.spec).map_err(|e| match e {
        // an unreadable spec is a configuration problem, not an output failure
        Error::Io(io) => Error::Config(format!("{}: {io}", args.spec.display())),
        e => e,
    })?;
    let seed = spec.resolve_seed(args.seed)?;
    Ok((spec, seed))
}

fn print_metrics(metrics: &[quadeff::scenario::Metrics]) {
    println!("{:<6}{:>6}{:>12}{:>12}{:>12}", "method", "motor", "rmse", "std", "max_spike");
    for m in metrics {
        for (i, mm) in m.motors.iter().enumerate() {
            println!("{:<6}{:>6}{:>12.5}{:>12.5}{:>12.5}", m.method.as_str(), i + 1, mm.rmse, mm.std, mm.max_spike);
        }
    }
}

fn run(args: &Common, compare: bool) -> Result<(), Error> {
    let (spec, seed) = load(args)?;
    let trace = run_scenario(&spec, seed)?;
    let metrics = trace.metrics()?;
    io::write_run(&args.out, &trace, &metrics)?;
    if compare {
        io::write_metrics_compare(&args.out.join(io::METRICS_COMPARE_CSV), &metrics[0], &metrics[1])?;
    }
    if !args.quiet {
        let clipped = trace.flight.clipped.iter().filter(|c| **c).count();
        println!(
            "{}: seed {seed}, {} steps, {} estimates, {clipped} clipped steps",
            display_name(&spec, &args.spec),
            trace.flight.len(),
            trace.estimates.len()
        );
        print_metrics(&metrics);
    }
    Ok(())
}

fn convergence(args: &Common) -> Result<(), Error> {
    let (spec, seed) = load(args)?;
    let run = convergence_run(&spec, seed)?;
    std::fs::create_dir_all(&args.out)?;
    io::write_convergence(&args.out.join(io::CONVERGENCE_CSV), &run)?;
    io::write_kkt_trace(&args.out.join(io::KKT_TRACE_CSV), std::iter::once(&run.estimate))?;
    if !args.quiet {
        let t0 = run.first_step as f64 * spec.dt;
        println!("{}: seed {seed}, window starting at t = {t0}", display_name(&spec, &args.spec));
        for (k, it) in run.estimate.iterations.iter().enumerate() {
            println!(
                "irls {}: {} newton iterations, {:?}, gap {:.3e}, rejected {}",
                k + 1,
                it.solve.iterations(),
                it.solve.status,
                it.solve.gap,
                it.weights.rejected_count()
            );
        }
        println!("estimate {:?}", run.estimate.record.s_hat.as_array());
        println!("truth    {:?}", run.truth.as_array());
    }
    Ok(())
}

fn display_name<'a>(spec: &'a ScenarioSpec, path: &'a Path) -> std::borrow::Cow<'a, str> {
    if spec.name.is_empty() {
        path.display().to_string().into()
    } else {
        spec.name.as_str().into()
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(args) => run(args, false),
        Command::Compare(args) => run(args, true),
        Command::Convergence(args) => convergence(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let mut msg = e.to_string();
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                let s_msg = s.to_string();
                if !msg.contains(&s_msg) {
                    msg.push_str(&format!(": {s_msg}"));
                }
                source = s.source();
            }
            eprintln!("error: {msg}");
            ExitCode::from(exit_code(&e))
        }
    }
}
