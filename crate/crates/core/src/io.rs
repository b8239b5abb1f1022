//! CSV output and read-back. Floats are written with 17 significant digits
//! so a round trip is exact.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use nalgebra::Vector4;

use crate::dynamics::EfficiencyVector;
use crate::error::{Error, Result};
use crate::scenario::{compute_metrics, ConvergenceRun, Method, Metrics, MetricsConfig, RunTrace};

pub const ESTIMATES_CSV: &str = "estimates.csv";
pub const TRUTH_CSV: &str = "truth.csv";
pub const EKF_CSV: &str = "ekf.csv";
pub const WEIGHTS_CSV: &str = "weights.csv";
pub const KKT_TRACE_CSV: &str = "kkt_trace.csv";
pub const METRICS_CSV: &str = "metrics.csv";
pub const METRICS_COMPARE_CSV: &str = "metrics_compare.csv";
pub const CONVERGENCE_CSV: &str = "convergence.csv";

pub const ESTIMATES_HEADER: &[&str] =
    &["t", "eta1", "eta2", "eta3", "eta4", "irls_iters", "rejected", "gap", "converged"];
pub const SERIES_HEADER: &[&str] = &["t", "eta1", "eta2", "eta3", "eta4"];
pub const WEIGHTS_HEADER: &[&str] = &["t", "segment", "weight", "zscore", "rejected"];
pub const KKT_TRACE_HEADER: &[&str] =
    &["window", "irls_iter", "newton_iter", "r_dual_norm", "r_cent_norm", "gap", "alpha", "beta"];
pub const METRICS_HEADER: &[&str] = &["method", "motor", "rmse", "std", "max_spike"];
pub const METRICS_COMPARE_HEADER: &[&str] =
    &["motor", "irls_rmse", "ekf_rmse", "irls_std", "ekf_std", "irls_max_spike", "ekf_max_spike"];
pub const CONVERGENCE_HEADER: &[&str] =
    &["irls_iter", "newton_iter", "eta1", "eta2", "eta3", "eta4", "r_dual_norm", "r_cent_norm", "gap"];

pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn fmt_bool(b: bool) -> String {
    u8::from(b).to_string()
}

fn with_eta(mut row: Vec<String>, eta: &Vector4<f64>) -> Vec<String> {
    row.extend(eta.iter().map(|e| fmt_f64(*e)));
    row
}

fn write_table<I>(path: &Path, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let mut w = csv::Writer::from_writer(std::io::BufWriter::new(File::create(path)?));
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))?.flush()?;
    Ok(())
}

pub fn write_estimates(path: &Path, trace: &RunTrace) -> Result<()> {
    let rows = trace.estimates.iter().map(|e| {
        let r = &e.record;
        let mut row = with_eta(vec![fmt_f64(r.t)], &r.s_hat.0);
        row.extend([r.irls_iters.to_string(), r.rejected.to_string(), fmt_f64(r.gap), fmt_bool(r.converged)]);
        row
    });
    write_table(path, ESTIMATES_HEADER, rows)
}

pub fn write_series(path: &Path, times: &[f64], series: &[EfficiencyVector]) -> Result<()> {
    if times.len() != series.len() {
        return Err(Error::LengthMismatch("efficiency series"));
    }
    write_table(path, SERIES_HEADER, times.iter().zip(series).map(|(t, s)| with_eta(vec![fmt_f64(*t)], &s.0)))
}

/// Final-round weights of every window.
pub fn write_weights(path: &Path, trace: &RunTrace) -> Result<()> {
    let rows = trace.estimates.iter().flat_map(|e| {
        let it = e.final_iteration();
        let t = fmt_f64(e.record.t);
        (0..it.weights.w.len()).map(move |i| {
            vec![
                t.clone(),
                i.to_string(),
                fmt_f64(it.weights.w[i]),
                fmt_f64(it.zscores[i]),
                fmt_bool(it.weights.rejected[i]),
            ]
        })
    });
    write_table(path, WEIGHTS_HEADER, rows)
}

/// Accepted Newton iterations of every IRLS round of every window. The
/// starting point of each solve is not a row.
pub fn write_kkt_trace<'a, I>(path: &Path, windows: I) -> Result<()>
where
    I: IntoIterator<Item = &'a crate::irls::WindowEstimate>,
{
    let rows = windows.into_iter().enumerate().flat_map(|(w, e)| {
        e.iterations.iter().enumerate().flat_map(move |(k, it)| {
            it.solve.trace.iter().filter(|row| row.iteration > 0).map(move |row| {
                vec![
                    w.to_string(),
                    (k + 1).to_string(),
                    row.iteration.to_string(),
                    fmt_f64(row.r_dual_norm),
                    fmt_f64(row.r_cent_norm),
                    fmt_f64(row.gap),
                    fmt_f64(row.alpha),
                    fmt_f64(row.beta),
                ]
            })
        })
    });
    write_table(path, KKT_TRACE_HEADER, rows)
}

pub fn write_metrics(path: &Path, metrics: &[Metrics]) -> Result<()> {
    let rows = metrics.iter().flat_map(|m| {
        m.motors.iter().enumerate().map(move |(i, mm)| {
            vec![
                m.method.as_str().to_string(),
                (i + 1).to_string(),
                fmt_f64(mm.rmse),
                fmt_f64(mm.std),
                fmt_f64(mm.max_spike),
            ]
        })
    });
    write_table(path, METRICS_HEADER, rows)
}

pub fn write_metrics_compare(path: &Path, irls: &Metrics, ekf: &Metrics) -> Result<()> {
    let rows = (0..4).map(|i| {
        let (a, b) = (irls.motors[i], ekf.motors[i]);
        vec![
            (i + 1).to_string(),
            fmt_f64(a.rmse),
            fmt_f64(b.rmse),
            fmt_f64(a.std),
            fmt_f64(b.std),
            fmt_f64(a.max_spike),
            fmt_f64(b.max_spike),
        ]
    });
    write_table(path, METRICS_COMPARE_HEADER, rows)
}

/// Every iterate of the window, including each round's starting point.
pub fn write_convergence(path: &Path, run: &ConvergenceRun) -> Result<()> {
    let rows = run.estimate.iterations.iter().enumerate().flat_map(|(k, it)| {
        it.solve.trace.iter().map(move |row| {
            let mut out = with_eta(vec![(k + 1).to_string(), row.iteration.to_string()], &row.s);
            out.extend([fmt_f64(row.r_dual_norm), fmt_f64(row.r_cent_norm), fmt_f64(row.gap)]);
            out
        })
    });
    write_table(path, CONVERGENCE_HEADER, rows)
}

/// Writes the per-run files: estimates, truth and EKF series at the
/// estimation ticks, final weights, the KKT trace and metrics.
pub fn write_run(dir: &Path, trace: &RunTrace, metrics: &[Metrics]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let times = trace.tick_times();
    write_estimates(&dir.join(ESTIMATES_CSV), trace)?;
    write_series(&dir.join(TRUTH_CSV), &times, &trace.tick_truth())?;
    write_series(&dir.join(EKF_CSV), &times, &trace.ekf)?;
    write_weights(&dir.join(WEIGHTS_CSV), trace)?;
    write_kkt_trace(&dir.join(KKT_TRACE_CSV), &trace.estimates)?;
    write_metrics(&dir.join(METRICS_CSV), metrics)
}

fn parse_f64(field: &str, path: &Path) -> Result<f64> {
    field.parse().map_err(|_| Error::Config(format!("{}: not a number: {field:?}", path.display())))
}

fn read_table(path: &Path, header: &[&str]) -> Result<Vec<csv::StringRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    if r.headers()?.iter().ne(header.iter().copied()) {
        return Err(Error::Config(format!("{}: unexpected header {:?}", path.display(), r.headers()?)));
    }
    r.records().map(|rec| rec.map_err(Error::from)).collect()
}

/// Reads a `t, eta1..eta4` file (the estimates file is also accepted).
pub fn read_series(path: &Path) -> Result<(Vec<f64>, Vec<EfficiencyVector>)> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    if header.iter().take(5).ne(SERIES_HEADER.iter().copied()) {
        return Err(Error::Config(format!("{}: unexpected header {header:?}", path.display())));
    }
    let mut times = Vec::new();
    let mut series = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let v: Vec<f64> = (0..5).map(|i| parse_f64(&rec[i], path)).collect::<Result<_>>()?;
        times.push(v[0]);
        series.push(EfficiencyVector(Vector4::new(v[1], v[2], v[3], v[4])));
    }
    Ok((times, series))
}

pub fn read_metrics(path: &Path) -> Result<Vec<Metrics>> {
    let mut out: Vec<Metrics> = Vec::new();
    for rec in read_table(path, METRICS_HEADER)? {
        let method = Method::parse(&rec[0]).ok_or_else(|| Error::Config(format!("unknown method {:?}", &rec[0])))?;
        let motor: usize = rec[1].parse().map_err(|_| Error::Config(format!("bad motor {:?}", &rec[1])))?;
        if !(1..=4).contains(&motor) {
            return Err(Error::Config(format!("bad motor {motor}")));
        }
        let idx = match out.iter().position(|m| m.method == method) {
            Some(i) => i,
            None => {
                out.push(Metrics { method, motors: Default::default() });
                out.len() - 1
            }
        };
        let m = &mut out[idx].motors[motor - 1];
        m.rmse = parse_f64(&rec[2], path)?;
        m.std = parse_f64(&rec[3], path)?;
        m.max_spike = parse_f64(&rec[4], path)?;
    }
    Ok(out)
}

/// Recomputes both methods' metrics from the series files in `dir`.
pub fn metrics_from_dir(dir: &Path, discontinuities: &[f64], cfg: &MetricsConfig) -> Result<[Metrics; 2]> {
    let (times, irls) = read_series(&dir.join(ESTIMATES_CSV))?;
    let (t_truth, truth) = read_series(&dir.join(TRUTH_CSV))?;
    let (t_ekf, ekf) = read_series(&dir.join(EKF_CSV))?;
    if times != t_truth || times != t_ekf {
        return Err(Error::LengthMismatch("csv time columns"));
    }
    Ok([
        compute_metrics(Method::Irls, &times, &irls, &truth, discontinuities, cfg)?,
        compute_metrics(Method::Ekf, &times, &ekf, &truth, discontinuities, cfg)?,
    ])
}
