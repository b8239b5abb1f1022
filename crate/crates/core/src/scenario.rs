//! Scenario specifications, the closed-loop simulation that drives both
//! estimators, and the comparison metrics.

use nalgebra::Vector4;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::controller::{control_wrench, Gains, Trajectory};
use crate::dynamics::{
    apply_efficiency, clip_thrusts, perturb_thrusts, step, thrusts_from_wrench, Allocation, EfficiencyVector,
    MotorThrusts, QuadParams, QuadState,
};
use crate::ekf::{Ekf, EkfConfig};
use crate::error::{Error, Result};
use crate::irls::{IrlsConfig, OnlineEstimator, WindowEstimate};
use crate::residuals::{ResidualModel, WindowSegment};
use crate::se3::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Degradation {
    None,
    /// `η(t) = η(0) exp(ξ (V(t) - V(0)))` with `V` linear in time.
    Voltage {
        xi: f64,
        v_start: f64,
        v_end: f64,
    },
}

/// Efficiency override on one motor over `[t_start, t_end)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Fault {
    /// Motor number, 1 to 4.
    pub motor: usize,
    pub t_start: f64,
    pub t_end: f64,
    pub eta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Clipping {
    pub enabled: bool,
    pub f_min: f64,
    pub f_max: f64,
}

impl Default for Clipping {
    fn default() -> Self {
        Clipping { enabled: false, f_min: 0.0, f_max: 6.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsConfig {
    /// Samples before this time are ignored entirely.
    pub warmup: f64,
    /// Width of the region after each truth discontinuity excluded from
    /// RMSE and std (but not from the spike).
    pub settle: f64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig { warmup: 1.0, settle: 0.5 }
    }
}

fn default_duration() -> f64 {
    30.0
}

fn default_dt() -> f64 {
    0.004
}

fn default_trajectory() -> Trajectory {
    Trajectory::Circle
}

fn default_eta0() -> [f64; 4] {
    [1.0; 4]
}

fn default_degradation() -> Degradation {
    Degradation::None
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    #[serde(default)]
    pub name: String,
    /// Required unless supplied on the command line.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default = "default_duration")]
    pub duration: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_trajectory")]
    pub trajectory: Trajectory,
    /// Start at rest here instead of on the reference.
    #[serde(default)]
    pub initial_position: Option<[f64; 3]>,
    #[serde(default)]
    pub sigma_f: f64,
    #[serde(default = "default_eta0")]
    pub eta0: [f64; 4],
    #[serde(default = "default_degradation")]
    pub degradation: Degradation,
    #[serde(default)]
    pub faults: Vec<Fault>,
    #[serde(default)]
    pub clipping: Clipping,
    #[serde(default)]
    pub metrics: MetricsConfig,
    #[serde(default)]
    pub vehicle: QuadParams,
    #[serde(default)]
    pub gains: Gains,
    #[serde(default)]
    pub estimator: IrlsConfig,
    #[serde(default)]
    pub ekf: EkfConfig,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        ScenarioSpec {
            name: String::new(),
            seed: None,
            duration: default_duration(),
            dt: default_dt(),
            trajectory: default_trajectory(),
            initial_position: None,
            sigma_f: 0.0,
            eta0: default_eta0(),
            degradation: Degradation::None,
            faults: Vec::new(),
            clipping: Clipping::default(),
            metrics: MetricsConfig::default(),
            vehicle: QuadParams::default(),
            gains: Gains::default(),
            estimator: IrlsConfig::default(),
            ekf: EkfConfig::default(),
        }
    }
}

impl ScenarioSpec {
    /// Parses and validates a spec document.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let spec: ScenarioSpec = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return bad(format!("duration must be positive, got {}", self.duration));
        }
        if !(self.dt > 0.0 && self.dt < self.duration) {
            return bad(format!("dt must be in (0, duration), got {}", self.dt));
        }
        if !(self.sigma_f >= 0.0 && self.sigma_f.is_finite()) {
            return bad(format!("sigma_f must be non-negative, got {}", self.sigma_f));
        }
        if !self.eta0.iter().all(|e| *e > 0.0 && e.is_finite()) {
            return bad("eta0 must be positive".into());
        }
        if let Degradation::Voltage { xi, v_start, v_end } = self.degradation {
            if !(xi >= 0.0 && v_start.is_finite() && v_end.is_finite()) {
                return bad("voltage degradation needs xi >= 0 and finite voltages".into());
            }
        }
        for f in &self.faults {
            if !(1..=4).contains(&f.motor) {
                return bad(format!("fault motor must be 1 to 4, got {}", f.motor));
            }
            if !(0.0 <= f.t_start && f.t_start < f.t_end && f.t_end <= self.duration) {
                return bad(format!(
                    "fault interval [{}, {}) must lie inside [0, {}]",
                    f.t_start, f.t_end, self.duration
                ));
            }
            if !(f.eta > 0.0 && f.eta.is_finite()) {
                return bad(format!("fault efficiency must be positive, got {}", f.eta));
            }
        }
        if self.clipping.enabled && !(self.clipping.f_min <= self.clipping.f_max) {
            return bad("clipping needs f_min <= f_max".into());
        }
        if !(self.metrics.warmup >= 0.0 && self.metrics.settle >= 0.0) {
            return bad("metric exclusion windows must be non-negative".into());
        }
        self.vehicle.validate()?;
        self.gains.validate()?;
        self.estimator.validate()?;
        self.ekf.validate()?;
        Ok(())
    }

    /// Command-line override first, then the spec; no fallback.
    pub fn resolve_seed(&self, cli: Option<u64>) -> Result<u64> {
        cli.or(self.seed).ok_or_else(|| Error::Config("no seed: set `seed` in the spec or pass --seed".into()))
    }

    pub fn steps(&self) -> usize {
        (self.duration / self.dt).round() as usize
    }

    /// Level, with the reference position and velocity at t = 0 unless a
    /// position is given, in which case the vehicle starts at rest there.
    pub fn initial_state(&self) -> QuadState {
        match self.initial_position {
            Some(x) => QuadState::at_rest(Vec3::from(x)),
            None => {
                let des = self.trajectory.desired(0.0);
                QuadState { v: des.v_d, ..QuadState::at_rest(des.x_d) }
            }
        }
    }

    /// Efficiency acting at time `t`.
    pub fn true_efficiency(&self, t: f64) -> EfficiencyVector {
        let factor = match self.degradation {
            Degradation::None => 1.0,
            Degradation::Voltage { xi, v_start, v_end } => {
                let v = v_start + (v_end - v_start) * (t / self.duration);
                (xi * (v - v_start)).exp()
            }
        };
        let mut eta = Vector4::from(self.eta0) * factor;
        for f in &self.faults {
            if f.t_start <= t && t < f.t_end {
                eta[f.motor - 1] = f.eta;
            }
        }
        EfficiencyVector(eta)
    }

    /// Times at which the truth jumps, sorted.
    pub fn discontinuities(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self.faults.iter().flat_map(|f| [f.t_start, f.t_end]).collect();
        out.sort_by(f64::total_cmp);
        out.dedup();
        out
    }
}

/// Closed-loop flight record. `states` has one more entry than the per-step
/// vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Flight {
    pub dt: f64,
    pub states: Vec<QuadState>,
    /// Controller output before noise and clipping; what the estimators see.
    pub commands: Vec<MotorThrusts>,
    pub truth: Vec<EfficiencyVector>,
    /// Per step, whether any motor saturated.
    pub clipped: Vec<bool>,
}

impl Flight {
    pub fn len(&self) -> usize {
        self.commands.len()
    }

    pub fn is_empty(&self) -> bool {
        self.commands.is_empty()
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    pub fn segment(&self, k: usize) -> WindowSegment {
        WindowSegment {
            t: self.time(k),
            state_t: self.states[k],
            state_t1: self.states[k + 1],
            f_cmd: self.commands[k],
            dt: self.dt,
        }
    }

    pub fn segments(&self) -> impl Iterator<Item = WindowSegment> + '_ {
        (0..self.len()).map(|k| self.segment(k))
    }
}

/// Flies the scenario. Estimators are passive, so the flight does not
/// depend on them.
pub fn simulate(spec: &ScenarioSpec, seed: u64) -> Result<Flight> {
    let params = spec.vehicle;
    let alloc = Allocation::new(&params);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = spec.steps();
    let mut flight = Flight {
        dt: spec.dt,
        states: Vec::with_capacity(n + 1),
        commands: Vec::with_capacity(n),
        truth: Vec::with_capacity(n),
        clipped: Vec::with_capacity(n),
    };
    let mut state = spec.initial_state();
    flight.states.push(state);
    for k in 0..n {
        let t = k as f64 * spec.dt;
        let wrench = control_wrench(&state, &spec.trajectory.desired(t), &params, &spec.gains)
            .map_err(|e| Error::Control { step: k, source: Box::new(e) })?;
        let f_cmd = thrusts_from_wrench(&wrench, &alloc);
        let noisy = perturb_thrusts(&f_cmd, spec.sigma_f, &mut rng);
        let (delivered, clipped) = if spec.clipping.enabled {
            let (f, c) = clip_thrusts(&noisy, spec.clipping.f_min, spec.clipping.f_max);
            (f, c.iter().any(|c| *c))
        } else {
            (noisy, false)
        };
        let truth = spec.true_efficiency(t);
        let next = step(&state, &apply_efficiency(&delivered, &truth, &alloc), &params, spec.dt)?;
        if !next.is_finite() || !f_cmd.is_finite() {
            return Err(Error::NumericalAbort { step: k, t });
        }
        flight.commands.push(f_cmd);
        flight.truth.push(truth);
        flight.clipped.push(clipped);
        flight.states.push(next);
        state = next;
    }
    Ok(flight)
}

/// IRLS estimates over a flight.
pub fn run_irls(flight: &Flight, cfg: &IrlsConfig, params: &QuadParams) -> Result<Vec<WindowEstimate>> {
    let mut est = OnlineEstimator::new(*cfg, ResidualModel::new(*params))?;
    let mut out = Vec::new();
    for (k, seg) in flight.segments().enumerate() {
        if let Some(e) = est.push(seg).map_err(|e| numerical_context(e, k, seg.t))? {
            out.push(e);
        }
    }
    Ok(out)
}

fn numerical_context(e: Error, step: usize, t: f64) -> Error {
    match e {
        Error::NumericalAbort { .. } | Error::Control { .. } | Error::Estimator { .. } => e,
        e if e.is_numerical() => Error::Estimator { step, t, source: Box::new(e) },
        e => e,
    }
}

/// EKF efficiency estimates (clamped for reporting) at the given step
/// indices, in order.
pub fn run_ekf(
    flight: &Flight,
    cfg: &EkfConfig,
    params: &QuadParams,
    ticks: &[usize],
) -> Result<Vec<EfficiencyVector>> {
    let mut ekf = Ekf::new(&flight.states[0], cfg, *params)?;
    let mut out = Vec::with_capacity(ticks.len());
    let mut next_tick = ticks.iter().peekable();
    for k in 0..flight.len() {
        ekf.step(&flight.commands[k], &flight.states[k + 1], flight.dt)
            .map_err(|e| numerical_context(e, k, flight.time(k)))?;
        if !ekf.eta().0.iter().all(|e| e.is_finite()) {
            return Err(Error::NumericalAbort { step: k, t: flight.time(k) });
        }
        while next_tick.peek() == Some(&&k) {
            out.push(ekf.reported_eta());
            next_tick.next();
        }
    }
    Ok(out)
}

/// Step index of a segment start time.
pub fn step_index(t: f64, dt: f64) -> usize {
    (t / dt).round() as usize
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    pub spec: ScenarioSpec,
    pub seed: u64,
    pub flight: Flight,
    pub estimates: Vec<WindowEstimate>,
    /// EKF estimates at the same ticks as `estimates`.
    pub ekf: Vec<EfficiencyVector>,
}

impl RunTrace {
    pub fn tick_times(&self) -> Vec<f64> {
        self.estimates.iter().map(|e| e.record.t).collect()
    }

    pub fn tick_truth(&self) -> Vec<EfficiencyVector> {
        self.estimates.iter().map(|e| self.spec.true_efficiency(e.record.t)).collect()
    }

    pub fn irls_series(&self) -> Vec<EfficiencyVector> {
        self.estimates.iter().map(|e| e.record.s_hat).collect()
    }

    pub fn metrics(&self) -> Result<[Metrics; 2]> {
        let times = self.tick_times();
        let truth = self.tick_truth();
        let cuts = self.spec.discontinuities();
        Ok([
            compute_metrics(Method::Irls, &times, &self.irls_series(), &truth, &cuts, &self.spec.metrics)?,
            compute_metrics(Method::Ekf, &times, &self.ekf, &truth, &cuts, &self.spec.metrics)?,
        ])
    }
}

pub fn run_scenario(spec: &ScenarioSpec, seed: u64) -> Result<RunTrace> {
    spec.validate()?;
    let flight = simulate(spec, seed)?;
    let estimates = run_irls(&flight, &spec.estimator, &spec.vehicle)?;
    let ticks: Vec<usize> = estimates.iter().map(|e| step_index(e.record.t, spec.dt)).collect();
    let ekf = run_ekf(&flight, &spec.ekf, &spec.vehicle, &ticks)?;
    Ok(RunTrace { spec: spec.clone(), seed, flight, estimates, ekf })
}

/// Single window estimate from `s_prev = s0`, as used to inspect the solver's
/// convergence.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRun {
    /// Step index of the first segment in the window.
    pub first_step: usize,
    pub truth: EfficiencyVector,
    pub estimate: WindowEstimate,
}

/// Flies the scenario and estimates the first full window starting at or
/// after the warmup time, from the configured initial guess.
pub fn convergence_run(spec: &ScenarioSpec, seed: u64) -> Result<ConvergenceRun> {
    spec.validate()?;
    let flight = simulate(spec, seed)?;
    let cfg = &spec.estimator;
    let first_step = step_index(spec.metrics.warmup, spec.dt);
    if first_step + cfg.window > flight.len() {
        return Err(Error::Config(format!(
            "duration too short for a {}-segment window after {} s warmup",
            cfg.window, spec.metrics.warmup
        )));
    }
    let segments: Vec<WindowSegment> = (first_step..first_step + cfg.window).map(|k| flight.segment(k)).collect();
    let model = ResidualModel::new(spec.vehicle);
    let estimate = crate::irls::estimate(&segments, &EfficiencyVector::uniform(cfg.s0), cfg, &model)
        .map_err(|e| numerical_context(e, first_step, flight.time(first_step)))?;
    let truth = flight.truth[first_step + cfg.window - 1];
    Ok(ConvergenceRun { first_step, truth, estimate })
}

/// Outcome of the process-noise search for the EKF efficiency states.
#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub q_eta: f64,
    pub irls_rmse: f64,
    pub ekf_rmse: f64,
    /// `(q_eta, mean EKF RMSE)` for every grid value.
    pub grid: Vec<(f64, f64)>,
}

impl Calibration {
    /// `|ekf - irls| / irls`.
    pub fn relative_gap(&self) -> f64 {
        (self.ekf_rmse - self.irls_rmse).abs() / self.irls_rmse
    }
}

/// Picks the grid value whose mean EKF RMSE is closest to the IRLS one on
/// the same flight.
pub fn calibrate_q_eta(spec: &ScenarioSpec, seed: u64, grid: &[f64]) -> Result<Calibration> {
    if grid.is_empty() {
        return Err(Error::Config("empty q_eta grid".into()));
    }
    spec.validate()?;
    let flight = simulate(spec, seed)?;
    let estimates = run_irls(&flight, &spec.estimator, &spec.vehicle)?;
    let ticks: Vec<usize> = estimates.iter().map(|e| step_index(e.record.t, spec.dt)).collect();
    let times: Vec<f64> = estimates.iter().map(|e| e.record.t).collect();
    let truth: Vec<EfficiencyVector> = times.iter().map(|t| spec.true_efficiency(*t)).collect();
    let cuts = spec.discontinuities();
    let irls: Vec<EfficiencyVector> = estimates.iter().map(|e| e.record.s_hat).collect();
    let irls_rmse = compute_metrics(Method::Irls, &times, &irls, &truth, &cuts, &spec.metrics)?.mean_rmse();
    let mut out =
        Calibration { q_eta: grid[0], irls_rmse, ekf_rmse: f64::INFINITY, grid: Vec::with_capacity(grid.len()) };
    for &q in grid {
        let cfg = EkfConfig { q_eta: q, ..spec.ekf };
        cfg.validate()?;
        let ekf = run_ekf(&flight, &cfg, &spec.vehicle, &ticks)?;
        let rmse = compute_metrics(Method::Ekf, &times, &ekf, &truth, &cuts, &spec.metrics)?.mean_rmse();
        out.grid.push((q, rmse));
        if (rmse - irls_rmse).abs() < (out.ekf_rmse - irls_rmse).abs() {
            out.q_eta = q;
            out.ekf_rmse = rmse;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Irls,
    Ekf,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Irls => "irls",
            Method::Ekf => "ekf",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "irls" => Some(Method::Irls),
            "ekf" => Some(Method::Ekf),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MotorMetrics {
    pub rmse: f64,
    /// Population standard deviation of the error.
    pub std: f64,
    pub max_spike: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub method: Method,
    pub motors: [MotorMetrics; 4],
}

impl Metrics {
    pub fn mean_rmse(&self) -> f64 {
        self.motors.iter().map(|m| m.rmse).sum::<f64>() / 4.0
    }
}

/// Per-motor RMSE, std and max spike of `estimate - truth`.
///
/// Samples before `warmup` are dropped. RMSE and std also drop samples in
/// `[d, d + settle)` after each discontinuity `d`; the spike keeps them.
pub fn compute_metrics(
    method: Method,
    times: &[f64],
    estimate: &[EfficiencyVector],
    truth: &[EfficiencyVector],
    discontinuities: &[f64],
    cfg: &MetricsConfig,
) -> Result<Metrics> {
    if times.len() != estimate.len() || times.len() != truth.len() {
        return Err(Error::LengthMismatch("metric series"));
    }
    let settling = |t: f64| discontinuities.iter().any(|d| t >= *d && t < d + cfg.settle);
    let mut motors = [MotorMetrics::default(); 4];
    for (i, m) in motors.iter_mut().enumerate() {
        let mut steady = Vec::new();
        let mut spike = None::<f64>;
        for k in 0..times.len() {
            if times[k] < cfg.warmup {
                continue;
            }
            let e = estimate[k].0[i] - truth[k].0[i];
            spike = Some(spike.unwrap_or(0.0).max(e.abs()));
            if !settling(times[k]) {
                steady.push(e);
            }
        }
        if steady.is_empty() {
            return Err(Error::EmptyMetrics);
        }
        let n = steady.len() as f64;
        let mean = steady.iter().sum::<f64>() / n;
        m.rmse = (steady.iter().map(|e| e * e).sum::<f64>() / n).sqrt();
        m.std = (steady.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / n).sqrt();
        m.max_spike = spike.unwrap_or(0.0);
    }
    Ok(Metrics { method, motors })
}
