//! Sliding-window IRLS estimator: robust reweighting around the
//! interior-point solver.

use std::collections::VecDeque;

use nalgebra::Vector4;
use serde::{Deserialize, Serialize};

use crate::dynamics::{EfficiencyVector, QuadParams};
use crate::error::{Error, Result};
use crate::ipm::{self, AffineProblem, Dual, PrimalDual, SolveOutcome, SolverConfig};
use crate::residuals::{stack_window, ResidualModel, WindowSegment, RESIDUALS_PER_SEGMENT};
use crate::weights::{residual_energies, robust_zscores, weights_from_zscores, SegmentWeights, WeightConfig};

/// Relative tolerance on segment timing.
const TIME_TOL: f64 = 1e-9;

/// Per-channel diagonal of the local weight matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LocalWeights {
    pub g_v: [f64; 3],
    pub g_x: [f64; 3],
    pub g_omega: [f64; 3],
    pub g_r: f64,
}

impl Default for LocalWeights {
    fn default() -> Self {
        LocalWeights::hover_normalized(&QuadParams::default(), DEFAULT_DT, DEFAULT_WEIGHT_SCALE)
    }
}

/// Control period the default weights are normalized for.
pub const DEFAULT_DT: f64 = 0.004;
pub const DEFAULT_WEIGHT_SCALE: f64 = 1e3;

impl LocalWeights {
    pub fn uniform(g: f64) -> Self {
        LocalWeights { g_v: [g; 3], g_x: [g; 3], g_omega: [g; 3], g_r: g }
    }

    /// `scale / k²` per channel, where `k` is the channel's sensitivity to
    /// one motor's efficiency at hover thrust. Thrust noise is multiplicative
    /// per motor, so this makes every efficiency direction carry comparable
    /// noise; unnormalized, the weakly observed yaw direction absorbs the
    /// strongly weighted roll and pitch noise.
    ///
    /// The attitude channel keeps weight `scale`: its sensitivity is
    /// O(dt²|Ω|), and normalizing it would amplify the model's first-order
    /// rotation floor.
    pub fn hover_normalized(params: &QuadParams, dt: f64, scale: f64) -> Self {
        let f = params.mass * params.gravity / 4.0;
        let k_v = dt * f / params.mass;
        let k_x = 0.5 * dt * k_v;
        let j = params.inertia;
        let k_roll = dt * params.arm_length * f / j[0];
        let k_pitch = dt * params.arm_length * f / j[1];
        let k_yaw = dt * params.c_tau_f * f / j[2];
        let w = |k: f64| scale / (k * k);
        LocalWeights { g_v: [w(k_v); 3], g_x: [w(k_x); 3], g_omega: [w(k_roll), w(k_pitch), w(k_yaw)], g_r: scale }
    }

    pub fn as_array(&self) -> [f64; RESIDUALS_PER_SEGMENT] {
        let mut out = [0.0; RESIDUALS_PER_SEGMENT];
        out[0..3].copy_from_slice(&self.g_v);
        out[3..6].copy_from_slice(&self.g_x);
        out[6..9].copy_from_slice(&self.g_omega);
        out[9] = self.g_r;
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.as_array().iter().all(|g| g.is_finite() && *g > 0.0) {
            Ok(())
        } else {
            Err(Error::Config("local weights must be positive".into()))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IrlsConfig {
    /// Outer reweighting iterations per window.
    pub n_irls: usize,
    /// Window length in segments.
    pub window: usize,
    /// New segments between estimates once the window is full.
    pub stride: usize,
    /// Initial guess for every motor, also the first `s_prev`.
    pub s0: f64,
    /// Initial value of every multiplier.
    pub lambda0: f64,
    pub local: LocalWeights,
    pub weights: WeightConfig,
    pub solver: SolverConfig,
}

impl Default for IrlsConfig {
    fn default() -> Self {
        IrlsConfig {
            n_irls: 3,
            window: 50,
            stride: 5,
            s0: 0.5,
            lambda0: 1.0,
            local: LocalWeights::default(),
            weights: WeightConfig::default(),
            solver: SolverConfig::default(),
        }
    }
}

impl IrlsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_irls == 0 || self.window == 0 || self.stride == 0 {
            return Err(Error::Config("n_irls, window and stride must be positive".into()));
        }
        if !(self.lambda0 > 0.0) {
            return Err(Error::Config("lambda0 must be positive".into()));
        }
        self.local.validate()?;
        self.weights.validate()?;
        self.solver.validate()?;
        if !self.solver.is_interior(&Vector4::repeat(self.s0)) {
            return Err(Error::Config(format!("initial guess {} is not inside the bounds", self.s0)));
        }
        Ok(())
    }
}

/// Fixed-capacity, time-contiguous buffer of the most recent segments.
#[derive(Debug, Clone)]
pub struct SlidingWindow {
    segments: VecDeque<WindowSegment>,
    capacity: usize,
    dt: Option<f64>,
}

impl SlidingWindow {
    pub fn new(capacity: usize) -> Self {
        SlidingWindow { segments: VecDeque::with_capacity(capacity), capacity, dt: None }
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.segments.len() == self.capacity
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Appends `seg`, evicting the oldest segment when full. The first
    /// segment fixes the window's time step.
    pub fn push(&mut self, seg: WindowSegment) -> Result<()> {
        if !(seg.dt > 0.0) {
            return Err(Error::NonPositiveDt(seg.dt));
        }
        let dt = *self.dt.get_or_insert(seg.dt);
        if (seg.dt - dt).abs() > TIME_TOL * dt {
            return Err(Error::DtMismatch { expected: dt, got: seg.dt });
        }
        if let Some(last) = self.segments.back() {
            let expected = last.t + dt;
            if (seg.t - expected).abs() > TIME_TOL * expected.abs().max(1.0) {
                return Err(Error::NonContiguous { expected, got: seg.t });
            }
        }
        if self.is_full() {
            self.segments.pop_front();
        }
        self.segments.push_back(seg);
        Ok(())
    }

    /// Oldest-first view of the buffered segments.
    pub fn segments(&mut self) -> &[WindowSegment] {
        self.segments.make_contiguous()
    }

    pub fn iter(&self) -> impl Iterator<Item = &WindowSegment> {
        self.segments.iter()
    }
}

/// Diagonal of `blockdiag(w_0 G_0, …, w_{n-1} G_{n-1})`.
pub fn assemble_g(weights: &SegmentWeights, local: &LocalWeights) -> Vec<f64> {
    let g = local.as_array();
    weights.w.iter().flat_map(|w| g.iter().map(move |gi| w * gi)).collect()
}

/// The window objective as an affine problem `r(s) = J s + r(0)`; exact
/// because every residual is affine in `s`.
pub fn window_problem(segments: &[WindowSegment], model: &ResidualModel) -> Result<AffineProblem> {
    let (r0, jac) = stack_window(segments, &EfficiencyVector(Vector4::zeros()), model)?;
    Ok(AffineProblem { a: jac, b: -r0 })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimateRecord {
    /// Start time of the newest segment in the window.
    pub t: f64,
    pub s_hat: EfficiencyVector,
    pub irls_iters: usize,
    /// Segments hard-rejected in the final reweighting.
    pub rejected: usize,
    /// Surrogate duality gap of the final solve.
    pub gap: f64,
    pub converged: bool,
    /// Set when every segment was rejected and unit weights were used.
    pub fallback: bool,
}

/// Diagnostics of one outer iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct IrlsIteration {
    pub zscores: Vec<f64>,
    pub weights: SegmentWeights,
    pub solve: SolveOutcome,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowEstimate {
    pub record: EstimateRecord,
    pub iterations: Vec<IrlsIteration>,
}

impl WindowEstimate {
    pub fn final_iteration(&self) -> &IrlsIteration {
        self.iterations.last().expect("at least one IRLS iteration")
    }
}

/// Runs `cfg.n_irls` reweight-and-solve rounds on a full window, starting
/// from and regularizing towards `s_prev`.
pub fn estimate(
    segments: &[WindowSegment],
    s_prev: &EfficiencyVector,
    cfg: &IrlsConfig,
    model: &ResidualModel,
) -> Result<WindowEstimate> {
    if segments.len() != cfg.window {
        return Err(Error::WindowNotFull { have: segments.len(), need: cfg.window });
    }
    let problem = window_problem(segments, model)?;
    let local = cfg.local.as_array();
    let mut s = s_prev.0;
    let mut fallback = false;
    let mut iterations = Vec::with_capacity(cfg.n_irls);

    for _ in 0..cfg.n_irls {
        let current = EfficiencyVector(s);
        let residuals: Vec<_> = segments.iter().map(|seg| model.segment_residual(seg, &current)).collect();
        let energies = residual_energies(&residuals, &local);
        let zscores = robust_zscores(&energies, cfg.weights.eps_min)?;
        let weights = match weights_from_zscores(&zscores, &cfg.weights) {
            Ok(w) => w,
            Err(Error::AllRejected) => {
                fallback = true;
                SegmentWeights::uniform(segments.len())
            }
            Err(e) => return Err(e),
        };
        let g = assemble_g(&weights, &cfg.local);
        let y0 = PrimalDual { s, lambda: Dual::repeat(cfg.lambda0) };
        let solve = ipm::solve(&problem, &g, &s_prev.0, y0, &cfg.solver)?;
        s = solve.y.s;
        iterations.push(IrlsIteration { zscores, weights, solve });
    }

    let last = iterations.last().expect("n_irls is positive");
    let record = EstimateRecord {
        t: segments.last().map(|seg| seg.t).unwrap_or_default(),
        s_hat: EfficiencyVector(s),
        irls_iters: iterations.len(),
        rejected: last.weights.rejected_count(),
        gap: last.solve.gap,
        converged: last.solve.converged(),
        fallback,
    };
    Ok(WindowEstimate { record, iterations })
}

/// Streaming wrapper: buffers segments and estimates once the window fills
/// and then every `stride` segments, chaining `s_prev` between estimates.
#[derive(Debug, Clone)]
pub struct OnlineEstimator {
    cfg: IrlsConfig,
    model: ResidualModel,
    window: SlidingWindow,
    s_prev: EfficiencyVector,
    pending: usize,
    emitted: usize,
}

impl OnlineEstimator {
    pub fn new(cfg: IrlsConfig, model: ResidualModel) -> Result<Self> {
        cfg.validate()?;
        Ok(OnlineEstimator {
            window: SlidingWindow::new(cfg.window),
            s_prev: EfficiencyVector::uniform(cfg.s0),
            pending: 0,
            emitted: 0,
            cfg,
            model,
        })
    }

    pub fn config(&self) -> &IrlsConfig {
        &self.cfg
    }

    /// Latest estimate, or the initial guess before the first one.
    pub fn current(&self) -> EfficiencyVector {
        self.s_prev
    }

    pub fn estimates_emitted(&self) -> usize {
        self.emitted
    }

    pub fn push(&mut self, seg: WindowSegment) -> Result<Option<WindowEstimate>> {
        self.window.push(seg)?;
        self.pending += 1;
        if !self.window.is_full() {
            return Ok(None);
        }
        if self.emitted > 0 && self.pending < self.cfg.stride {
            return Ok(None);
        }
        let out = estimate(self.window.segments(), &self.s_prev, &self.cfg, &self.model)?;
        self.s_prev = out.record.s_hat;
        self.pending = 0;
        self.emitted += 1;
        Ok(Some(out))
    }
}

/// Runs the online estimator over a finite stream.
pub fn run_online<I>(segments: I, cfg: IrlsConfig, model: ResidualModel) -> Result<Vec<WindowEstimate>>
where
    I: IntoIterator<Item = WindowSegment>,
{
    let mut est = OnlineEstimator::new(cfg, model)?;
    let mut out = Vec::new();
    for seg in segments {
        if let Some(e) = est.push(seg)? {
            out.push(e);
        }
    }
    Ok(out)
}
