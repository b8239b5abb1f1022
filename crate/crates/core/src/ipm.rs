//! Primal-dual interior-point solver for the box-constrained, smoothness
//! regularized weighted least-squares problem
//!
//! ```text
//! min_s  ½ r(s)ᵀ G r(s) + γ/2 |s - s_prev|²   s.t.  η_min ≤ s_i ≤ η_max
//! ```
//!
//! The eight inequalities are stacked as `φ(s) = [s - η_max; η_min - s] ≤ 0`
//! with multipliers `λ ≥ 0`. Each iteration sets the barrier parameter from
//! the surrogate duality gap, takes a Newton step on the perturbed KKT system
//! with a Gauss-Newton Hessian, and backtracks until the KKT residual norm
//! decreases sufficiently while the primal iterate stays strictly interior.

use nalgebra::{DMatrix, DVector, Matrix4, SMatrix, SVector, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NUM_CONSTRAINTS: usize = 8;
const MIN_STEP: f64 = 1e-12;

pub type Dual = SVector<f64, NUM_CONSTRAINTS>;
type KktMatrix = SMatrix<f64, 12, 12>;
type KktVector = SVector<f64, 12>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    /// Barrier growth factor, > 1.
    pub mu: f64,
    pub eps_feas: f64,
    pub eps_gap: f64,
    /// Sufficient-decrease fraction in (0, 1).
    pub kappa: f64,
    /// Backtracking factor in (0, 1).
    pub zeta: f64,
    /// Additive slack in the decrease test.
    pub eps_tol: f64,
    /// Weight of the pull towards the previous estimate.
    pub gamma: f64,
    pub eta_min: f64,
    pub eta_max: f64,
    pub max_newton_iters: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            mu: 10.0,
            eps_feas: 1e-8,
            eps_gap: 1e-8,
            kappa: 0.01,
            zeta: 0.5,
            eps_tol: 1e-12,
            gamma: 1e-8,
            eta_min: 0.01,
            eta_max: 1.05,
            max_newton_iters: 50,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.mu > 1.0
            && self.eps_feas > 0.0
            && self.eps_gap > 0.0
            && self.kappa > 0.0
            && self.kappa < 1.0
            && self.zeta > 0.0
            && self.zeta < 1.0
            && self.eps_tol >= 0.0
            && self.gamma >= 0.0
            && self.eta_min < self.eta_max
            && self.max_newton_iters > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid solver configuration {self:?}")))
        }
    }

    pub fn is_interior(&self, s: &Vector4<f64>) -> bool {
        constraints(s, self).0.iter().all(|phi| *phi < 0.0)
    }

    /// Centre of the box.
    pub fn center(&self) -> Vector4<f64> {
        Vector4::repeat(0.5 * (self.eta_min + self.eta_max))
    }
}

/// Source of residuals `r(s)` and Jacobians `J(s) = ∂r/∂s`.
pub trait LeastSquaresProblem {
    fn linearize(&self, s: &Vector4<f64>) -> (DVector<f64>, DMatrix<f64>);
}

/// `r(s) = A s - b`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineProblem {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl LeastSquaresProblem for AffineProblem {
    fn linearize(&self, s: &Vector4<f64>) -> (DVector<f64>, DMatrix<f64>) {
        (&self.a * s - &self.b, self.a.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrimalDual {
    pub s: Vector4<f64>,
    pub lambda: Dual,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktResidual {
    pub r_dual: Vector4<f64>,
    pub r_cent: Dual,
}

impl KktResidual {
    pub fn norm(&self) -> f64 {
        (self.r_dual.norm_squared() + self.r_cent.norm_squared()).sqrt()
    }

    fn stacked(&self) -> KktVector {
        let mut v = KktVector::zeros();
        v.fixed_rows_mut::<4>(0).copy_from(&self.r_dual);
        v.fixed_rows_mut::<8>(4).copy_from(&self.r_cent);
        v
    }
}

/// `φ(s)` and its constant Jacobian `[I; -I]`.
pub fn constraints(s: &Vector4<f64>, cfg: &SolverConfig) -> (Dual, SMatrix<f64, 8, 4>) {
    let phi = Dual::from_fn(|i, _| if i < 4 { s[i] - cfg.eta_max } else { cfg.eta_min - s[i - 4] });
    let dphi = SMatrix::<f64, 8, 4>::from_fn(|i, j| match (i < 4, i % 4 == j) {
        (true, true) => 1.0,
        (false, true) => -1.0,
        _ => 0.0,
    });
    (phi, dphi)
}

/// `-φ(s)ᵀ λ`.
pub fn surrogate_gap(s: &Vector4<f64>, lambda: &Dual, cfg: &SolverConfig) -> f64 {
    -constraints(s, cfg).0.dot(lambda)
}

/// Gradient `JᵀGr + γ(s - s_prev)` and Gauss-Newton Hessian `JᵀGJ + γI` for a
/// diagonal `G`.
fn objective_derivatives(
    s: &Vector4<f64>,
    s_prev: &Vector4<f64>,
    r: &DVector<f64>,
    jac: &DMatrix<f64>,
    g: &[f64],
    gamma: f64,
) -> Result<(Vector4<f64>, Matrix4<f64>)> {
    if r.len() != g.len() || jac.nrows() != g.len() || jac.ncols() != 4 {
        return Err(Error::LengthMismatch("residual, Jacobian and weight"));
    }
    let mut grad = (s - s_prev) * gamma;
    let mut hess = Matrix4::identity() * gamma;
    for (k, &gk) in g.iter().enumerate() {
        if gk == 0.0 {
            continue;
        }
        let row = jac.fixed_view::<1, 4>(k, 0).transpose();
        grad += row * (gk * r[k]);
        hess += row * row.transpose() * gk;
    }
    Ok((grad, hess))
}

fn residual_from_gradient(
    grad: &Vector4<f64>,
    s: &Vector4<f64>,
    lambda: &Dual,
    beta: f64,
    cfg: &SolverConfig,
) -> KktResidual {
    let (phi, dphi) = constraints(s, cfg);
    KktResidual {
        r_dual: grad + dphi.transpose() * lambda,
        r_cent: -lambda.component_mul(&phi) - Dual::repeat(1.0 / beta),
    }
}

/// KKT residual of the barrier problem at `(s, λ)`.
#[allow(clippy::too_many_arguments)]
pub fn kkt_residual(
    s: &Vector4<f64>,
    lambda: &Dual,
    s_prev: &Vector4<f64>,
    r: &DVector<f64>,
    jac: &DMatrix<f64>,
    g: &[f64],
    beta: f64,
    cfg: &SolverConfig,
) -> Result<KktResidual> {
    if !cfg.is_interior(s) {
        return Err(Error::NotInterior);
    }
    let (grad, _) = objective_derivatives(s, s_prev, r, jac, g, cfg.gamma)?;
    Ok(residual_from_gradient(&grad, s, lambda, beta, cfg))
}

fn assemble_kkt(hess: &Matrix4<f64>, s: &Vector4<f64>, lambda: &Dual, cfg: &SolverConfig) -> KktMatrix {
    let (phi, dphi) = constraints(s, cfg);
    let mut m = KktMatrix::zeros();
    m.fixed_view_mut::<4, 4>(0, 0).copy_from(hess);
    m.fixed_view_mut::<4, 8>(0, 4).copy_from(&dphi.transpose());
    m.fixed_view_mut::<8, 4>(4, 0).copy_from(&(-SMatrix::<f64, 8, 8>::from_diagonal(lambda) * dphi));
    m.fixed_view_mut::<8, 8>(4, 4).copy_from(&(-SMatrix::<f64, 8, 8>::from_diagonal(&phi)));
    m
}

/// Primal-dual Newton direction. `None` when the KKT matrix is singular.
#[allow(clippy::too_many_arguments)]
pub fn newton_step(
    s: &Vector4<f64>,
    lambda: &Dual,
    s_prev: &Vector4<f64>,
    r: &DVector<f64>,
    jac: &DMatrix<f64>,
    g: &[f64],
    beta: f64,
    cfg: &SolverConfig,
) -> Result<Option<(Vector4<f64>, Dual)>> {
    let (grad, hess) = objective_derivatives(s, s_prev, r, jac, g, cfg.gamma)?;
    let res = residual_from_gradient(&grad, s, lambda, beta, cfg);
    Ok(solve_kkt(&hess, s, lambda, &res, cfg))
}

fn solve_kkt(
    hess: &Matrix4<f64>,
    s: &Vector4<f64>,
    lambda: &Dual,
    res: &KktResidual,
    cfg: &SolverConfig,
) -> Option<(Vector4<f64>, Dual)> {
    let m = assemble_kkt(hess, s, lambda, cfg);
    let dy = m.lu().solve(&(-res.stacked()))?;
    if !dy.iter().all(|v| v.is_finite()) {
        return None;
    }
    Some((dy.fixed_rows::<4>(0).into_owned(), dy.fixed_rows::<8>(4).into_owned()))
}

/// Largest `α ∈ [0, 1]` keeping `λ + α Δλ ≥ 0`.
pub fn max_step(lambda: &Dual, dlambda: &Dual) -> f64 {
    lambda.iter().zip(dlambda.iter()).filter(|(_, d)| **d < 0.0).map(|(l, d)| -l / d).fold(1.0, f64::min)
}

/// Evaluates the barrier KKT residual of a weighted problem at any point.
pub struct KktEvaluator<'a, P: ?Sized> {
    pub problem: &'a P,
    pub g: &'a [f64],
    pub s_prev: Vector4<f64>,
    pub cfg: &'a SolverConfig,
}

impl<P: LeastSquaresProblem + ?Sized> KktEvaluator<'_, P> {
    fn derivatives(&self, s: &Vector4<f64>) -> Result<(Vector4<f64>, Matrix4<f64>)> {
        let (r, jac) = self.problem.linearize(s);
        objective_derivatives(s, &self.s_prev, &r, &jac, self.g, self.cfg.gamma)
    }

    pub fn residual(&self, y: &PrimalDual, beta: f64) -> Result<KktResidual> {
        let (grad, _) = self.derivatives(&y.s)?;
        Ok(residual_from_gradient(&grad, &y.s, &y.lambda, beta, self.cfg))
    }
}

/// Backtracking from `0.99 α_max` until the KKT norm decreases by the
/// fraction `κα` (plus `ε_tol`) and `s + αΔs` is strictly interior. Returns
/// `None` if α underflows.
pub fn line_search<P: LeastSquaresProblem + ?Sized>(
    eval: &KktEvaluator<'_, P>,
    y: &PrimalDual,
    dy: &PrimalDual,
    beta: f64,
) -> Result<Option<f64>> {
    let cfg = eval.cfg;
    let current = eval.residual(y, beta)?.norm();
    let mut alpha = 0.99 * max_step(&y.lambda, &dy.lambda);
    while alpha >= MIN_STEP {
        let trial = PrimalDual { s: y.s + dy.s * alpha, lambda: y.lambda + dy.lambda * alpha };
        if cfg.is_interior(&trial.s) {
            let norm = eval.residual(&trial, beta)?.norm();
            if norm <= (1.0 - cfg.kappa * alpha) * current + cfg.eps_tol {
                return Ok(Some(alpha));
            }
        }
        alpha *= cfg.zeta;
    }
    Ok(None)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Converged,
    MaxIterations,
    LineSearchFailed,
}

/// One row of the convergence log, recorded after each accepted update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    /// 1-based Newton iteration; 0 describes the starting point.
    pub iteration: usize,
    pub s: Vector4<f64>,
    pub lambda: Dual,
    pub r_dual_norm: f64,
    pub r_cent_norm: f64,
    pub gap: f64,
    pub alpha: f64,
    pub beta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveOutcome {
    pub y: PrimalDual,
    pub status: SolveStatus,
    /// Starting point followed by one row per accepted iteration.
    pub trace: Vec<TraceRow>,
    pub r_dual_norm: f64,
    pub gap: f64,
}

impl SolveOutcome {
    pub fn converged(&self) -> bool {
        self.status == SolveStatus::Converged
    }

    pub fn iterations(&self) -> usize {
        self.trace.len().saturating_sub(1)
    }
}

/// Runs the interior-point iteration from `(s0, λ0)`.
///
/// Hitting the iteration cap or a failed line search is not an error: the
/// outcome carries the last accepted iterate and a status flag.
pub fn solve<P: LeastSquaresProblem + ?Sized>(
    problem: &P,
    g: &[f64],
    s_prev: &Vector4<f64>,
    y0: PrimalDual,
    cfg: &SolverConfig,
) -> Result<SolveOutcome> {
    if !cfg.is_interior(&y0.s) {
        return Err(Error::NotInterior);
    }
    if !y0.lambda.iter().all(|l| *l > 0.0) {
        return Err(Error::Config("initial multipliers must be positive".into()));
    }
    let eval = KktEvaluator { problem, g, s_prev: *s_prev, cfg };
    let m = NUM_CONSTRAINTS as f64;
    let mut y = y0;
    let (mut grad, mut hess) = eval.derivatives(&y.s)?;
    let mut gap = surrogate_gap(&y.s, &y.lambda, cfg);

    let beta0 = cfg.mu * m / gap;
    let start = residual_from_gradient(&grad, &y.s, &y.lambda, beta0, cfg);
    let mut trace = vec![TraceRow {
        iteration: 0,
        s: y.s,
        lambda: y.lambda,
        r_dual_norm: start.r_dual.norm(),
        r_cent_norm: start.r_cent.norm(),
        gap,
        alpha: 0.0,
        beta: beta0,
    }];
    let mut r_dual_norm = start.r_dual.norm();

    let mut status = SolveStatus::MaxIterations;
    for iteration in 1..=cfg.max_newton_iters {
        if r_dual_norm <= cfg.eps_feas && gap <= cfg.eps_gap {
            status = SolveStatus::Converged;
            break;
        }
        let beta = cfg.mu * m / gap;
        let res = residual_from_gradient(&grad, &y.s, &y.lambda, beta, cfg);
        let (ds, dl) = solve_kkt(&hess, &y.s, &y.lambda, &res, cfg).ok_or(Error::SingularKkt { iteration })?;
        let dy = PrimalDual { s: ds, lambda: dl };
        let Some(alpha) = line_search(&eval, &y, &dy, beta)? else {
            status = SolveStatus::LineSearchFailed;
            break;
        };
        y = PrimalDual { s: y.s + ds * alpha, lambda: y.lambda + dl * alpha };
        (grad, hess) = eval.derivatives(&y.s)?;
        gap = surrogate_gap(&y.s, &y.lambda, cfg);
        let after = residual_from_gradient(&grad, &y.s, &y.lambda, beta, cfg);
        r_dual_norm = after.r_dual.norm();
        trace.push(TraceRow {
            iteration,
            s: y.s,
            lambda: y.lambda,
            r_dual_norm,
            r_cent_norm: after.r_cent.norm(),
            gap,
            alpha,
            beta,
        });
    }
    if status == SolveStatus::MaxIterations && r_dual_norm <= cfg.eps_feas && gap <= cfg.eps_gap {
        status = SolveStatus::Converged;
    }
    Ok(SolveOutcome { y, status, trace, r_dual_norm, gap })
}
