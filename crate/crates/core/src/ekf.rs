//! Extended Kalman filter baseline with efficiencies as random-walk states.
//!
//! State layout: `[x(3), v(3), Ω(3), vec(R)(9), η(4)]`, with `vec(R)` stacked
//! column by column. The rotation block is filtered as nine free numbers; it
//! is projected onto SO(3) only where the dynamics need a rotation.

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};

use crate::dynamics::{apply_efficiency, Allocation, EfficiencyVector, MotorThrusts, QuadParams, QuadState};
use crate::error::{Error, Result};
use crate::se3::{so3_exp_first_order, Mat3, Vec3};

pub const STATE_DIM: usize = 22;
pub const MEAS_DIM: usize = 18;
const ETA: usize = 18;
const FD_STEP: f64 = 1e-6;
/// Reporting range for efficiency estimates; the filter state itself is
/// unconstrained.
pub const REPORT_RANGE: (f64, f64) = (0.0, 1.2);

pub type StateVector = SVector<f64, STATE_DIM>;
pub type StateMatrix = SMatrix<f64, STATE_DIM, STATE_DIM>;
pub type Measurement = SVector<f64, MEAS_DIM>;
pub type MeasMatrix = SMatrix<f64, MEAS_DIM, MEAS_DIM>;

/// Noise and initialization settings. Process intensities are per second.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EkfConfig {
    pub q_x: f64,
    pub q_v: f64,
    pub q_omega: [f64; 3],
    pub q_r: f64,
    pub q_eta: f64,
    /// Standard deviation of every measured channel.
    pub meas_sigma: f64,
    /// Initial variance of the kinematic states.
    pub p0_state: f64,
    pub p0_eta: f64,
    pub eta0: f64,
}

impl Default for EkfConfig {
    fn default() -> Self {
        EkfConfig {
            q_x: 1e-8,
            q_v: 5e-4,
            q_omega: [0.1, 0.1, 5e-5],
            q_r: 1e-8,
            q_eta: 1e-4,
            meas_sigma: 1e-3,
            p0_state: 1e-6,
            p0_eta: 0.1,
            eta0: 0.5,
        }
    }
}

impl EkfConfig {
    pub fn validate(&self) -> Result<()> {
        let nonneg = [
            self.q_x,
            self.q_v,
            self.q_omega[0],
            self.q_omega[1],
            self.q_omega[2],
            self.q_r,
            self.q_eta,
            self.p0_state,
            self.p0_eta,
        ];
        if nonneg.iter().all(|q| q.is_finite() && *q >= 0.0) && self.meas_sigma > 0.0 && self.eta0.is_finite() {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid EKF configuration {self:?}")))
        }
    }

    /// Diagonal process intensity.
    pub fn process_noise(&self) -> StateMatrix {
        let mut d = StateVector::zeros();
        for i in 0..3 {
            d[i] = self.q_x;
            d[3 + i] = self.q_v;
            d[6 + i] = self.q_omega[i];
        }
        for i in 9..ETA {
            d[i] = self.q_r;
        }
        for i in ETA..STATE_DIM {
            d[i] = self.q_eta;
        }
        StateMatrix::from_diagonal(&d)
    }

    pub fn measurement_noise(&self) -> MeasMatrix {
        MeasMatrix::identity() * self.meas_sigma.powi(2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EkfState {
    pub mean: StateVector,
    pub cov: StateMatrix,
}

impl EkfState {
    pub fn eta(&self) -> EfficiencyVector {
        EfficiencyVector(self.mean.fixed_rows::<4>(ETA).into_owned())
    }

    /// Efficiencies clamped to [`REPORT_RANGE`].
    pub fn reported_eta(&self) -> EfficiencyVector {
        EfficiencyVector(self.eta().0.map(|e| e.clamp(REPORT_RANGE.0, REPORT_RANGE.1)))
    }
}

/// `[x, v, Ω, vec(R)]` of a vehicle state.
pub fn measurement_of(state: &QuadState) -> Measurement {
    let mut z = Measurement::zeros();
    z.fixed_rows_mut::<3>(0).copy_from(&state.x);
    z.fixed_rows_mut::<3>(3).copy_from(&state.v);
    z.fixed_rows_mut::<3>(6).copy_from(&state.omega);
    z.fixed_rows_mut::<9>(9).copy_from_slice(state.r.as_slice());
    z
}

pub fn initial_state(state: &QuadState, cfg: &EkfConfig) -> EkfState {
    let mut mean = StateVector::zeros();
    mean.fixed_rows_mut::<MEAS_DIM>(0).copy_from(&measurement_of(state));
    mean.fixed_rows_mut::<4>(ETA).fill(cfg.eta0);
    let mut diag = StateVector::repeat(cfg.p0_state);
    diag.fixed_rows_mut::<4>(ETA).fill(cfg.p0_eta);
    EkfState { mean, cov: StateMatrix::from_diagonal(&diag) }
}

/// Nearest rotation in the Frobenius norm.
fn project_rotation(m: &Mat3) -> Mat3 {
    let svd = m.svd(true, true);
    let (u, v_t) = (svd.u.expect("u requested"), svd.v_t.expect("v_t requested"));
    let mut r = u * v_t;
    if r.determinant() < 0.0 {
        let mut u = u;
        u.column_mut(2).neg_mut();
        r = u * v_t;
    }
    r
}

/// One step of the filter's process model: the residual predictor's
/// discrete dynamics with the state's own efficiencies, a first-order
/// rotation update and a random walk for `η`.
pub fn transition(
    mean: &StateVector,
    f_cmd: &MotorThrusts,
    params: &QuadParams,
    alloc: &Allocation,
    dt: f64,
) -> StateVector {
    let x = mean.fixed_rows::<3>(0).into_owned();
    let v = mean.fixed_rows::<3>(3).into_owned();
    let omega = mean.fixed_rows::<3>(6).into_owned();
    let r_state = Mat3::from_column_slice(mean.fixed_rows::<9>(9).as_slice());
    let eta = EfficiencyVector(mean.fixed_rows::<4>(ETA).into_owned());

    let wrench = apply_efficiency(f_cmd, &eta, alloc);
    let acc = params.linear_acceleration(&project_rotation(&r_state), wrench.thrust);
    let omega1: Vec3 = omega + params.angular_acceleration(&omega, &wrench.moment) * dt;
    let r1 = r_state * so3_exp_first_order(&omega1, dt);

    let mut out = *mean;
    out.fixed_rows_mut::<3>(0).copy_from(&(x + v * dt + acc * (0.5 * dt * dt)));
    out.fixed_rows_mut::<3>(3).copy_from(&(v + acc * dt));
    out.fixed_rows_mut::<3>(6).copy_from(&omega1);
    out.fixed_rows_mut::<9>(9).copy_from_slice(r1.as_slice());
    out
}

/// Central-difference Jacobian of [`transition`].
pub fn transition_jacobian(
    mean: &StateVector,
    f_cmd: &MotorThrusts,
    params: &QuadParams,
    alloc: &Allocation,
    dt: f64,
) -> StateMatrix {
    let mut f = StateMatrix::zeros();
    for j in 0..STATE_DIM {
        let mut plus = *mean;
        let mut minus = *mean;
        plus[j] += FD_STEP;
        minus[j] -= FD_STEP;
        let col = (transition(&plus, f_cmd, params, alloc, dt) - transition(&minus, f_cmd, params, alloc, dt))
            / (2.0 * FD_STEP);
        f.set_column(j, &col);
    }
    f
}

fn symmetrize(m: &StateMatrix) -> StateMatrix {
    (m + m.transpose()) * 0.5
}

/// Propagates mean and covariance; `q` is the per-second process intensity.
pub fn ekf_predict(
    state: &EkfState,
    f_cmd: &MotorThrusts,
    q: &StateMatrix,
    params: &QuadParams,
    alloc: &Allocation,
    dt: f64,
) -> EkfState {
    let f = transition_jacobian(&state.mean, f_cmd, params, alloc, dt);
    EkfState {
        mean: transition(&state.mean, f_cmd, params, alloc, dt),
        cov: symmetrize(&(f * state.cov * f.transpose() + q * dt)),
    }
}

/// Linear update with `H = [I₁₈ 0]` and the Joseph-form covariance.
pub fn ekf_update(state: &EkfState, z: &Measurement, rm: &MeasMatrix) -> Result<EkfState> {
    let p = &state.cov;
    let p_hh = p.fixed_view::<MEAS_DIM, MEAS_DIM>(0, 0).into_owned();
    let s = p_hh + rm;
    let s_inv = s.cholesky().ok_or(Error::SingularInnovation)?.inverse();
    // P Hᵀ is the first 18 columns of P.
    let pht = p.fixed_view::<STATE_DIM, MEAS_DIM>(0, 0).into_owned();
    let k = pht * s_inv;
    let innovation = z - state.mean.fixed_rows::<MEAS_DIM>(0);

    let mut i_kh = StateMatrix::identity();
    let mut block = i_kh.fixed_view_mut::<STATE_DIM, MEAS_DIM>(0, 0);
    block -= &k;
    let cov = i_kh * p * i_kh.transpose() + k * rm * k.transpose();
    Ok(EkfState { mean: state.mean + k * innovation, cov: symmetrize(&cov) })
}

/// Filter driven one control period at a time.
#[derive(Debug, Clone)]
pub struct Ekf {
    pub state: EkfState,
    params: QuadParams,
    alloc: Allocation,
    q: StateMatrix,
    rm: MeasMatrix,
}

impl Ekf {
    pub fn new(initial: &QuadState, cfg: &EkfConfig, params: QuadParams) -> Result<Self> {
        cfg.validate()?;
        params.validate()?;
        Ok(Ekf {
            state: initial_state(initial, cfg),
            alloc: Allocation::new(&params),
            params,
            q: cfg.process_noise(),
            rm: cfg.measurement_noise(),
        })
    }

    /// Predicts across one period under `f_cmd` and corrects with the state
    /// measured at its end.
    pub fn step(&mut self, f_cmd: &MotorThrusts, measured: &QuadState, dt: f64) -> Result<()> {
        if !(dt > 0.0) {
            return Err(Error::NonPositiveDt(dt));
        }
        let predicted = ekf_predict(&self.state, f_cmd, &self.q, &self.params, &self.alloc, dt);
        self.state = ekf_update(&predicted, &measurement_of(measured), &self.rm)?;
        Ok(())
    }

    pub fn eta(&self) -> EfficiencyVector {
        self.state.eta()
    }

    pub fn reported_eta(&self) -> EfficiencyVector {
        self.state.reported_eta()
    }
}
