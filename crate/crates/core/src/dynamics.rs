//! Quadrotor truth model: thrust allocation, efficiency injection, actuator
//! noise and clipping, and explicit time stepping.
//!
//! Frame convention: `e3 = [0, 0, 1]` points down and gravity acts along +z.
//! The collective thrust acts along `-R e3`.

use nalgebra::{Matrix4, Vector4};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::se3::{so3_exp, Mat3, Vec3};

pub const STANDARD_GRAVITY: f64 = 9.81;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuadParams {
    pub mass: f64,
    /// Diagonal of the inertia matrix (Jxx, Jyy, Jzz).
    pub inertia: [f64; 3],
    pub arm_length: f64,
    /// Thrust-to-torque coefficient.
    pub c_tau_f: f64,
    pub gravity: f64,
}

impl Default for QuadParams {
    /// F450-class platform.
    fn default() -> Self {
        QuadParams {
            mass: 1.0,
            inertia: [0.01466, 0.01466, 0.02848],
            arm_length: 0.225,
            c_tau_f: 0.009012,
            gravity: STANDARD_GRAVITY,
        }
    }
}

impl QuadParams {
    pub fn validate(&self) -> Result<()> {
        let all =
            [self.mass, self.inertia[0], self.inertia[1], self.inertia[2], self.arm_length, self.c_tau_f, self.gravity];
        if all.iter().all(|v| v.is_finite() && *v > 0.0) {
            Ok(())
        } else {
            Err(Error::Config("quadrotor parameters must be strictly positive".into()))
        }
    }

    pub fn inertia_vec(&self) -> Vec3 {
        Vec3::from(self.inertia)
    }

    /// `J⁻¹ (M - Ω × JΩ)`.
    pub fn angular_acceleration(&self, omega: &Vec3, moment: &Vec3) -> Vec3 {
        let j = self.inertia_vec();
        let gyro = omega.cross(&omega.component_mul(&j));
        (moment - gyro).component_div(&j)
    }

    /// `g e3 - f R e3 / m`.
    pub fn linear_acceleration(&self, rotation: &Mat3, collective: f64) -> Vec3 {
        Vec3::new(0.0, 0.0, self.gravity) - rotation.column(2) * (collective / self.mass)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadState {
    pub x: Vec3,
    pub v: Vec3,
    /// Body to inertial rotation.
    pub r: Mat3,
    /// Body angular velocity.
    pub omega: Vec3,
}

impl QuadState {
    pub fn at_rest(x: Vec3) -> Self {
        QuadState { x, v: Vec3::zeros(), r: Mat3::identity(), omega: Vec3::zeros() }
    }

    pub fn is_finite(&self) -> bool {
        self.x.iter().chain(self.v.iter()).chain(self.r.iter()).chain(self.omega.iter()).all(|c| c.is_finite())
    }
}

/// Collective thrust and body moment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Wrench {
    pub thrust: f64,
    pub moment: Vec3,
}

impl Wrench {
    pub fn new(thrust: f64, moment: Vec3) -> Self {
        Wrench { thrust, moment }
    }

    pub fn as_vector(&self) -> Vector4<f64> {
        Vector4::new(self.thrust, self.moment.x, self.moment.y, self.moment.z)
    }

    pub fn from_vector(w: &Vector4<f64>) -> Self {
        Wrench { thrust: w[0], moment: Vec3::new(w[1], w[2], w[3]) }
    }
}

/// Per-motor thrusts in newtons.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotorThrusts(pub Vector4<f64>);

impl MotorThrusts {
    pub fn zeros() -> Self {
        MotorThrusts(Vector4::zeros())
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|f| f.is_finite())
    }
}

/// Per-motor efficiency factors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EfficiencyVector(pub Vector4<f64>);

impl EfficiencyVector {
    pub fn new(etas: [f64; 4]) -> Self {
        EfficiencyVector(Vector4::from(etas))
    }

    pub fn uniform(eta: f64) -> Self {
        EfficiencyVector(Vector4::repeat(eta))
    }

    pub fn as_array(&self) -> [f64; 4] {
        self.0.into()
    }
}

/// Thrust allocation matrix together with its inverse.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Allocation {
    pub matrix: Matrix4<f64>,
    pub inverse: Matrix4<f64>,
}

impl Allocation {
    pub fn new(params: &QuadParams) -> Self {
        let matrix = allocation_matrix(params);
        // The rows are mutually orthogonal, so Λ⁻¹ = Λᵀ diag(1 / |row|²).
        let row_norms = Vector4::from_fn(|i, _| 1.0 / matrix.row(i).norm_squared());
        let inverse = matrix.transpose() * Matrix4::from_diagonal(&row_norms);
        Allocation { matrix, inverse }
    }
}

/// Maps motor thrusts `[f1..f4]` to `[f_c, M1, M2, M3]`.
pub fn allocation_matrix(params: &QuadParams) -> Matrix4<f64> {
    let d = params.arm_length;
    let c = params.c_tau_f;
    Matrix4::new(
        1.0, 1.0, 1.0, 1.0, //
        -d, d, d, -d, //
        d, d, -d, -d, //
        -c, c, -c, c,
    )
}

pub fn thrusts_from_wrench(cmd: &Wrench, alloc: &Allocation) -> MotorThrusts {
    MotorThrusts(alloc.inverse * cmd.as_vector())
}

/// Wrench actually delivered by motors running at efficiency `s`.
pub fn apply_efficiency(f: &MotorThrusts, s: &EfficiencyVector, alloc: &Allocation) -> Wrench {
    Wrench::from_vector(&(alloc.matrix * f.0.component_mul(&s.0)))
}

/// Multiplicative log-normal thrust noise, `f_i exp(ε_i)` with `ε_i ~ N(0, σ)`.
///
/// Exactly four standard normals are drawn per call, whatever `sigma`, so
/// random streams stay aligned across noise levels. Normals come from
/// `rand_distr::Normal`, i.e. the ziggurat transform of the generator's
/// uniform stream.
pub fn perturb_thrusts<R: Rng + ?Sized>(f: &MotorThrusts, sigma: f64, rng: &mut R) -> MotorThrusts {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let eps = Vector4::from_fn(|_, _| normal.sample(rng));
    if sigma == 0.0 {
        return *f;
    }
    MotorThrusts(f.0.zip_map(&eps, |fi, e| fi * (sigma * e).exp()))
}

/// Clamps each motor to `[f_min, f_max]` and reports which ones saturated.
pub fn clip_thrusts(f: &MotorThrusts, f_min: f64, f_max: f64) -> (MotorThrusts, [bool; 4]) {
    debug_assert!(f_min <= f_max);
    let mut clipped = [false; 4];
    let out = Vector4::from_fn(|i, _| {
        let fi = f.0[i];
        let c = fi.clamp(f_min, f_max);
        clipped[i] = c != fi;
        c
    });
    (MotorThrusts(out), clipped)
}

/// One explicit step of the rigid-body equations under the delivered wrench.
///
/// Velocity, position and body rate use forward Euler with the gyroscopic
/// term at the current rate. Attitude uses the exact exponential of the
/// propagated rate, `R⁺ = R exp(hat(Ω⁺) dt)`.
pub fn step(state: &QuadState, actual: &Wrench, params: &QuadParams, dt: f64) -> Result<QuadState> {
    if !(dt > 0.0) {
        return Err(Error::NonPositiveDt(dt));
    }
    let acc = params.linear_acceleration(&state.r, actual.thrust);
    let omega = state.omega + params.angular_acceleration(&state.omega, &actual.moment) * dt;
    Ok(QuadState {
        x: state.x + state.v * dt + acc * (0.5 * dt * dt),
        v: state.v + acc * dt,
        r: state.r * so3_exp(&(omega * dt)),
        omega,
    })
}
