//! Geometric tracking controller on SE(3) and the benchmark reference.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::dynamics::{QuadParams, QuadState, Wrench};
use crate::error::{Error, Result};
use crate::se3::{hat, orthonormality_error, vee, Mat3, Vec3};

const ROTATION_TOL: f64 = 1e-6;
const DEGENERATE_NORM: f64 = 1e-9;

/// Diagonal feedback gains.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Gains {
    pub k_x: [f64; 3],
    pub k_v: [f64; 3],
    pub k_r: [f64; 3],
    pub k_omega: [f64; 3],
}

impl Default for Gains {
    fn default() -> Self {
        Gains { k_x: [9.0, 9.0, 12.0], k_v: [7.0, 7.0, 12.0], k_r: [10.0, 10.0, 10.0], k_omega: [2.0, 2.0, 2.0] }
    }
}

impl Gains {
    pub fn validate(&self) -> Result<()> {
        let ok = [self.k_x, self.k_v, self.k_r, self.k_omega].iter().flatten().all(|k| k.is_finite() && *k > 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::Config("controller gains must be strictly positive".into()))
        }
    }
}

/// Reference supplied by a trajectory generator. `a_d` is analytic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DesiredState {
    pub x_d: Vec3,
    pub v_d: Vec3,
    pub a_d: Vec3,
    /// Desired heading of the body x-axis (unit).
    pub b1_d: Vec3,
    pub omega_d: Vec3,
    pub domega_d: Vec3,
}

impl DesiredState {
    pub fn hover(x_d: Vec3) -> Self {
        DesiredState {
            x_d,
            v_d: Vec3::zeros(),
            a_d: Vec3::zeros(),
            b1_d: Vec3::x(),
            omega_d: Vec3::zeros(),
            domega_d: Vec3::zeros(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackingErrors {
    pub e_x: Vec3,
    pub e_v: Vec3,
    pub e_r: Vec3,
    pub e_omega: Vec3,
}

fn check_rotation(r: &Mat3) -> Result<()> {
    let err = orthonormality_error(r);
    if err > ROTATION_TOL {
        return Err(Error::NotRotation(err));
    }
    Ok(())
}

fn diag(k: &[f64; 3]) -> Mat3 {
    Mat3::from_diagonal(&Vec3::from(*k))
}

pub fn tracking_errors(state: &QuadState, des: &DesiredState, r_d: &Mat3) -> Result<TrackingErrors> {
    check_rotation(&state.r)?;
    check_rotation(r_d)?;
    let r = &state.r;
    Ok(TrackingErrors {
        e_x: state.x - des.x_d,
        e_v: state.v - des.v_d,
        e_r: vee(&(r_d.transpose() * r - r.transpose() * r_d))? * 0.5,
        e_omega: state.omega - r.transpose() * r_d * des.omega_d,
    })
}

/// `-k_x e_x - k_v e_v - m g e3 + m a_d`; the desired thrust axis is its
/// negated direction.
fn thrust_vector(e_x: &Vec3, e_v: &Vec3, a_d: &Vec3, params: &QuadParams, gains: &Gains) -> Vec3 {
    -diag(&gains.k_x) * e_x - diag(&gains.k_v) * e_v - Vec3::new(0.0, 0.0, params.mass * params.gravity)
        + a_d * params.mass
}

/// Desired attitude with columns `[b2d × b3d, b2d, b3d]`.
pub fn desired_attitude(
    e_x: &Vec3,
    e_v: &Vec3,
    a_d: &Vec3,
    b1_d: &Vec3,
    params: &QuadParams,
    gains: &Gains,
) -> Result<Mat3> {
    let a = thrust_vector(e_x, e_v, a_d, params, gains);
    let norm = a.norm();
    if !(norm >= DEGENERATE_NORM) {
        return Err(Error::DegenerateThrust);
    }
    let b3 = -a / norm;
    let cross = b3.cross(b1_d);
    let cross_norm = cross.norm();
    if !(cross_norm >= DEGENERATE_NORM) {
        return Err(Error::DegenerateHeading);
    }
    let b2 = cross / cross_norm;
    Ok(Mat3::from_columns(&[b2.cross(&b3), b2, b3]))
}

/// Collective thrust and moment command.
pub fn control_wrench(state: &QuadState, des: &DesiredState, params: &QuadParams, gains: &Gains) -> Result<Wrench> {
    let e_x = state.x - des.x_d;
    let e_v = state.v - des.v_d;
    let r_d = desired_attitude(&e_x, &e_v, &des.a_d, &des.b1_d, params, gains)?;
    let err = tracking_errors(state, des, &r_d)?;

    let r = &state.r;
    let thrust = -thrust_vector(&err.e_x, &err.e_v, &des.a_d, params, gains).dot(&r.column(2));

    let j = Mat3::from_diagonal(&params.inertia_vec());
    let rt_rd = r.transpose() * r_d;
    let omega = &state.omega;
    let moment = -diag(&gains.k_r) * err.e_r - diag(&gains.k_omega) * err.e_omega + omega.cross(&(j * omega))
        - j * (hat(omega) * rt_rd * des.omega_d - rt_rd * des.domega_d);
    Ok(Wrench::new(thrust, moment))
}

/// Benchmark reference: a 3 m circle flown every 10 s at 1 m altitude, with
/// the heading turning at half the orbital rate.
pub fn circle_trajectory(t: f64) -> DesiredState {
    let w = 0.2 * PI;
    let (s, c) = (w * t).sin_cos();
    let (sh, ch) = (0.1 * PI * t).sin_cos();
    DesiredState {
        x_d: Vec3::new(3.0 * c, 3.0 * s, -1.0),
        v_d: Vec3::new(-3.0 * w * s, 3.0 * w * c, 0.0),
        a_d: Vec3::new(-3.0 * w * w * c, -3.0 * w * w * s, 0.0),
        b1_d: Vec3::new(ch, sh, 0.0),
        omega_d: Vec3::zeros(),
        domega_d: Vec3::zeros(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trajectory {
    Circle,
    Hover,
}

impl Trajectory {
    pub fn desired(&self, t: f64) -> DesiredState {
        match self {
            Trajectory::Circle => circle_trajectory(t),
            Trajectory::Hover => DesiredState::hover(Vec3::new(0.0, 0.0, -1.0)),
        }
    }
}
