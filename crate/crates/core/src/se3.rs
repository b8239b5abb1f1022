//! Rotation-group helpers: the hat/vee isomorphism and the exponential map.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

const SKEW_TOL: f64 = 1e-9;
const SERIES_THRESHOLD: f64 = 1e-6;

/// Skew-symmetric matrix such that `hat(v) * w == v.cross(&w)`.
pub fn hat(v: &Vec3) -> Mat3 {
    Mat3::new(
        0.0, -v.z, v.y, //
        v.z, 0.0, -v.x, //
        -v.y, v.x, 0.0,
    )
}

/// Inverse of [`hat`]. Rejects matrices whose symmetric part exceeds 1e-9.
pub fn vee(m: &Mat3) -> Result<Vec3> {
    let asym = (m + m.transpose()).amax();
    if asym > SKEW_TOL {
        return Err(Error::NotSkew(asym));
    }
    Ok(Vec3::new(0.5 * (m[(2, 1)] - m[(1, 2)]), 0.5 * (m[(0, 2)] - m[(2, 0)]), 0.5 * (m[(1, 0)] - m[(0, 1)])))
}

/// Rodrigues form of `exp(hat(w))`.
pub fn so3_exp(w: &Vec3) -> Mat3 {
    let theta2 = w.norm_squared();
    let theta = theta2.sqrt();
    let (a, b) = if theta < SERIES_THRESHOLD {
        (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
    } else {
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    let k = hat(w);
    Mat3::identity() + k * a + k * k * b
}

/// First-order truncation `I + hat(w) dt` used by the estimator's predictor.
pub fn so3_exp_first_order(w: &Vec3, dt: f64) -> Mat3 {
    Mat3::identity() + hat(w) * dt
}

/// Largest entry of `RᵀR - I`.
pub fn orthonormality_error(r: &Mat3) -> f64 {
    (r.transpose() * r - Mat3::identity()).amax()
}
