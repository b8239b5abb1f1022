//! One-step trajectory residuals and their analytic Jacobians with respect to
//! the motor efficiencies.
//!
//! Every residual is `measured - predicted`, where the prediction starts from
//! the measured state at the beginning of the segment and applies the wrench
//! `Λ diag(s) f_cmd`. All four blocks are affine in `s`, so the Jacobian does
//! not depend on `s`.

use nalgebra::{DMatrix, DVector, SMatrix, SVector};

use crate::dynamics::{apply_efficiency, Allocation, EfficiencyVector, MotorThrusts, QuadParams, QuadState};
use crate::error::{Error, Result};
use crate::se3::{so3_exp_first_order, Mat3, Vec3};

pub const RESIDUALS_PER_SEGMENT: usize = 10;

/// Measured transition over one control period.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowSegment {
    /// Start time of the segment.
    pub t: f64,
    pub state_t: QuadState,
    pub state_t1: QuadState,
    /// Commanded motor thrusts, before noise and clipping.
    pub f_cmd: MotorThrusts,
    pub dt: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub v: Vec3,
    pub x: Vec3,
    pub omega: Vec3,
    /// First-order incremental rotation `I + hat(Ω̂) dt`.
    pub delta_r: Mat3,
}

/// Ten residual components: velocity, position, body rate, attitude.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentResidual {
    pub r_v: Vec3,
    pub r_x: Vec3,
    pub r_omega: Vec3,
    pub r_r: f64,
}

impl SegmentResidual {
    pub fn to_vector(&self) -> SVector<f64, RESIDUALS_PER_SEGMENT> {
        let mut out = SVector::<f64, RESIDUALS_PER_SEGMENT>::zeros();
        out.fixed_rows_mut::<3>(0).copy_from(&self.r_v);
        out.fixed_rows_mut::<3>(3).copy_from(&self.r_x);
        out.fixed_rows_mut::<3>(6).copy_from(&self.r_omega);
        out[9] = self.r_r;
        out
    }
}

/// Rows ordered as [`SegmentResidual::to_vector`], one column per motor.
pub type SegmentJacobian = SMatrix<f64, RESIDUALS_PER_SEGMENT, 4>;

/// Vehicle model shared by prediction, residual and Jacobian evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualModel {
    pub params: QuadParams,
    pub alloc: Allocation,
}

impl ResidualModel {
    pub fn new(params: QuadParams) -> Self {
        ResidualModel { params, alloc: Allocation::new(&params) }
    }

    pub fn predict_next(&self, seg: &WindowSegment, s: &EfficiencyVector) -> Prediction {
        let p = &self.params;
        let dt = seg.dt;
        let st = &seg.state_t;
        let wrench = apply_efficiency(&seg.f_cmd, s, &self.alloc);
        let acc = p.linear_acceleration(&st.r, wrench.thrust);
        let omega = st.omega + p.angular_acceleration(&st.omega, &wrench.moment) * dt;
        Prediction {
            v: st.v + acc * dt,
            x: st.x + st.v * dt + acc * (0.5 * dt * dt),
            omega,
            delta_r: so3_exp_first_order(&omega, dt),
        }
    }

    /// Residuals are evaluated as (measured increment) - (predicted increment)
    /// so the s-dependent part never cancels against the O(1) state values.
    /// The attitude term uses the identity
    /// `½ tr[I - δRᵀ(I + hat(Ω̂) dt)] = ½ (3 - tr δR) - ½ dt Ω̂ · c`
    /// with `c` the axial vector of `δR - δRᵀ`.
    pub fn segment_residual(&self, seg: &WindowSegment, s: &EfficiencyVector) -> SegmentResidual {
        let p = &self.params;
        let dt = seg.dt;
        let (st, meas) = (&seg.state_t, &seg.state_t1);
        let wrench = apply_efficiency(&seg.f_cmd, s, &self.alloc);
        let acc = p.linear_acceleration(&st.r, wrench.thrust);
        let alpha = p.angular_acceleration(&st.omega, &wrench.moment);
        let omega_hat = st.omega + alpha * dt;

        let delta_r = st.r.transpose() * meas.r;
        let c = axial(&delta_r);
        SegmentResidual {
            r_v: (meas.v - st.v) - acc * dt,
            r_x: (meas.x - st.x - st.v * dt) - acc * (0.5 * dt * dt),
            r_omega: (meas.omega - st.omega) - alpha * dt,
            r_r: 0.5 * (3.0 - delta_r.trace()) - 0.5 * dt * omega_hat.dot(&c),
        }
    }

    /// Analytic `∂r/∂s` for one segment.
    pub fn segment_jacobian(&self, seg: &WindowSegment) -> SegmentJacobian {
        let p = &self.params;
        let dt = seg.dt;
        let f = &seg.f_cmd.0;
        let b3 = seg.state_t.r.column(2);
        let j = p.inertia_vec();

        // Measured relative rotation enters the attitude row through the
        // antisymmetric part of δR: tr(δRᵀ hat(w)) = w · c.
        let c = axial(&(seg.state_t.r.transpose() * seg.state_t1.r));

        let mut jac = SegmentJacobian::zeros();
        for i in 0..4 {
            // body-rate sensitivity of the propagated rate to η_i, per unit dt
            let dm = Vec3::new(self.alloc.matrix[(1, i)], self.alloc.matrix[(2, i)], self.alloc.matrix[(3, i)]) * f[i];
            let domega = dm.component_div(&j);

            let dv = b3 * (f[i] * dt / p.mass);
            jac.fixed_view_mut::<3, 1>(0, i).copy_from(&dv);
            jac.fixed_view_mut::<3, 1>(3, i).copy_from(&(dv * (0.5 * dt)));
            jac.fixed_view_mut::<3, 1>(6, i).copy_from(&(-domega * dt));
            jac[(9, i)] = -0.5 * dt * dt * domega.dot(&c);
        }
        jac
    }
}

/// `(m32 - m23, m13 - m31, m21 - m12)`, i.e. twice the vee of the skew part.
fn axial(m: &Mat3) -> Vec3 {
    Vec3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)])
}

/// Stacked window residual and Jacobian, both scaled by `1/√n`.
pub fn stack_window(
    segments: &[WindowSegment],
    s: &EfficiencyVector,
    model: &ResidualModel,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if segments.is_empty() {
        return Err(Error::EmptyWindow);
    }
    let n = segments.len();
    let scale = 1.0 / (n as f64).sqrt();
    let mut r = DVector::zeros(RESIDUALS_PER_SEGMENT * n);
    let mut jac = DMatrix::zeros(RESIDUALS_PER_SEGMENT * n, 4);
    for (k, seg) in segments.iter().enumerate() {
        let row = k * RESIDUALS_PER_SEGMENT;
        r.rows_mut(row, RESIDUALS_PER_SEGMENT).copy_from(&(model.segment_residual(seg, s).to_vector() * scale));
        jac.view_mut((row, 0), (RESIDUALS_PER_SEGMENT, 4)).copy_from(&(model.segment_jacobian(seg) * scale));
    }
    Ok((r, jac))
}

/// `s` with `h` added to one motor.
pub fn perturbed(s: &EfficiencyVector, motor: usize, h: f64) -> EfficiencyVector {
    let mut out = s.0;
    out[motor] += h;
    EfficiencyVector(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{thrusts_from_wrench, Wrench};
    use crate::se3::{hat, so3_exp};
    use approx::assert_relative_eq;
    use nalgebra::Vector4;
    use proptest::prelude::*;

    fn model() -> ResidualModel {
        ResidualModel::new(QuadParams::default())
    }

    fn hover_segment(dt: f64) -> WindowSegment {
        let m = model();
        let s0 = QuadState::at_rest(Vec3::new(0.0, 0.0, -1.0));
        let f = thrusts_from_wrench(&Wrench::new(9.81, Vec3::zeros()), &m.alloc);
        WindowSegment { t: 0.0, state_t: s0, state_t1: s0, f_cmd: f, dt }
    }

    /// Next state generated with the predictor's own scheme.
    fn consistent_segment(state: QuadState, f: MotorThrusts, s: &EfficiencyVector, dt: f64) -> WindowSegment {
        let m = model();
        let mut seg = WindowSegment { t: 0.0, state_t: state, state_t1: state, f_cmd: f, dt };
        let p = m.predict_next(&seg, s);
        seg.state_t1 = QuadState { x: p.x, v: p.v, omega: p.omega, r: state.r * p.delta_r };
        seg
    }

    #[test]
    fn consistent_measurements_have_zero_residual() {
        let s = EfficiencyVector::new([0.9, 0.8, 0.95, 1.0]);
        let state = QuadState {
            x: Vec3::new(1.0, 2.0, -1.0),
            v: Vec3::new(0.3, -0.2, 0.1),
            r: so3_exp(&Vec3::new(0.1, -0.2, 0.3)),
            omega: Vec3::zeros(),
        };
        let f = MotorThrusts(Vector4::new(2.1, 2.6, 2.4, 2.9));
        let seg = consistent_segment(state, f, &s, 0.004);
        let res = model().segment_residual(&seg, &s);
        assert!(res.r_v.amax() <= 1e-12);
        assert!(res.r_x.amax() <= 1e-12);
        assert!(res.r_omega.amax() <= 1e-12);
        // I + A with A skew is not orthonormal; the attitude term keeps its
        // -|Ω̂|² dt² floor even at the true efficiency
        let omega_hat = model().predict_next(&seg, &s).omega;
        assert_relative_eq!(res.r_r, -omega_hat.norm_squared() * 0.004 * 0.004, max_relative = 1e-9);
    }

    #[test]
    fn identity_rotation_residual_is_zero() {
        let seg = hover_segment(0.004);
        let r = model().segment_residual(&seg, &EfficiencyVector::uniform(1.0));
        assert_eq!(r.r_r, 0.0);
    }

    #[test]
    fn zero_command_gives_zero_jacobian() {
        let mut seg = hover_segment(0.004);
        seg.f_cmd = MotorThrusts::zeros();
        seg.state_t.omega = Vec3::new(0.4, -0.1, 0.3);
        assert_eq!(model().segment_jacobian(&seg), SegmentJacobian::zeros());
        let a = model().predict_next(&seg, &EfficiencyVector::uniform(0.2));
        let b = model().predict_next(&seg, &EfficiencyVector::uniform(0.9));
        assert_eq!(a, b);
    }

    #[test]
    fn collective_sensitivity() {
        let m = model();
        let seg = hover_segment(0.004);
        let s = EfficiencyVector::uniform(1.0);
        let fc = |s: &EfficiencyVector| apply_efficiency(&seg.f_cmd, s, &m.alloc).thrust;
        assert_relative_eq!(fc(&perturbed(&s, 0, 0.01)) - fc(&s), 0.01 * seg.f_cmd.0[0], epsilon = 1e-14);
    }

    #[test]
    fn under_estimated_motor_shows_in_vertical_velocity() {
        // truth 1, candidate 0.8 on motor 1: the model under-predicts thrust, so it
        // predicts more downward (+z) velocity than measured
        let m = model();
        let seg = hover_segment(0.004);
        let s = EfficiencyVector::new([0.8, 1.0, 1.0, 1.0]);
        let r = m.segment_residual(&seg, &s);
        assert_relative_eq!(r.r_v.z, -0.2 * seg.f_cmd.0[0] * seg.dt / 1.0, epsilon = 1e-15);
        // magnitude 0.2 f1 dt / m; the sign follows the down-positive thrust term
        assert_relative_eq!(r.r_v.z.abs(), 0.2 * 2.4525 * 0.004, epsilon = 1e-15);
    }

    #[test]
    fn level_hover_jacobian_structure() {
        let seg = hover_segment(0.004);
        let jac = model().segment_jacobian(&seg);
        let f = seg.f_cmd.0;
        for i in 0..4 {
            assert_eq!(jac[(0, i)], 0.0);
            assert_eq!(jac[(1, i)], 0.0);
            assert_relative_eq!(jac[(2, i)], 0.004 * f[i], epsilon = 1e-16);
        }
    }

    #[test]
    fn rate_rows_follow_allocation_signs() {
        let seg = hover_segment(0.004);
        let p = QuadParams::default();
        let jac = model().segment_jacobian(&seg);
        let f = seg.f_cmd.0;
        let (d, c, dt) = (p.arm_length, p.c_tau_f, 0.004);
        let [jx, jy, jz] = p.inertia;
        let expected = [
            [f[0] * d / jx, -f[1] * d / jx, -f[2] * d / jx, f[3] * d / jx],
            [-f[0] * d / jy, -f[1] * d / jy, f[2] * d / jy, f[3] * d / jy],
            [f[0] * c / jz, -f[1] * c / jz, f[2] * c / jz, -f[3] * c / jz],
        ];
        for (row, exp) in expected.iter().enumerate() {
            for i in 0..4 {
                assert_relative_eq!(jac[(6 + row, i)], dt * exp[i], epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn attitude_row_matches_expanded_form() {
        // compare against the entry-by-entry expansion written with δr_ij
        let m = model();
        let p = m.params;
        let st = QuadState {
            x: Vec3::zeros(),
            v: Vec3::zeros(),
            r: so3_exp(&Vec3::new(0.2, 0.1, -0.3)),
            omega: Vec3::new(0.5, -1.0, 0.8),
        };
        let mut seg = WindowSegment {
            t: 0.0,
            state_t: st,
            state_t1: st,
            f_cmd: MotorThrusts(Vector4::new(2.0, 2.7, 3.1, 1.9)),
            dt: 0.01,
        };
        seg.state_t1.r = st.r * so3_exp(&Vec3::new(0.03, -0.02, 0.05));
        let dr = st.r.transpose() * seg.state_t1.r;
        let d = |i: usize, j: usize| dr[(i - 1, j - 1)];
        let (a, b, c) = (d(2, 3) - d(3, 2), d(3, 1) - d(1, 3), d(1, 2) - d(2, 1));
        let f = seg.f_cmd.0;
        let (arm, ctf, dt) = (p.arm_length, p.c_tau_f, seg.dt);
        let [jx, jy, jz] = p.inertia;
        let k = dt * dt / 2.0;
        let expected = [
            k * (-a * f[0] * arm / jx + b * f[0] * arm / jy - c * f[0] * ctf / jz),
            k * (a * f[1] * arm / jx + b * f[1] * arm / jy + c * f[1] * ctf / jz),
            k * (a * f[2] * arm / jx - b * f[2] * arm / jy - c * f[2] * ctf / jz),
            k * (-a * f[3] * arm / jx - b * f[3] * arm / jy + c * f[3] * ctf / jz),
        ];
        let jac = m.segment_jacobian(&seg);
        for i in 0..4 {
            assert_relative_eq!(jac[(9, i)], expected[i], max_relative = 1e-12);
        }
    }

    #[test]
    fn stacking_scales_by_root_n() {
        let m = model();
        let mut seg = hover_segment(0.004);
        seg.state_t1.v.z += 0.01;
        let s = EfficiencyVector::uniform(0.9);
        let (r1, j1) = stack_window(&[seg], &s, &m).unwrap();
        assert_eq!(r1, DVector::from_column_slice(m.segment_residual(&seg, &s).to_vector().as_slice()));
        assert_eq!(j1, DMatrix::from_column_slice(10, 4, m.segment_jacobian(&seg).as_slice()));
        let (r4, _) = stack_window(&[seg; 4], &s, &m).unwrap();
        assert_relative_eq!(r4.norm(), r1.norm(), max_relative = 1e-14);
        assert!(matches!(stack_window(&[], &s, &m), Err(Error::EmptyWindow)));
    }

    #[test]
    fn translation_invariance_of_position_residual() {
        let m = model();
        let mut seg = hover_segment(0.004);
        seg.state_t1.x += Vec3::new(0.001, -0.002, 0.0005);
        let s = EfficiencyVector::uniform(0.9);
        let base = m.segment_residual(&seg, &s).r_x;
        let shift = Vec3::new(10.0, -3.0, 2.0);
        seg.state_t.x += shift;
        seg.state_t1.x += shift;
        assert!((m.segment_residual(&seg, &s).r_x - base).amax() < 1e-12);
    }

    #[test]
    fn rotation_floor_is_second_order() {
        // with the exact relative rotation, first-order prediction leaves a
        // residual of about -|ω|² dt² / 2
        let omega = Vec3::new(0.3, -0.2, 0.5);
        let dt = 0.004;
        let dr = so3_exp(&(omega * dt));
        let r_r = 0.5 * (Mat3::identity() - dr.transpose() * (Mat3::identity() + hat(&omega) * dt)).trace();
        assert_relative_eq!(r_r, -0.5 * omega.norm_squared() * dt * dt, max_relative = 1e-3);
    }

    fn random_segment() -> impl Strategy<Value = WindowSegment> {
        let v3 = |a: f64| proptest::array::uniform3(-a..a).prop_map(Vec3::from);
        (v3(2.0), v3(2.0), v3(2.0), v3(0.1), v3(0.1), v3(0.05), proptest::array::uniform4(0.0..6.0f64), 0.001..0.02f64)
            .prop_map(|(rv, om, dv, dom, dx, drv, f, dt)| {
                let st = QuadState { x: dx * 10.0, v: dv, r: so3_exp(&rv), omega: om };
                let st1 = QuadState {
                    x: st.x + st.v * dt + dx * dt,
                    v: st.v + dv * dt,
                    r: st.r * so3_exp(&((om + drv) * dt)),
                    omega: om + dom,
                };
                WindowSegment { t: 0.0, state_t: st, state_t1: st1, f_cmd: MotorThrusts(Vector4::from(f)), dt }
            })
    }

    fn efficiency() -> impl Strategy<Value = EfficiencyVector> {
        proptest::array::uniform4(0.05..1.0f64).prop_map(EfficiencyVector::new)
    }

    proptest! {
        #[test]
        fn residual_matches_literal_definition(seg in random_segment(), s in efficiency()) {
            let m = model();
            let pred = m.predict_next(&seg, &s);
            let meas = &seg.state_t1;
            let delta_r = seg.state_t.r.transpose() * meas.r;
            let literal = SegmentResidual {
                r_v: meas.v - pred.v,
                r_x: meas.x - pred.x,
                r_omega: meas.omega - pred.omega,
                r_r: 0.5 * (Mat3::identity() - delta_r.transpose() * pred.delta_r).trace(),
            };
            let got = m.segment_residual(&seg, &s).to_vector();
            prop_assert!((got - literal.to_vector()).amax() <= 1e-12);
        }

        #[test]
        fn residual_is_affine(seg in random_segment(), s1 in efficiency(), s2 in efficiency()) {
            let m = model();
            let jac = m.segment_jacobian(&seg);
            let lhs = m.segment_residual(&seg, &s1).to_vector() - m.segment_residual(&seg, &s2).to_vector();
            let rhs = jac * (s1.0 - s2.0);
            prop_assert!((lhs - rhs).amax() <= 1e-10);
        }
    }
}
