//! Error functions of the localization problem and their Jacobians with
//! respect to left perturbations `T ← exp(δ^∧)·T` of the states.

use nalgebra::{Matrix2x3, Matrix3, Vector2};
use serde::{Deserialize, Serialize};

use crate::se2::{Pose2, Twist2};

/// Wheel odometry: forward speed (m/s) and yaw rate (rad/s).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Odometry {
    pub v: f64,
    pub omega: f64,
}

impl Odometry {
    pub fn new(v: f64, omega: f64) -> Self {
        Odometry { v, omega }
    }

    /// `v_k = [−v, 0, −ω]`, the input twist of the motion model.
    pub fn input_twist(&self) -> Twist2 {
        Twist2::new(-self.v, 0.0, -self.omega)
    }

    /// `exp(Δt·v_k^∧)`, the robot-frame transform from `k−1` to `k`.
    pub fn increment(&self, dt: f64) -> Pose2 {
        (self.input_twist() * dt).exp()
    }
}

/// Propagates `T_k = exp(Δt·v_k^∧)·T_{k−1}`.
pub fn propagate(prev: &Pose2, odom: &Odometry, dt: f64) -> Pose2 {
    odom.increment(dt) * *prev
}

/// `e_{v,k} = ln(exp(Δt·v_k^∧)·T_{k−1}·T_k⁻¹)^∨`.
pub fn motion_error(prev: &Pose2, cur: &Pose2, odom: &Odometry, dt: f64) -> Twist2 {
    (odom.increment(dt) * *prev * cur.inverse()).log()
}

/// Motion error with its Jacobians `(∂e/∂δ_{k−1}, ∂e/∂δ_k)`.
pub fn motion_error_jacobians(prev: &Pose2, cur: &Pose2, odom: &Odometry, dt: f64) -> (Twist2, Matrix3<f64>, Matrix3<f64>) {
    let xi = odom.increment(dt);
    let e = (xi * *prev * cur.inverse()).log();
    let jl_inv = e.left_jacobian_inv();
    (e, jl_inv * xi.adjoint(), -e.right_jacobian_inv())
}

/// `e_{y,k} = ln(T_mk·T_k⁻¹)^∨`.
pub fn measurement_error(measured: &Pose2, state: &Pose2) -> Twist2 {
    (*measured * state.inverse()).log()
}

/// Measurement error with its Jacobian `∂e/∂δ_k = −J_r⁻¹(e)`.
pub fn measurement_error_jacobian(measured: &Pose2, state: &Pose2) -> (Twist2, Matrix3<f64>) {
    let e = measurement_error(measured, state);
    (e, -e.right_jacobian_inv())
}

/// Point-landmark error `y − T_k·ℓ` with its 2×3 Jacobian.
pub fn point_error_jacobian(observed: &Vector2<f64>, landmark: &Vector2<f64>, state: &Pose2) -> (Vector2<f64>, Matrix2x3<f64>) {
    let p = state.transform_point(landmark);
    let e = observed - p;
    // ∂(exp(δ)·p)/∂δ = [[1, 0, −p_y], [0, 1, p_x]]
    let j = Matrix2x3::new(-1.0, 0.0, p[1], 0.0, -1.0, -p[0]);
    (e, j)
}
