//! SE(2) rigid transforms and their se(2) tangent vectors.
//!
//! Conventions used everywhere in the crate:
//!
//! * A twist is ordered `(ρ₁, ρ₂, φ)`: two translational components followed
//!   by the rotation angle.
//! * `ξ^∧ = [[φ·J, ρ], [0, 0]]` with `J = [[0, -1], [1, 0]]`, and
//!   `exp(ξ^∧) = [[R(φ), V(φ)·ρ], [0, 1]]` (right-handed rotation).
//! * A state pose `T_k` maps inertial coordinates into the robot frame at
//!   time `k` (`p_robot = T_k · p_inertial`). Perturbations are applied on
//!   the left, `T ← exp(δ^∧)·T`, so `δ` is expressed in the robot frame.
//!
//! With these conventions a robot driving forward at `v` and turning at `ω`
//! for `Δt` seconds satisfies `T_k = exp(Δt·[-v, 0, -ω]^∧)·T_{k-1}`.

use std::f64::consts::PI;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};

use crate::error::{Error, Result};

/// Below this rotation magnitude the trigonometric coefficients of `exp`,
/// `log` and the Jacobians are evaluated by Taylor series.
pub const SMALL_ANGLE: f64 = 1e-4;

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle(theta: f64) -> f64 {
    let r = theta.rem_euclid(2.0 * PI);
    if r > PI {
        r - 2.0 * PI
    } else {
        r
    }
}

/// `J = [[0, -1], [1, 0]]`, the generator of 2D rotations.
fn rot_generator() -> Matrix2<f64> {
    Matrix2::new(0.0, -1.0, 1.0, 0.0)
}

/// Coefficients `(sinφ/φ, (1-cosφ)/φ, (φ-sinφ)/φ², (1-cosφ)/φ²)`.
fn trig_coeffs(phi: f64) -> (f64, f64, f64, f64) {
    if phi.abs() < SMALL_ANGLE {
        let p2 = phi * phi;
        let p4 = p2 * p2;
        (
            1.0 - p2 / 6.0 + p4 / 120.0,
            phi * (0.5 - p2 / 24.0 + p4 / 720.0),
            phi * (1.0 / 6.0 - p2 / 120.0 + p4 / 5040.0),
            0.5 - p2 / 24.0 + p4 / 720.0,
        )
    } else {
        let (s, c) = phi.sin_cos();
        (s / phi, (1.0 - c) / phi, (phi - s) / (phi * phi), (1.0 - c) / (phi * phi))
    }
}

/// `V(φ) = (sinφ/φ)·I + ((1-cosφ)/φ)·J`.
fn v_matrix(phi: f64) -> Matrix2<f64> {
    let (a, b, _, _) = trig_coeffs(phi);
    Matrix2::identity() * a + rot_generator() * b
}

fn v_matrix_inv(phi: f64) -> Matrix2<f64> {
    let (a, b, _, _) = trig_coeffs(phi);
    (Matrix2::identity() * a - rot_generator() * b) / (a * a + b * b)
}

/// An element of se(2), ordered `(ρ₁, ρ₂, φ)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Twist2(pub Vector3<f64>);

impl Twist2 {
    pub fn new(rho1: f64, rho2: f64, phi: f64) -> Self {
        Twist2(Vector3::new(rho1, rho2, phi))
    }

    pub fn zero() -> Self {
        Twist2(Vector3::zeros())
    }

    pub fn from_vector(v: Vector3<f64>) -> Self {
        Twist2(v)
    }

    pub fn vector(&self) -> Vector3<f64> {
        self.0
    }

    pub fn rho(&self) -> Vector2<f64> {
        Vector2::new(self.0[0], self.0[1])
    }

    pub fn phi(&self) -> f64 {
        self.0[2]
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn norm(&self) -> f64 {
        self.0.norm()
    }

    /// The 3×3 matrix `ξ^∧`.
    pub fn hat(&self) -> Matrix3<f64> {
        let phi = self.phi();
        Matrix3::new(0.0, -phi, self.0[0], phi, 0.0, self.0[1], 0.0, 0.0, 0.0)
    }

    /// Closed-form exponential map. Inputs are assumed finite; use
    /// [`exp_se2`] for a checked version.
    pub fn exp(&self) -> Pose2 {
        let phi = self.phi();
        Pose2::new(phi, v_matrix(phi) * self.rho())
    }

    /// Left Jacobian `J_l(ξ)`: `exp((ξ + δ)^∧) ≈ exp((J_l δ)^∧)·exp(ξ^∧)`.
    pub fn left_jacobian(&self) -> Matrix3<f64> {
        let phi = self.phi();
        let (a, b, c, d) = trig_coeffs(phi);
        let (r1, r2) = (self.0[0], self.0[1]);
        Matrix3::new(
            a,
            -b,
            c * r1 + d * r2,
            b,
            a,
            -d * r1 + c * r2,
            0.0,
            0.0,
            1.0,
        )
    }

    /// Inverse of [`Twist2::left_jacobian`], in closed form.
    pub fn left_jacobian_inv(&self) -> Matrix3<f64> {
        let phi = self.phi();
        let (_, _, c, d) = trig_coeffs(phi);
        let (r1, r2) = (self.0[0], self.0[1]);
        let vinv = v_matrix_inv(phi);
        let w = Vector2::new(c * r1 + d * r2, -d * r1 + c * r2);
        let top = -(vinv * w);
        Matrix3::new(
            vinv[(0, 0)],
            vinv[(0, 1)],
            top[0],
            vinv[(1, 0)],
            vinv[(1, 1)],
            top[1],
            0.0,
            0.0,
            1.0,
        )
    }

    /// Right Jacobian inverse, `J_r⁻¹(ξ) = J_l⁻¹(-ξ)`.
    pub fn right_jacobian_inv(&self) -> Matrix3<f64> {
        (-*self).left_jacobian_inv()
    }
}

impl Add for Twist2 {
    type Output = Twist2;
    fn add(self, rhs: Twist2) -> Twist2 {
        Twist2(self.0 + rhs.0)
    }
}

impl Sub for Twist2 {
    type Output = Twist2;
    fn sub(self, rhs: Twist2) -> Twist2 {
        Twist2(self.0 - rhs.0)
    }
}

impl Neg for Twist2 {
    type Output = Twist2;
    fn neg(self) -> Twist2 {
        Twist2(-self.0)
    }
}

impl Mul<f64> for Twist2 {
    type Output = Twist2;
    fn mul(self, rhs: f64) -> Twist2 {
        Twist2(self.0 * rhs)
    }
}

/// A rigid transform in SE(2), stored as a wrapped angle plus translation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose2 {
    angle: f64,
    translation: Vector2<f64>,
}

impl Default for Pose2 {
    fn default() -> Self {
        Self::identity()
    }
}

impl fmt::Display for Pose2 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "Pose2(t=[{:.6}, {:.6}], θ={:.6})",
            self.translation[0], self.translation[1], self.angle
        )
    }
}

impl Pose2 {
    pub fn identity() -> Self {
        Pose2 {
            angle: 0.0,
            translation: Vector2::zeros(),
        }
    }

    /// Builds a pose from a rotation angle (wrapped to `(-π, π]`) and a
    /// translation.
    pub fn new(angle: f64, translation: Vector2<f64>) -> Self {
        Pose2 {
            angle: wrap_angle(angle),
            translation,
        }
    }

    pub fn from_parts(x: f64, y: f64, angle: f64) -> Self {
        Self::new(angle, Vector2::new(x, y))
    }

    /// Builds the inertial-to-robot transform for a robot located at
    /// `(x, y)` with heading `heading` in the inertial frame.
    pub fn from_world_pose(x: f64, y: f64, heading: f64) -> Self {
        Self::from_parts(x, y, heading).inverse()
    }

    /// Inverse of [`Pose2::from_world_pose`]: robot position and heading in
    /// the inertial frame.
    pub fn world_pose(&self) -> (f64, f64, f64) {
        let inv = self.inverse();
        (inv.translation[0], inv.translation[1], inv.angle)
    }

    /// Builds a pose from a homogeneous matrix. The rotation block is
    /// projected onto SO(2) through its angle.
    pub fn from_matrix(m: &Matrix3<f64>) -> Result<Self> {
        if !m.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite pose matrix".into()));
        }
        let angle = (m[(1, 0)] - m[(0, 1)]).atan2(m[(0, 0)] + m[(1, 1)]);
        Ok(Self::new(angle, Vector2::new(m[(0, 2)], m[(1, 2)])))
    }

    pub fn angle(&self) -> f64 {
        self.angle
    }

    pub fn translation(&self) -> Vector2<f64> {
        self.translation
    }

    pub fn rotation(&self) -> Matrix2<f64> {
        let (s, c) = self.angle.sin_cos();
        Matrix2::new(c, -s, s, c)
    }

    pub fn to_matrix(&self) -> Matrix3<f64> {
        let r = self.rotation();
        let t = self.translation;
        Matrix3::new(r[(0, 0)], r[(0, 1)], t[0], r[(1, 0)], r[(1, 1)], t[1], 0.0, 0.0, 1.0)
    }

    pub fn is_finite(&self) -> bool {
        self.angle.is_finite() && self.translation.iter().all(|v| v.is_finite())
    }

    pub fn compose(&self, other: &Pose2) -> Pose2 {
        Pose2::new(
            self.angle + other.angle,
            self.rotation() * other.translation + self.translation,
        )
    }

    pub fn inverse(&self) -> Pose2 {
        let rt = self.rotation().transpose();
        Pose2::new(-self.angle, -(rt * self.translation))
    }

    pub fn transform_point(&self, p: &Vector2<f64>) -> Vector2<f64> {
        self.rotation() * p + self.translation
    }

    /// `Ad_T`, with `T·exp(ξ^∧)·T⁻¹ = exp((Ad_T ξ)^∧)`.
    pub fn adjoint(&self) -> Matrix3<f64> {
        let r = self.rotation();
        let t = self.translation;
        Matrix3::new(r[(0, 0)], r[(0, 1)], t[1], r[(1, 0)], r[(1, 1)], -t[0], 0.0, 0.0, 1.0)
    }

    /// Logarithm map. The rotation component lies in `(-π, π]`.
    pub fn log(&self) -> Twist2 {
        let phi = self.angle;
        let rho = v_matrix_inv(phi) * self.translation;
        Twist2::new(rho[0], rho[1], phi)
    }
}

impl Mul for Pose2 {
    type Output = Pose2;
    fn mul(self, rhs: Pose2) -> Pose2 {
        self.compose(&rhs)
    }
}

impl Mul<&Pose2> for &Pose2 {
    type Output = Pose2;
    fn mul(self, rhs: &Pose2) -> Pose2 {
        self.compose(rhs)
    }
}

/// Checked exponential map.
pub fn exp_se2(xi: &Twist2) -> Result<Pose2> {
    if !xi.is_finite() {
        return Err(Error::InvalidArgument(format!("non-finite twist {:?}", xi.0)));
    }
    Ok(xi.exp())
}

/// Checked logarithm map.
pub fn log_se2(t: &Pose2) -> Result<Twist2> {
    if !t.is_finite() {
        return Err(Error::InvalidArgument(format!("non-finite pose {t}")));
    }
    Ok(t.log())
}
