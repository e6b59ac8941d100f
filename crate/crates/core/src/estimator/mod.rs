//! Batch MAP trajectory estimation with correlated measurement and motion
//! noise.

pub mod factors;
pub mod problem;
pub mod result;
pub mod solver;

pub use factors::{
    measurement_error, measurement_error_jacobian, motion_error, motion_error_jacobians, point_error_jacobian,
    propagate, Odometry,
};
pub use problem::{EstimationProblem, Measurements, PointObservation, SolverConfig};
pub use result::{EstimationResult, EstimationResultJson, TrajectoryPoint};
pub use solver::{gauss_newton, linearize, objective, retract, NormalEquations};
