//! Controlled simulation: landmark world, groundtruth trajectories,
//! odometry and AR(1) time-correlated landmark measurements.

pub mod config;
pub mod generate;
pub mod world;

pub use config::{OdometryNoise, SimConfig, TrajectoryConfig};
pub use generate::{
    build_sequence, dead_reckon, generate_trajectory, run_trials, simulate_measurements, simulate_sequence,
    simulate_trial, stationary_covariance, MeasurementSample, SequenceKind, TrajectorySample, Trial,
};
pub use world::{visible_landmarks, World, WorldConfig};
