use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::banded::SymBandMatrix;
use crate::se2::Pose2;

/// Posterior of a batch estimate.
///
/// Marginal covariances live in the tangent space of the left perturbation
/// `T ← exp(δ^∧)·T`.
#[derive(Clone, Debug)]
pub struct EstimationResult {
    pub trajectory: Vec<Pose2>,
    /// Posterior information `Â` from the final linearization.
    pub information: SymBandMatrix,
    pub marginals: Vec<Matrix3<f64>>,
    /// Objective before the first step and after every accepted step.
    pub cost_trace: Vec<f64>,
    pub iterations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub k: usize,
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimationResultJson {
    pub trajectory: Vec<TrajectoryPoint>,
    /// Row-major 3×3 marginal covariances.
    pub marginal_covariances: Vec<[f64; 9]>,
    pub cost_trace: Vec<f64>,
    pub iterations: usize,
}

impl EstimationResult {
    pub fn final_cost(&self) -> f64 {
        *self.cost_trace.last().unwrap_or(&f64::NAN)
    }

    /// Trajectory as world-frame `(x, y, θ)` with 1-based `k`.
    pub fn to_json(&self) -> EstimationResultJson {
        EstimationResultJson {
            trajectory: self
                .trajectory
                .iter()
                .enumerate()
                .map(|(k, t)| {
                    let (x, y, theta) = t.world_pose();
                    TrajectoryPoint { k: k + 1, x, y, theta }
                })
                .collect(),
            marginal_covariances: self
                .marginals
                .iter()
                .map(|p| {
                    let mut out = [0.0; 9];
                    for r in 0..3 {
                        for c in 0..3 {
                            out[3 * r + c] = p[(r, c)];
                        }
                    }
                    out
                })
                .collect(),
            cost_trace: self.cost_trace.clone(),
            iterations: self.iterations,
        }
    }
}
