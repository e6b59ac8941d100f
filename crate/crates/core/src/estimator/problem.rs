use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::factors::{propagate, Odometry};
use crate::noise::BandedNoiseModel;
use crate::se2::Pose2;

/// A point-landmark observation: known map point and its body-frame
/// measurement.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PointObservation {
    pub landmark: Vector2<f64>,
    pub observed: Vector2<f64>,
}

/// Exteroceptive evidence on the states.
#[derive(Clone, Debug)]
pub enum Measurements {
    /// One pseudomeasurement per timestep (`None` for gaps) with a banded
    /// noise model of length `K` and block dimension 3.
    Poses {
        poses: Vec<Option<Pose2>>,
        noise: BandedNoiseModel,
    },
    /// Independent point-to-point errors sharing one 2×2 information matrix.
    Points {
        observations: Vec<Vec<PointObservation>>,
        information: Matrix2<f64>,
    },
}

impl Measurements {
    pub fn len(&self) -> usize {
        match self {
            Measurements::Poses { poses, .. } => poses.len(),
            Measurements::Points { observations, .. } => observations.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Whether timestep `k` carries any measurement.
    pub fn observed_at(&self, k: usize) -> bool {
        match self {
            Measurements::Poses { poses, .. } => poses.get(k).is_some_and(|p| p.is_some()),
            Measurements::Points { observations, .. } => observations.get(k).is_some_and(|o| !o.is_empty()),
        }
    }
}

/// Convergence and gauge settings for Gauss-Newton.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub max_iterations: usize,
    pub relative_cost_tol: f64,
    pub step_tol: f64,
    pub max_halvings: usize,
    /// Information of the unary anchor on the first pose, used when the
    /// first timestep is unobserved.
    pub anchor_information: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            max_iterations: 100,
            relative_cost_tol: 1e-9,
            step_tol: 1e-10,
            max_halvings: 20,
            anchor_information: 1e6,
        }
    }
}

/// Batch localization problem over `K` states.
///
/// `odometry[k]` drives the transition `k−1 → k` (`odometry[0]` is unused);
/// the motion noise model covers the `K−1` motion errors.
#[derive(Clone, Debug)]
pub struct EstimationProblem {
    pub dt: f64,
    pub odometry: Vec<Odometry>,
    pub motion_noise: BandedNoiseModel,
    pub measurements: Measurements,
    /// Estimate of the first pose; also the mean of the anchor when the first
    /// timestep is unobserved.
    pub initial_pose: Option<Pose2>,
    /// Explicit initial trajectory; dead reckoning is used when absent.
    pub initial_guess: Option<Vec<Pose2>>,
    pub config: SolverConfig,
}

impl EstimationProblem {
    pub fn len(&self) -> usize {
        self.odometry.len()
    }

    pub fn is_empty(&self) -> bool {
        self.odometry.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.len();
        if k == 0 {
            return Err(Error::InvalidArgument("empty problem".into()));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidArgument(format!("time step must be positive, got {}", self.dt)));
        }
        if self.measurements.len() != k {
            return Err(Error::DimensionMismatch(format!(
                "{} measurement slots for {k} states",
                self.measurements.len()
            )));
        }
        if self.motion_noise.len() != k - 1 || self.motion_noise.block_dim() != 3 {
            return Err(Error::DimensionMismatch(format!(
                "motion model has length {} and block dimension {} (expected {} and 3)",
                self.motion_noise.len(),
                self.motion_noise.block_dim(),
                k - 1
            )));
        }
        if self.odometry.iter().any(|o| !o.v.is_finite() || !o.omega.is_finite()) {
            return Err(Error::InvalidArgument("non-finite odometry".into()));
        }
        match &self.measurements {
            Measurements::Poses { poses, noise } => {
                if noise.len() != k || noise.block_dim() != 3 {
                    return Err(Error::DimensionMismatch(format!(
                        "measurement model has length {} and block dimension {} (expected {k} and 3)",
                        noise.len(),
                        noise.block_dim()
                    )));
                }
                if noise.bandwidth() > 0 && poses.iter().any(|p| p.is_none()) {
                    return Err(Error::Unsupported(
                        "measurement gaps require an uncorrelated (b = 0) measurement model".into(),
                    ));
                }
                if poses.iter().flatten().any(|p| !p.is_finite()) {
                    return Err(Error::InvalidArgument("non-finite pseudomeasurement".into()));
                }
            }
            Measurements::Points { information, .. } => {
                if information.cholesky().is_none() {
                    return Err(Error::ModelInvalid("point information matrix is not SPD".into()));
                }
            }
        }
        if let Some(guess) = &self.initial_guess {
            if guess.len() != k {
                return Err(Error::DimensionMismatch(format!("initial guess has {} poses for {k} states", guess.len())));
            }
        }
        if !self.measurements.observed_at(0) && self.initial_pose.is_none() && self.initial_guess.is_none() {
            return Err(Error::InvalidArgument(
                "first timestep is unobserved and no initial pose anchors the gauge".into(),
            ));
        }
        Ok(())
    }

    /// Whether the unary anchor on the first pose is active.
    pub fn anchored(&self) -> bool {
        !self.measurements.observed_at(0)
    }

    /// Mean of the first-pose anchor.
    pub(crate) fn anchor_pose(&self) -> Pose2 {
        self.initial_pose
            .or_else(|| self.initial_guess.as_ref().map(|g| g[0]))
            .unwrap_or_else(Pose2::identity)
    }

    /// Block bandwidth of the normal-equation matrix. A motion factor of
    /// bandwidth `b` touches `b + 2` consecutive states, hence the `+ 1`.
    pub fn information_bandwidth(&self) -> usize {
        let b_meas = match &self.measurements {
            Measurements::Poses { noise, .. } => noise.bandwidth(),
            Measurements::Points { .. } => 0,
        };
        1.max(b_meas).max(self.motion_noise.bandwidth() + 1)
    }

    /// Initial trajectory: the explicit guess, or odometry dead-reckoned
    /// from the first pose.
    pub fn initial_trajectory(&self) -> Result<Vec<Pose2>> {
        if let Some(g) = &self.initial_guess {
            return Ok(g.clone());
        }
        let first = match (&self.initial_pose, &self.measurements) {
            (Some(p), _) => *p,
            (None, Measurements::Poses { poses, .. }) => poses[0].ok_or_else(|| {
                Error::InvalidArgument("no initial pose and no pseudomeasurement at the first timestep".into())
            })?,
            (None, Measurements::Points { observations, .. }) => {
                let (map, body): (Vec<_>, Vec<_>) = observations[0].iter().map(|o| (o.landmark, o.observed)).unzip();
                crate::preprocess::svd_pose_fit(&map, &body)?
            }
        };
        let mut traj = Vec::with_capacity(self.len());
        traj.push(first);
        for k in 1..self.len() {
            let next = propagate(&traj[k - 1], &self.odometry[k], self.dt);
            traj.push(next);
        }
        Ok(traj)
    }
}
