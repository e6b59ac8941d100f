use nalgebra::Matrix2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::world::WorldConfig;

/// Odometry corruption: white noise on the reported speed and yaw rate plus
/// an unreported lateral slip velocity (all standard deviations).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OdometryNoise {
    pub sigma_v: f64,
    pub sigma_omega: f64,
    pub sigma_lateral: f64,
}

impl Default for OdometryNoise {
    fn default() -> Self {
        OdometryNoise {
            sigma_v: 0.05,
            sigma_omega: 0.05,
            sigma_lateral: 0.02,
        }
    }
}

impl OdometryNoise {
    pub fn none() -> Self {
        OdometryNoise {
            sigma_v: 0.0,
            sigma_omega: 0.0,
            sigma_lateral: 0.0,
        }
    }
}

/// Shape of the groundtruth path.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrajectoryConfig {
    /// Pursuit of a point moving on a Lissajous curve whose phase is drawn
    /// per sequence.
    Lissajous {
        center: [f64; 2],
        amplitude: [f64; 2],
        /// Angular frequencies (rad/s).
        frequency: [f64; 2],
        /// Time the pursued point leads the current time (s).
        lookahead: f64,
        min_speed: f64,
        max_speed: f64,
        max_turn_rate: f64,
        speed_gain: f64,
        turn_gain: f64,
    },
    /// Constant-speed circle starting at `center + (radius, 0)` heading `+y`.
    Circle { center: [f64; 2], radius: f64, speed: f64 },
    /// The robot does not move.
    Stationary { pose: [f64; 3] },
}

impl Default for TrajectoryConfig {
    fn default() -> Self {
        TrajectoryConfig::Lissajous {
            center: [5.0, 5.0],
            amplitude: [3.0, 3.0],
            frequency: [0.05, 0.08],
            lookahead: 2.0,
            min_speed: 0.1,
            max_speed: 0.6,
            max_turn_rate: 1.0,
            speed_gain: 0.5,
            turn_gain: 1.5,
        }
    }
}

/// Controlled simulation settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    /// Test sequence length `K`.
    pub test_length: usize,
    /// Training sequence length `N`.
    pub train_length: usize,
    pub dt: f64,
    /// AR(1) gain `S′` of the landmark-point noise (row-major 2×2).
    pub ar_gain: [[f64; 2]; 2],
    /// Innovation covariance `R′` (m², row-major 2×2).
    pub innovation_cov: [[f64; 2]; 2],
    /// Noise on a landmark is scaled by `1 + gain·(range/max_range)²`.
    pub range_noise_gain: f64,
    pub odometry_noise: OdometryNoise,
    pub trajectory: TrajectoryConfig,
    pub world: WorldConfig,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            test_length: 1000,
            train_length: 3000,
            dt: 0.1,
            ar_gain: [[0.9, 0.0], [0.0, 0.9]],
            innovation_cov: [[0.03 * 0.03, 0.0], [0.0, 0.03 * 0.03]],
            range_noise_gain: 0.0,
            odometry_noise: OdometryNoise::default(),
            trajectory: TrajectoryConfig::default(),
            world: WorldConfig::default(),
            seed: 0,
        }
    }
}

pub(crate) fn matrix2(a: &[[f64; 2]; 2]) -> Matrix2<f64> {
    Matrix2::new(a[0][0], a[0][1], a[1][0], a[1][1])
}

/// Largest eigenvalue modulus of a 2×2 matrix.
pub fn spectral_radius(m: &Matrix2<f64>) -> f64 {
    let tr = m.trace();
    let det = m.determinant();
    let disc = tr * tr - 4.0 * det;
    if disc >= 0.0 {
        let s = disc.sqrt();
        (0.5 * (tr + s)).abs().max((0.5 * (tr - s)).abs())
    } else {
        det.sqrt()
    }
}

impl SimConfig {
    pub fn ar_gain_matrix(&self) -> Matrix2<f64> {
        matrix2(&self.ar_gain)
    }

    pub fn innovation_matrix(&self) -> Matrix2<f64> {
        matrix2(&self.innovation_cov)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if self.test_length < 2 || self.train_length < 2 {
            return Err(Error::Config("sequence lengths must be at least 2".into()));
        }
        let rho = spectral_radius(&self.ar_gain_matrix());
        if !(rho < 1.0) {
            return Err(Error::Config(format!("AR gain is not stable (spectral radius {rho})")));
        }
        let r = self.innovation_matrix();
        if (r - r.transpose()).abs().max() > 1e-15 * r.abs().max().max(1.0) {
            return Err(Error::Config("innovation covariance must be symmetric".into()));
        }
        // zero noise is allowed for noise-free fixtures
        let eig = r.symmetric_eigenvalues();
        if eig.iter().any(|&l| l < 0.0) {
            return Err(Error::Config("innovation covariance must be positive semidefinite".into()));
        }
        if self.range_noise_gain < 0.0 {
            return Err(Error::Config("range noise gain must be non-negative".into()));
        }
        let n = &self.odometry_noise;
        if [n.sigma_v, n.sigma_omega, n.sigma_lateral].iter().any(|s| !(*s >= 0.0)) {
            return Err(Error::Config("odometry noise levels must be non-negative".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_defaults() {
        let c = SimConfig::default();
        c.validate().unwrap();
        assert_eq!(c.ar_gain_matrix(), Matrix2::identity() * 0.9);
        assert!((c.innovation_matrix()[(0, 0)] - 0.0009).abs() < 1e-18);
        assert_eq!(c.world.fov_deg, 270.0);
        assert_eq!(c.world.max_range, 5.0);
    }

    #[test]
    fn unstable_gain_is_rejected() {
        let mut c = SimConfig::default();
        c.ar_gain = [[1.0, 0.0], [0.0, 0.5]];
        assert!(c.validate().is_err());
        // rotation-like gain with complex eigenvalues of modulus 0.95
        c.ar_gain = [[0.0, -0.95], [0.95, 0.0]];
        assert!((spectral_radius(&c.ar_gain_matrix()) - 0.95).abs() < 1e-12);
        c.validate().unwrap();
    }

    #[test]
    fn config_round_trips_through_json() {
        let c = SimConfig::default();
        let s = serde_json::to_string(&c).unwrap();
        let back: SimConfig = serde_json::from_str(&s).unwrap();
        assert_eq!(back, c);
        let partial: SimConfig = serde_json::from_str(r#"{"test_length": 50}"#).unwrap();
        assert_eq!(partial.test_length, 50);
        assert_eq!(partial.train_length, 3000);
    }
}
