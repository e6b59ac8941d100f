use nalgebra::Vector2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{LandmarkMap, MapLandmark};
use crate::error::{Error, Result};
use crate::se2::Pose2;

/// Landmark layout and sensor gating.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldConfig {
    /// Side length of the square area (m).
    pub area: f64,
    /// Nominal grid spacing (m).
    pub spacing: f64,
    /// Uniform jitter half-width as a fraction of the spacing.
    pub jitter: f64,
    pub fov_deg: f64,
    pub max_range: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            area: 10.0,
            spacing: 2.0,
            jitter: 0.25,
            fov_deg: 270.0,
            max_range: 5.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct World {
    pub landmarks: Vec<Vector2<f64>>,
    /// Full field of view (rad), centred on the forward axis.
    pub fov: f64,
    pub max_range: f64,
}

impl World {
    pub fn new(landmarks: Vec<Vector2<f64>>, fov: f64, max_range: f64) -> Result<Self> {
        if !(max_range > 0.0) {
            return Err(Error::InvalidArgument(format!("max range must be positive, got {max_range}")));
        }
        if !(fov > 0.0 && fov <= std::f64::consts::TAU) {
            return Err(Error::InvalidArgument(format!("field of view must lie in (0, 2π], got {fov}")));
        }
        Ok(World {
            landmarks,
            fov,
            max_range,
        })
    }

    /// Jittered grid covering `[0, area]²`.
    pub fn jittered_grid<R: Rng>(cfg: &WorldConfig, rng: &mut R) -> Result<Self> {
        if !(cfg.spacing > 0.0 && cfg.area >= 0.0) {
            return Err(Error::InvalidArgument("world spacing must be positive".into()));
        }
        let n = (cfg.area / cfg.spacing).round() as usize + 1;
        let half = cfg.jitter * cfg.spacing;
        let mut landmarks = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                let mut p = Vector2::new(i as f64 * cfg.spacing, j as f64 * cfg.spacing);
                if half > 0.0 {
                    p += Vector2::new(rng.random_range(-half..=half), rng.random_range(-half..=half));
                }
                landmarks.push(p);
            }
        }
        World::new(landmarks, cfg.fov_deg.to_radians(), cfg.max_range)
    }

    /// Whether a body-frame point passes the range and field-of-view gates.
    pub fn is_visible(&self, p: &Vector2<f64>) -> bool {
        let range = p.norm();
        if range > self.max_range {
            return false;
        }
        if self.fov >= std::f64::consts::TAU {
            return true;
        }
        p[1].atan2(p[0]).abs() <= 0.5 * self.fov
    }

    pub fn to_map(&self) -> LandmarkMap {
        LandmarkMap {
            landmarks: self
                .landmarks
                .iter()
                .enumerate()
                .map(|(id, l)| MapLandmark { id, x: l[0], y: l[1] })
                .collect(),
            fov: self.fov,
            max_range: self.max_range,
        }
    }

    pub fn from_map(map: &LandmarkMap) -> Result<Self> {
        let mut landmarks = vec![Vector2::zeros(); map.landmarks.iter().map(|l| l.id + 1).max().unwrap_or(0)];
        for l in &map.landmarks {
            landmarks[l.id] = Vector2::new(l.x, l.y);
        }
        World::new(landmarks, map.fov, map.max_range)
    }
}

/// Landmarks seen from `pose`, as `(id, body-frame point)` in id order.
pub fn visible_landmarks(pose: &Pose2, world: &World) -> Vec<(usize, Vector2<f64>)> {
    world
        .landmarks
        .iter()
        .enumerate()
        .filter_map(|(id, l)| {
            let p = pose.transform_point(l);
            world.is_visible(&p).then_some((id, p))
        })
        .collect()
}
