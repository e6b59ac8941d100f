//! Landmark point sets to pose pseudomeasurements and kernel features, and
//! groundtruth residuals for the learners.

use nalgebra::{DVector, Matrix2, Vector2};

use crate::error::{Error, Result};
use crate::estimator::{measurement_error, motion_error, Odometry};
use crate::noise::{ErrorDataset, ErrorSegment, Feature};
use crate::se2::Pose2;

/// Rigid alignment `argmin_T Σ‖p_j − T·ℓ_j‖²` of body-frame observations
/// `p_j` to map points `ℓ_j` by centering and a 2×2 SVD.
pub fn svd_pose_fit(map: &[Vector2<f64>], body: &[Vector2<f64>]) -> Result<Pose2> {
    if map.len() != body.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} map points but {} observations",
            map.len(),
            body.len()
        )));
    }
    let n = map.len();
    if n < 2 {
        return Err(Error::Underdetermined(n));
    }
    let inv_n = 1.0 / n as f64;
    let map_mean = map.iter().sum::<Vector2<f64>>() * inv_n;
    let body_mean = body.iter().sum::<Vector2<f64>>() * inv_n;

    let mut h = Matrix2::zeros();
    let mut spread = 0.0;
    for (l, p) in map.iter().zip(body) {
        let lc = l - map_mean;
        h += (p - body_mean) * lc.transpose();
        spread += lc.norm_squared();
    }
    let scale = map.iter().map(|l| l.norm_squared()).fold(1.0, f64::max);
    if !(spread > 1e-20 * scale) {
        return Err(Error::DegenerateConfiguration);
    }

    let svd = h.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut fix = Matrix2::identity();
    // proper rotation: flip the direction of the weaker singular pair
    if (u * v_t).determinant() < 0.0 {
        let weak = if svd.singular_values[0] < svd.singular_values[1] { 0 } else { 1 };
        fix[(weak, weak)] = -1.0;
    }
    let rot = u * fix * v_t;
    let angle = rot[(1, 0)].atan2(rot[(0, 0)]);
    let t = body_mean - rot * map_mean;
    Ok(Pose2::new(angle, t))
}

/// `ψ = [n, mean_x, mean_y, cov_xx, cov_xy, cov_yy]` of body-frame points
/// with a `1/n` covariance. An empty set gives the zero feature.
pub fn extract_feature(points: &[Vector2<f64>]) -> Feature {
    let n = points.len();
    if n == 0 {
        return Feature([0.0; 6]);
    }
    let inv_n = 1.0 / n as f64;
    let mean = points.iter().sum::<Vector2<f64>>() * inv_n;
    let (mut xx, mut xy, mut yy) = (0.0, 0.0, 0.0);
    for p in points {
        let d = p - mean;
        xx += d[0] * d[0];
        xy += d[0] * d[1];
        yy += d[1] * d[1];
    }
    Feature([n as f64, mean[0], mean[1], xx * inv_n, xy * inv_n, yy * inv_n])
}

/// Measurement errors `ln(T_m·T⁻¹)^∨` against groundtruth.
///
/// Timesteps without a pseudomeasurement split the sequence into separate
/// segments so that no training window spans a gap.
pub fn residuals_from_groundtruth(
    pseudo: &[Option<Pose2>],
    groundtruth: &[Pose2],
    features: Option<&[Feature]>,
) -> Result<ErrorDataset> {
    if pseudo.len() != groundtruth.len() || features.is_some_and(|f| f.len() != pseudo.len()) {
        return Err(Error::DimensionMismatch(format!(
            "{} pseudomeasurements, {} groundtruth poses, {} features",
            pseudo.len(),
            groundtruth.len(),
            features.map_or(pseudo.len(), |f| f.len())
        )));
    }
    let mut segments = Vec::new();
    let mut errors = Vec::new();
    let mut feats = Vec::new();
    let flush = |errors: &mut Vec<DVector<f64>>, feats: &mut Vec<Feature>, segments: &mut Vec<ErrorSegment>| {
        if errors.is_empty() {
            return;
        }
        let e = std::mem::take(errors);
        let f = std::mem::take(feats);
        segments.push(if features.is_some() {
            ErrorSegment::with_features(e, f)
        } else {
            ErrorSegment::new(e)
        });
    };
    for (k, (m, gt)) in pseudo.iter().zip(groundtruth).enumerate() {
        match m {
            Some(m) => {
                errors.push(DVector::from_column_slice(measurement_error(m, gt).0.as_slice()));
                if let Some(f) = features {
                    feats.push(f[k]);
                }
            }
            None => flush(&mut errors, &mut feats, &mut segments),
        }
    }
    flush(&mut errors, &mut feats, &mut segments);
    ErrorDataset::new(3, segments)
}

/// Motion errors along the groundtruth, `K−1` of them for `K` poses.
/// `odometry[k]` drives the step `k−1 → k`.
pub fn motion_residuals(groundtruth: &[Pose2], odometry: &[Odometry], dt: f64) -> Result<ErrorDataset> {
    if groundtruth.len() != odometry.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} groundtruth poses but {} odometry readings",
            groundtruth.len(),
            odometry.len()
        )));
    }
    let errors = (1..groundtruth.len())
        .map(|k| {
            let e = motion_error(&groundtruth[k - 1], &groundtruth[k], &odometry[k], dt);
            DVector::from_column_slice(e.0.as_slice())
        })
        .collect();
    ErrorDataset::new(3, vec![ErrorSegment::new(errors)])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identical_points_give_identity() {
        let pts = vec![Vector2::new(1.0, 2.0), Vector2::new(-3.0, 0.5), Vector2::new(0.0, 4.0)];
        let t = svd_pose_fit(&pts, &pts).unwrap();
        assert!(t.log().norm() < 1e-12);
    }

    #[test]
    fn exact_rigid_motion_is_recovered() {
        let truth = Pose2::from_parts(0.7, -1.2, 30f64.to_radians());
        let map = vec![Vector2::new(1.0, 2.0), Vector2::new(-3.0, 0.5), Vector2::new(2.0, -4.0)];
        let body: Vec<_> = map.iter().map(|l| truth.transform_point(l)).collect();
        let t = svd_pose_fit(&map, &body).unwrap();
        assert!((t.angle() - truth.angle()).abs() < 1e-9);
        assert!((t.translation() - truth.translation()).norm() < 1e-9);
        // two points are enough
        let t2 = svd_pose_fit(&map[..2], &body[..2]).unwrap();
        assert!((t2.translation() - truth.translation()).norm() < 1e-9);
    }

    #[test]
    fn noisy_fit_matches_angle_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let truth = Pose2::from_parts(1.0, 0.5, 2.5);
        let map: Vec<_> = (0..8)
            .map(|_| Vector2::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)))
            .collect();
        let body: Vec<_> = map
            .iter()
            .map(|l| truth.transform_point(l) + Vector2::new(rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2)))
            .collect();
        let cost = |theta: f64| {
            let p = Pose2::new(theta, Vector2::zeros());
            let lm = map.iter().sum::<Vector2<f64>>() / 8.0;
            let pm = body.iter().sum::<Vector2<f64>>() / 8.0;
            let t = pm - p.transform_point(&lm);
            map.iter()
                .zip(&body)
                .map(|(l, b)| (b - p.transform_point(l) - t).norm_squared())
                .sum::<f64>()
        };
        // grid then golden-section refinement
        let mut best = (0..3600)
            .map(|i| -std::f64::consts::PI + i as f64 * std::f64::consts::TAU / 3600.0)
            .min_by(|a, b| cost(*a).total_cmp(&cost(*b)))
            .unwrap();
        let (mut lo, mut hi) = (best - 0.002, best + 0.002);
        for _ in 0..200 {
            let m1 = lo + (hi - lo) * 0.382;
            let m2 = lo + (hi - lo) * 0.618;
            if cost(m1) < cost(m2) {
                hi = m2;
            } else {
                lo = m1;
            }
        }
        best = 0.5 * (lo + hi);
        let t = svd_pose_fit(&map, &body).unwrap();
        assert!((t.angle() - best).abs() < 1e-6, "{} vs {best}", t.angle());
    }

    #[test]
    fn too_few_or_coincident_points_fail() {
        let p = [Vector2::new(1.0, 1.0)];
        assert!(matches!(svd_pose_fit(&p, &p), Err(Error::Underdetermined(1))));
        let same = [Vector2::new(1.0, 1.0), Vector2::new(1.0, 1.0)];
        assert!(matches!(svd_pose_fit(&same, &same), Err(Error::DegenerateConfiguration)));
    }

    #[test]
    fn feature_hand_values() {
        assert_eq!(extract_feature(&[Vector2::new(1.0, 2.0)]).0, [1.0, 1.0, 2.0, 0.0, 0.0, 0.0]);
        let f = extract_feature(&[Vector2::new(1.0, 0.0), Vector2::new(-1.0, 0.0)]);
        assert_eq!(f.0, [2.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        assert_eq!(extract_feature(&[]).0, [0.0; 6]);
    }

    #[test]
    fn gaps_split_segments() {
        let gt = vec![Pose2::identity(); 5];
        let pseudo = vec![Some(gt[0]), Some(gt[1]), None, Some(gt[3]), Some(gt[4])];
        let ds = residuals_from_groundtruth(&pseudo, &gt, None).unwrap();
        assert_eq!(ds.segments().len(), 2);
        assert_eq!(ds.len(), 4);
        assert!(ds.segments().iter().flat_map(|s| &s.errors).all(|e| e.norm() == 0.0));
    }
}
