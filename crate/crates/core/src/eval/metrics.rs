use std::ops::Range;

use nalgebra::{DVector, Matrix3};
use serde::{Deserialize, Serialize};

use crate::banded::SymBandMatrix;
use crate::error::{Error, Result};
use crate::eval::chi2::chi2_quantile;
use crate::se2::{wrap_angle, Pose2, Twist2};

/// Estimation error `ln(T̂·T_true⁻¹)^∨`.
pub fn pose_error(estimate: &Pose2, truth: &Pose2) -> Twist2 {
    (*estimate * truth.inverse()).log()
}

/// `eᵀP⁻¹e` through a Cholesky solve.
pub fn marginal_nees(e: &Twist2, cov: &Matrix3<f64>) -> Result<f64> {
    let chol = cov
        .cholesky()
        .ok_or_else(|| Error::Conditioning("marginal covariance is not SPD".into()))?;
    Ok(e.0.dot(&chol.solve(&e.0)))
}

/// Marginal NEES at every timestep.
pub fn nees_sequence(estimate: &[Pose2], marginals: &[Matrix3<f64>], truth: &[Pose2]) -> Result<Vec<f64>> {
    if estimate.len() != truth.len() || marginals.len() != truth.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} estimates, {} covariances, {} groundtruth poses",
            estimate.len(),
            marginals.len(),
            truth.len()
        )));
    }
    estimate
        .iter()
        .zip(marginals)
        .zip(truth)
        .map(|((e, p), t)| marginal_nees(&pose_error(e, t), p))
        .collect()
}

/// Time average of the marginal NEES.
pub fn ergodic_nees(eps: &[f64]) -> f64 {
    eps.iter().sum::<f64>() / eps.len() as f64
}

/// Batch NEES `eᵀÂe` with the stacked trajectory error and the posterior
/// information matrix.
pub fn batch_nees(errors: &[Twist2], information: &SymBandMatrix) -> Result<f64> {
    if 3 * errors.len() != information.dim() {
        return Err(Error::DimensionMismatch(format!(
            "{} errors for an information matrix of size {}",
            errors.len(),
            information.dim()
        )));
    }
    let e = DVector::from_iterator(errors.len() * 3, errors.iter().flat_map(|t| t.0.iter().copied()));
    Ok(information.quadratic_form(&e))
}

/// Aggregated χ² bounds test.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Chi2TestResult {
    pub lower_prob: f64,
    pub upper_prob: f64,
    pub lower_bound: f64,
    pub upper_bound: f64,
    /// `Σ_j ε^j_k` per timestep.
    pub sums: Vec<f64>,
    pub inside: Vec<bool>,
    pub violation_fraction: f64,
}

/// Checks `Q(ℓ) ≤ Σ_j ε^j_k ≤ Q(u)` at every timestep with `Q` the χ²
/// quantile at `N_t·D` degrees of freedom.
pub fn nees_chi2_test(per_trial: &[Vec<f64>], dim: usize, lower: f64, upper: f64) -> Result<Chi2TestResult> {
    let n_trials = per_trial.len();
    if n_trials == 0 {
        return Err(Error::InvalidArgument("no trials".into()));
    }
    let k = per_trial[0].len();
    if per_trial.iter().any(|t| t.len() != k) {
        return Err(Error::DimensionMismatch("trials differ in length".into()));
    }
    if !(lower < upper) {
        return Err(Error::InvalidArgument(format!("bad confidence pair ({lower}, {upper})")));
    }
    let dof = n_trials * dim;
    let lo = chi2_quantile(dof, lower)?;
    let hi = chi2_quantile(dof, upper)?;
    let sums: Vec<f64> = (0..k).map(|i| per_trial.iter().map(|t| t[i]).sum()).collect();
    let inside: Vec<bool> = sums.iter().map(|s| (lo..=hi).contains(s)).collect();
    let violations = inside.iter().filter(|b| !**b).count();
    Ok(Chi2TestResult {
        lower_prob: lower,
        upper_prob: upper,
        lower_bound: lo,
        upper_bound: hi,
        sums,
        inside,
        violation_fraction: violations as f64 / k.max(1) as f64,
    })
}

/// Root-mean-square translation (m) and rotation (rad) errors of the robot
/// positions and headings.
pub fn rmse(estimate: &[Pose2], truth: &[Pose2]) -> Result<(f64, f64)> {
    if estimate.len() != truth.len() || truth.is_empty() {
        return Err(Error::DimensionMismatch(format!(
            "{} estimates for {} groundtruth poses",
            estimate.len(),
            truth.len()
        )));
    }
    let (mut st, mut sr) = (0.0, 0.0);
    for (e, t) in estimate.iter().zip(truth) {
        let (ex, ey, eh) = e.world_pose();
        let (tx, ty, th) = t.world_pose();
        st += (ex - tx).powi(2) + (ey - ty).powi(2);
        sr += wrap_angle(eh - th).powi(2);
    }
    let n = truth.len() as f64;
    Ok(((st / n).sqrt(), (sr / n).sqrt()))
}

/// A held-out fold and the training ranges around it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Fold {
    pub test: Range<usize>,
    pub train: Vec<Range<usize>>,
}

/// Contiguous folds whose sizes differ by at most one.
pub fn kfold(n: usize, folds: usize) -> Result<Vec<Fold>> {
    if folds < 2 || folds > n {
        return Err(Error::InvalidArgument(format!("cannot split {n} timesteps into {folds} folds")));
    }
    let base = n / folds;
    let extra = n % folds;
    let mut start = 0;
    let mut out = Vec::with_capacity(folds);
    for f in 0..folds {
        let len = base + usize::from(f < extra);
        let test = start..start + len;
        let train = [0..start, test.end..n].into_iter().filter(|r| !r.is_empty()).collect();
        out.push(Fold { test, train });
        start += len;
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AccuracyMetrics {
    pub ergodic_nees: f64,
    pub rmse_translation: f64,
    pub rmse_rotation: f64,
}

/// Column-wise mean over folds or trials.
pub fn average_metrics(rows: &[AccuracyMetrics]) -> AccuracyMetrics {
    let n = rows.len() as f64;
    AccuracyMetrics {
        ergodic_nees: rows.iter().map(|r| r.ergodic_nees).sum::<f64>() / n,
        rmse_translation: rows.iter().map(|r| r.rmse_translation).sum::<f64>() / n,
        rmse_rotation: rows.iter().map(|r| r.rmse_rotation).sum::<f64>() / n,
    }
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nees_hand_values() {
        assert_eq!(marginal_nees(&Twist2::zero(), &Matrix3::identity()).unwrap(), 0.0);
        let e = Twist2::new(1.0, 1.0, 1.0);
        assert!((marginal_nees(&e, &Matrix3::identity()).unwrap() - 3.0).abs() < 1e-15);
        assert!(marginal_nees(&e, &-Matrix3::identity()).is_err());
        assert_eq!(ergodic_nees(&[3.0; 10]), 3.0);
    }

    #[test]
    fn rmse_hand_values() {
        let truth: Vec<_> = (0..5).map(|k| Pose2::from_world_pose(k as f64, 1.0, 0.2)).collect();
        assert_eq!(rmse(&truth, &truth).unwrap(), (0.0, 0.0));
        let shifted: Vec<_> = (0..5).map(|k| Pose2::from_world_pose(k as f64 + 0.01, 1.0, 0.2)).collect();
        let (t, r) = rmse(&shifted, &truth).unwrap();
        assert!((t - 0.01).abs() < 1e-12 && r < 1e-12);
        // wrapped heading differences
        let a = [Pose2::from_world_pose(0.0, 0.0, 3.1)];
        let b = [Pose2::from_world_pose(0.0, 0.0, -3.1)];
        assert!((rmse(&a, &b).unwrap().1 - (std::f64::consts::TAU - 6.2)).abs() < 1e-12);
    }

    #[test]
    fn folds_cover_and_are_disjoint() {
        let f = kfold(12000, 4).unwrap();
        assert!(f.iter().all(|x| x.test.len() == 3000));
        assert_eq!(f[0].train, vec![3000..12000]);
        assert_eq!(f[1].train, vec![0..3000, 6000..12000]);
        let g = kfold(10, 3).unwrap();
        let lens: Vec<_> = g.iter().map(|x| x.test.len()).collect();
        assert_eq!(lens, vec![4, 3, 3]);
        assert_eq!(g.last().unwrap().test.end, 10);
        assert!(kfold(3, 4).is_err());
    }

    #[test]
    fn averaging_and_median() {
        let rows = [
            AccuracyMetrics {
                ergodic_nees: 2.0,
                rmse_translation: 0.1,
                rmse_rotation: 0.01,
            },
            AccuracyMetrics {
                ergodic_nees: 4.0,
                rmse_translation: 0.3,
                rmse_rotation: 0.03,
            },
        ];
        let avg = average_metrics(&rows);
        assert!((avg.ergodic_nees - 3.0).abs() < 1e-15);
        assert!((avg.rmse_translation - 0.2).abs() < 1e-15);
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
