//! Closed-form maximum-likelihood learning of constant banded noise models.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::noise::data::ErrorDataset;
use crate::noise::model::{BandedNoiseModel, CorrelatedFactor};

/// Smallest number of training windows accepted for block dimension `m`
/// and bandwidth `b`.
pub fn min_windows(block_dim: usize, bandwidth: usize) -> usize {
    10 * block_dim * (bandwidth + 1)
}

/// A constant interior factor plus the lower-bandwidth factors used for the
/// first `b` timesteps.
#[derive(Clone, Debug, PartialEq)]
pub struct ConstantNoiseModel {
    pub interior: CorrelatedFactor,
    pub boundary: Vec<CorrelatedFactor>,
}

impl ConstantNoiseModel {
    pub fn bandwidth(&self) -> usize {
        self.interior.bandwidth()
    }

    pub fn block_dim(&self) -> usize {
        self.interior.block_dim()
    }

    /// Factor used at 0-based timestep `k`.
    pub fn factor_for(&self, k: usize) -> &CorrelatedFactor {
        if k < self.bandwidth() {
            &self.boundary[k]
        } else {
            &self.interior
        }
    }

    /// Repeats the model over `length` timesteps.
    pub fn expand(&self, length: usize) -> Result<BandedNoiseModel> {
        let factors = (0..length).map(|k| self.factor_for(k).clone()).collect();
        BandedNoiseModel::new(self.bandwidth(), self.block_dim(), factors)
    }
}

/// Outer-product moment matrix `Σ w wᵀ` over all windows at bandwidth `b`.
fn window_moments(data: &ErrorDataset, b: usize) -> DMatrix<f64> {
    let m = data.block_dim();
    let d = (b + 1) * m;
    let mut omega = DMatrix::zeros(d, d);
    let mut w = DVector::zeros(d);
    for seg in data.segments() {
        for i in b..seg.len() {
            for (slot, e) in seg.errors[i - b..=i].iter().enumerate() {
                w.rows_mut(slot * m, m).copy_from(e);
            }
            omega.ger(1.0, &w, &w, 1.0);
        }
    }
    omega
}

/// Solves the stationarity conditions given the (weighted) window moment
/// matrix `Ω = Σ h_i w_i w_iᵀ` and total weight `H`:
///
/// ```text
/// S = −(Σ h e_i zᵀ)(Σ h z zᵀ)⁻¹,   W = H·([S 1] Ω [S 1]ᵀ)⁻¹
/// ```
pub(crate) fn fit_from_moments(omega: &DMatrix<f64>, total_weight: f64, m: usize) -> Result<CorrelatedFactor> {
    let d = omega.nrows();
    let bm = d - m;
    let s_star = if bm > 0 {
        let gram = omega.view((0, 0), (bm, bm)).into_owned();
        linalg::check_gram(&gram)?;
        let cross = omega.view((bm, 0), (m, bm)).into_owned();
        let chol = linalg::cholesky_jittered(&gram, "window Gram matrix")?;
        -chol.solve(&cross.transpose()).transpose()
    } else {
        DMatrix::zeros(m, 0)
    };
    let mut a = DMatrix::zeros(m, d);
    a.view_mut((0, 0), (m, bm)).copy_from(&s_star);
    a.view_mut((0, bm), (m, m)).fill_with_identity();
    let resid_moment = linalg::symmetrize(&(&a * omega * a.transpose()));
    linalg::check_gram(&resid_moment)?;
    let w = linalg::spd_inverse(&resid_moment, "residual moment")? * total_weight;
    Ok(CorrelatedFactor::from_stacked(&s_star, linalg::symmetrize(&w)))
}

/// Constant-noise learner: the closed-form minimizer of
/// `Σ_{i>b} ½(e_{i−b:i}ᵀ[S 1]ᵀW[S 1]e_{i−b:i} − ln|W|)`.
pub fn learn_constant(data: &ErrorDataset, b: usize) -> Result<CorrelatedFactor> {
    let m = data.block_dim();
    let n_windows = data.window_count(b);
    let required = min_windows(m, b);
    if n_windows < required {
        return Err(Error::InsufficientData {
            required,
            available: n_windows,
        });
    }
    let omega = window_moments(data, b);
    fit_from_moments(&omega, n_windows as f64, m)
}

/// Lower-bandwidth models for the first `b` timesteps, one per effective
/// bandwidth `0..b`.
pub fn learn_boundary(data: &ErrorDataset, b: usize) -> Result<Vec<CorrelatedFactor>> {
    (0..b).map(|bw| learn_constant(data, bw)).collect()
}

pub fn learn_constant_model(data: &ErrorDataset, b: usize) -> Result<ConstantNoiseModel> {
    Ok(ConstantNoiseModel {
        interior: learn_constant(data, b)?,
        boundary: learn_boundary(data, b)?,
    })
}

/// Weighted training objective `Σ h_i ½(r_iᵀWr_i − ln|W|)` over all windows at
/// the factor's bandwidth. `weights = None` means unit weights.
pub fn training_negloglik(data: &ErrorDataset, factor: &CorrelatedFactor, weights: Option<&[f64]>) -> Result<f64> {
    let b = factor.bandwidth();
    let logdet = linalg::spd_logdet(&factor.w, "W")?;
    let mut total = 0.0;
    let mut idx = 0;
    for seg in data.segments() {
        for i in b..seg.len() {
            let h = weights.map_or(1.0, |w| w[idx]);
            let r = factor.residual(&seg.errors[i - b..=i]);
            total += h * 0.5 * (r.dot(&(&factor.w * &r)) - logdet);
            idx += 1;
        }
    }
    Ok(total)
}

/// Analytic gradient of [`training_negloglik`] with respect to the stacked
/// `S_* = [S_b ⋯ S_1]` and to `W` (unstructured):
///
/// ```text
/// ∂L/∂S = W Σ h r zᵀ,   ∂L/∂W = ½ Σ h (r rᵀ − W⁻¹)
/// ```
pub fn training_gradient(
    data: &ErrorDataset,
    factor: &CorrelatedFactor,
    weights: Option<&[f64]>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let b = factor.bandwidth();
    let m = factor.block_dim();
    let w_inv = linalg::spd_inverse(&factor.w, "W")?;
    let mut r_z = DMatrix::zeros(m, b * m);
    let mut r_r = DMatrix::zeros(m, m);
    let mut h_total = 0.0;
    let mut z = DVector::zeros(b * m);
    let mut idx = 0;
    for seg in data.segments() {
        for i in b..seg.len() {
            let h = weights.map_or(1.0, |w| w[idx]);
            let r = factor.residual(&seg.errors[i - b..=i]);
            for (slot, e) in seg.errors[i - b..i].iter().enumerate() {
                z.rows_mut(slot * m, m).copy_from(e);
            }
            r_z += &r * z.transpose() * h;
            r_r += &r * r.transpose() * h;
            h_total += h;
            idx += 1;
        }
    }
    let d_s = &factor.w * r_z;
    let d_w = (r_r - w_inv * h_total) * 0.5;
    Ok((d_s, d_w))
}
