//! Feature-conditioned (varying) noise models by local kernel regression.
//!
//! Every training window `i` contributes its log-likelihood weighted by
//! `h_i = exp(−½ (ψ_i − ψ_*)ᵀ M (ψ_i − ψ_*))`, where `ψ_i` is the feature of
//! the window's newest timestep. The weighted objective has the same closed
//! form as the constant learner with kernel-weighted sums.

use log::{debug, warn};
use nalgebra::{DMatrix, DVector, SMatrix};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::data::{ErrorDataset, WindowLocation};
use crate::noise::learn::{self, fit_from_moments};
use crate::noise::model::CorrelatedFactor;

pub const FEATURE_DIM: usize = 6;

/// `ψ = [count, mean_x, mean_y, cov_xx, cov_xy, cov_yy]` of the landmark
/// points seen at one timestep (robot frame).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Feature(pub [f64; FEATURE_DIM]);

impl Feature {
    pub fn count(&self) -> f64 {
        self.0[0]
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

/// The kernel weight matrix `M` (symmetric PSD, 6×6).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KernelWeights(pub SMatrix<f64, FEATURE_DIM, FEATURE_DIM>);

impl KernelWeights {
    pub fn zero() -> Self {
        KernelWeights(SMatrix::zeros())
    }

    pub fn diagonal(d: [f64; FEATURE_DIM]) -> Self {
        let mut m = SMatrix::zeros();
        for (i, v) in d.iter().enumerate() {
            m[(i, i)] = *v;
        }
        KernelWeights(m)
    }

    pub fn diag(&self) -> [f64; FEATURE_DIM] {
        std::array::from_fn(|i| self.0[(i, i)])
    }

    pub fn is_diagonal(&self) -> bool {
        (0..FEATURE_DIM).all(|r| (0..FEATURE_DIM).all(|c| r == c || self.0[(r, c)] == 0.0))
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|v| *v == 0.0)
    }

    /// `½ ΔᵀMΔ`.
    fn half_quadratic(&self, a: &Feature, b: &Feature) -> f64 {
        let d: [f64; FEATURE_DIM] = std::array::from_fn(|i| a.0[i] - b.0[i]);
        let mut q = 0.0;
        if self.is_diagonal() {
            for (i, di) in d.iter().enumerate() {
                q += self.0[(i, i)] * di * di;
            }
        } else {
            for r in 0..FEATURE_DIM {
                for c in 0..FEATURE_DIM {
                    q += d[r] * self.0[(r, c)] * d[c];
                }
            }
        }
        0.5 * q
    }
}

/// Squared-exponential kernel `exp(−½ ΔψᵀMΔψ)`.
pub fn kernel_eval(psi_i: &Feature, psi_star: &Feature, m: &KernelWeights) -> f64 {
    (-m.half_quadratic(psi_i, psi_star)).exp()
}

/// Smallest accepted kernel mass `H` for block dimension `m`, bandwidth `b`.
pub fn min_support(block_dim: usize, bandwidth: usize) -> f64 {
    (40 * block_dim * (bandwidth + 1)) as f64
}

/// Precomputed window statistics for fast repeated predictions.
///
/// Row `i` of `moments` holds the packed upper triangle of `w_i w_iᵀ`, so a
/// kernel-weighted moment matrix is one matrix–vector product.
#[derive(Clone, Debug)]
pub struct KernelRegressor {
    bandwidth: usize,
    block_dim: usize,
    windows: DMatrix<f64>,
    moments: DMatrix<f64>,
    features: Vec<Feature>,
    locations: Vec<WindowLocation>,
    fallback: CorrelatedFactor,
}

fn packed_len(d: usize) -> usize {
    d * (d + 1) / 2
}

impl KernelRegressor {
    pub fn new(data: &ErrorDataset, bandwidth: usize) -> Result<Self> {
        if !data.has_features() {
            return Err(Error::InvalidArgument("kernel regression needs features".into()));
        }
        let fallback = learn::learn_constant(data, bandwidth)?;
        let (windows, locations) = data.window_matrix(bandwidth);
        let features = locations
            .iter()
            .map(|l| data.feature_at(*l).expect("features checked above"))
            .collect();
        let d = windows.ncols();
        let n = windows.nrows();
        let mut moments = DMatrix::zeros(n, packed_len(d));
        let mut col = 0;
        for p in 0..d {
            for q in p..d {
                for i in 0..n {
                    moments[(i, col)] = windows[(i, p)] * windows[(i, q)];
                }
                col += 1;
            }
        }
        Ok(KernelRegressor {
            bandwidth,
            block_dim: data.block_dim(),
            windows,
            moments,
            features,
            locations,
            fallback,
        })
    }

    pub fn bandwidth(&self) -> usize {
        self.bandwidth
    }

    pub fn window_count(&self) -> usize {
        self.features.len()
    }

    pub fn features(&self) -> &[Feature] {
        &self.features
    }

    /// The constant model at this bandwidth, used when kernel support is
    /// too low.
    pub fn fallback(&self) -> &CorrelatedFactor {
        &self.fallback
    }

    pub fn weights(&self, psi_star: &Feature, m: &KernelWeights) -> DVector<f64> {
        DVector::from_iterator(
            self.features.len(),
            self.features.iter().map(|psi| kernel_eval(psi, psi_star, m)),
        )
    }

    fn unpack(&self, packed: &[f64]) -> DMatrix<f64> {
        let d = (self.bandwidth + 1) * self.block_dim;
        let mut out = DMatrix::zeros(d, d);
        let mut col = 0;
        for p in 0..d {
            for q in p..d {
                out[(p, q)] = packed[col];
                out[(q, p)] = packed[col];
                col += 1;
            }
        }
        out
    }

    fn fit_weighted(&self, packed: &[f64], total: f64) -> Result<CorrelatedFactor> {
        let required = min_support(self.block_dim, self.bandwidth);
        if !(total >= required) {
            return Err(Error::LowSupport {
                effective: total,
                required,
            });
        }
        fit_from_moments(&self.unpack(packed), total, self.block_dim)
    }

    /// Kernel-weighted closed form for `(S(ψ_*), W(ψ_*))` with explicit
    /// window weights.
    pub fn predict_with_weights(&self, h: &DVector<f64>) -> Result<CorrelatedFactor> {
        let packed = self.moments.tr_mul(h);
        self.fit_weighted(packed.as_slice(), h.sum())
    }

    pub fn predict(&self, psi_star: &Feature, m: &KernelWeights) -> Result<CorrelatedFactor> {
        self.predict_with_weights(&self.weights(psi_star, m))
    }

    /// Like [`KernelRegressor::predict`], falling back to the constant model
    /// when support is too low or the weighted Gram matrix is singular.
    /// The flag reports whether the fallback was used.
    pub fn predict_or_fallback(&self, psi_star: &Feature, m: &KernelWeights) -> (CorrelatedFactor, bool) {
        match self.predict(psi_star, m) {
            Ok(f) => (f, false),
            Err(e) => {
                debug!("kernel prediction fell back to constant model: {e}");
                (self.fallback.clone(), true)
            }
        }
    }

    /// Predictions for many targets at once; weights for a chunk of targets
    /// form a matrix so the moment sums become one matrix product.
    pub fn predict_many(&self, targets: &[Feature], m: &KernelWeights) -> Vec<(CorrelatedFactor, bool)> {
        const CHUNK: usize = 256;
        let n = self.window_count();
        let mut out = Vec::with_capacity(targets.len());
        let mut fallbacks = 0usize;
        for chunk in targets.chunks(CHUNK) {
            let h = DMatrix::from_fn(chunk.len(), n, |t, i| kernel_eval(&self.features[i], &chunk[t], m));
            let sums = &h * &self.moments;
            for t in 0..chunk.len() {
                let packed: Vec<f64> = sums.row(t).iter().copied().collect();
                match self.fit_weighted(&packed, h.row(t).sum()) {
                    Ok(f) => out.push((f, false)),
                    Err(_) => {
                        fallbacks += 1;
                        out.push((self.fallback.clone(), true))
                    }
                }
            }
        }
        if fallbacks > 0 {
            warn!(
                "{fallbacks} of {} kernel predictions fell back to the constant model",
                targets.len()
            );
        }
        out
    }

    /// Leave-one-out negative log-likelihood over the given held-out
    /// windows. For held-out window `i` every training window sharing an
    /// error with it (same segment, `|j − i| ≤ b`) is excluded.
    pub fn leave_one_out_score(&self, m: &KernelWeights, heldout: &[usize]) -> f64 {
        self.blocked_score(m, heldout, self.bandwidth)
    }

    /// Held-out score excluding every window of the same segment within
    /// `radius` timesteps (at least `b`) of the held-out one. A radius
    /// beyond the error correlation time keeps temporally correlated
    /// neighbours from rewarding overly sharp kernels.
    pub fn blocked_score(&self, m: &KernelWeights, heldout: &[usize], radius: usize) -> f64 {
        const CHUNK: usize = 128;
        let n = self.window_count();
        let b = self.bandwidth;
        let radius = radius.max(b);
        let mdim = self.block_dim;
        heldout
            .par_chunks(CHUNK)
            .map(|chunk| {
                let h = DMatrix::from_fn(chunk.len(), n, |t, j| {
                    let i = chunk[t];
                    let (li, lj) = (self.locations[i], self.locations[j]);
                    if li.segment == lj.segment && li.index.abs_diff(lj.index) <= radius {
                        0.0
                    } else {
                        kernel_eval(&self.features[j], &self.features[i], m)
                    }
                });
                let sums = &h * &self.moments;
                let mut total = 0.0;
                for (t, &i) in chunk.iter().enumerate() {
                    let packed: Vec<f64> = sums.row(t).iter().copied().collect();
                    let factor = self
                        .fit_weighted(&packed, h.row(t).sum())
                        .unwrap_or_else(|_| self.fallback.clone());
                    let window: Vec<DVector<f64>> = (0..=b)
                        .map(|slot| DVector::from_fn(mdim, |d, _| self.windows[(i, slot * mdim + d)]))
                        .collect();
                    let r = factor.residual(&window);
                    let logdet = crate::linalg::spd_logdet(&factor.w, "W").unwrap_or(f64::NEG_INFINITY);
                    total += 0.5 * (r.dot(&(&factor.w * &r)) - logdet);
                }
                total
            })
            .collect::<Vec<f64>>()
            .into_iter()
            .sum()
    }
}

/// Single-target convenience wrapper around [`KernelRegressor`].
pub fn predict_varying(
    psi_star: &Feature,
    data: &ErrorDataset,
    bandwidth: usize,
    m: &KernelWeights,
) -> Result<CorrelatedFactor> {
    KernelRegressor::new(data, bandwidth)?.predict(psi_star, m)
}

/// Search settings for [`train_kernel_weights`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KernelTrainingConfig {
    /// Grid points per dimension (including `m_d = 0`).
    pub grid_points: usize,
    /// Refinement passes after the coarse sweep.
    pub refinement_passes: usize,
    /// Largest number of held-out windows scored per objective evaluation;
    /// larger datasets are subsampled with a uniform stride.
    pub max_heldout: usize,
    /// Training windows within this many timesteps of a held-out window
    /// are left out of its prediction.
    pub exclusion_radius: usize,
    /// Smallest and largest coarse grid exponents, in decades relative to
    /// `1/var(ψ_d)`.
    pub log10_min: f64,
    pub log10_max: f64,
}

impl Default for KernelTrainingConfig {
    fn default() -> Self {
        KernelTrainingConfig {
            grid_points: 7,
            refinement_passes: 2,
            max_heldout: 1500,
            exclusion_radius: 100,
            log10_min: -3.0,
            log10_max: 2.0,
        }
    }
}

/// Trains a diagonal `M` by maximizing the leave-one-out likelihood with a
/// multi-start coordinate search over a log-spaced grid.
pub fn train_kernel_weights(data: &ErrorDataset, bandwidth: usize, config: &KernelTrainingConfig) -> Result<KernelWeights> {
    let reg = KernelRegressor::new(data, bandwidth)?;
    train_kernel_weights_with(&reg, config)
}

pub fn train_kernel_weights_with(reg: &KernelRegressor, config: &KernelTrainingConfig) -> Result<KernelWeights> {
    let n = reg.window_count();
    let variances = feature_variances(reg.features());
    let active: Vec<usize> = (0..FEATURE_DIM).filter(|&d| variances[d] > 0.0).collect();
    if active.is_empty() {
        warn!("features have zero variance in every dimension; using M = 0");
        return Ok(KernelWeights::zero());
    }
    let stride = n.div_ceil(config.max_heldout.max(1)).max(1);
    let heldout: Vec<usize> = (0..n).step_by(stride).collect();

    let coarse_steps = config.grid_points.saturating_sub(1).max(1);
    let decade = if coarse_steps > 1 {
        (config.log10_max - config.log10_min) / (coarse_steps - 1) as f64
    } else {
        1.0
    };
    let coarse: Vec<f64> = (0..coarse_steps)
        .map(|t| config.log10_min + decade * t as f64)
        .collect();

    let mut cache: Vec<([f64; FEATURE_DIM], f64)> = Vec::new();
    let mut score = |diag: &[f64; FEATURE_DIM]| -> f64 {
        if let Some((_, s)) = cache.iter().find(|(d, _)| d == diag) {
            return *s;
        }
        let s = reg.blocked_score(&KernelWeights::diagonal(*diag), &heldout, config.exclusion_radius);
        cache.push((*diag, s));
        s
    };

    let starts: Vec<[f64; FEATURE_DIM]> = vec![
        [0.0; FEATURE_DIM],
        std::array::from_fn(|d| if variances[d] > 0.0 { 1.0 / variances[d] } else { 0.0 }),
    ];

    let mut best: Option<([f64; FEATURE_DIM], f64)> = None;
    for start in starts {
        let mut current = start;
        let mut current_score = score(&current);
        // coarse sweep
        for &d in &active {
            let candidates = std::iter::once(0.0).chain(coarse.iter().map(|g| 10f64.powf(*g) / variances[d]));
            for v in candidates {
                let mut trial = current;
                trial[d] = v;
                let s = score(&trial);
                if s < current_score {
                    current = trial;
                    current_score = s;
                }
            }
        }
        // refinement: shrink the log-spacing around the incumbent
        let half = (config.grid_points / 2).max(1) as i32;
        let mut step = decade;
        for _ in 0..config.refinement_passes {
            step /= (2 * half + 1) as f64 / 2.0;
            for &d in &active {
                if current[d] == 0.0 {
                    continue;
                }
                let centre = current[d];
                for t in -half..=half {
                    let mut trial = current;
                    trial[d] = centre * 10f64.powf(step * t as f64);
                    let s = score(&trial);
                    if s < current_score {
                        current = trial;
                        current_score = s;
                    }
                }
            }
        }
        debug!("kernel training start {start:?}: diag {current:?} score {current_score:.6}");
        if best.as_ref().is_none_or(|(_, s)| current_score < *s) {
            best = Some((current, current_score));
        }
    }
    let (diag, _) = best.expect("at least one start");
    Ok(KernelWeights::diagonal(diag))
}

fn feature_variances(features: &[Feature]) -> [f64; FEATURE_DIM] {
    let n = features.len().max(1) as f64;
    std::array::from_fn(|d| {
        let mean = features.iter().map(|f| f.0[d]).sum::<f64>() / n;
        let var = features.iter().map(|f| (f.0[d] - mean).powi(2)).sum::<f64>() / n;
        // treat relative round-off as constant
        if var <= 1e-24 * (1.0 + mean * mean) {
            0.0
        } else {
            var
        }
    })
}
