//! Block-banded inverse covariances `R⁻¹ = SᵀWS`.
//!
//! `S` is unit lower block-triangular with bandwidth `b` and `W` is block
//! diagonal. Row block `k` of `S` holds the identity on the diagonal and
//! `S_{k,j}` at column block `k−j`, so the whitened residual of timestep `k`
//! is `r_k = e_k + Σ_j S_{k,j}·e_{k−j}` and
//!
//! ```text
//! ½ eᵀR⁻¹e − ½ ln|R⁻¹| = Σ_k ½ r_kᵀ W_k r_k − ½ ln|W_k|.
//! ```

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::banded::SymBandMatrix;
use crate::error::{Error, Result};
use crate::linalg;

/// One factor of the likelihood: the weight `W` and the correlation blocks
/// `S_1..S_b`, where `S_j` multiplies the error `j` steps in the past.
#[derive(Clone, Debug, PartialEq)]
pub struct CorrelatedFactor {
    pub s: Vec<DMatrix<f64>>,
    pub w: DMatrix<f64>,
}

impl CorrelatedFactor {
    pub fn uncorrelated(w: DMatrix<f64>) -> Self {
        CorrelatedFactor { s: Vec::new(), w }
    }

    pub fn bandwidth(&self) -> usize {
        self.s.len()
    }

    pub fn block_dim(&self) -> usize {
        self.w.nrows()
    }

    /// `S_* = [S_b ⋯ S_1]`, an `M × bM` matrix acting on `e_{i−b:i−1}`.
    pub fn stacked_s(&self) -> DMatrix<f64> {
        let m = self.block_dim();
        let b = self.bandwidth();
        let mut out = DMatrix::zeros(m, b * m);
        for (j0, sj) in self.s.iter().enumerate() {
            let col = (b - 1 - j0) * m;
            out.view_mut((0, col), (m, m)).copy_from(sj);
        }
        out
    }

    /// Inverse of [`CorrelatedFactor::stacked_s`].
    pub fn from_stacked(s_star: &DMatrix<f64>, w: DMatrix<f64>) -> Self {
        let m = w.nrows();
        let b = s_star.ncols() / m.max(1);
        let s = (1..=b)
            .map(|j| s_star.view((0, (b - j) * m), (m, m)).into_owned())
            .collect();
        CorrelatedFactor { s, w }
    }

    /// Whitened residual `e_k + Σ_j S_j e_{k−j}` for a window ordered
    /// oldest first.
    pub fn residual(&self, window: &[DVector<f64>]) -> DVector<f64> {
        let b = self.bandwidth();
        debug_assert_eq!(window.len(), b + 1);
        let mut r = window[b].clone();
        for (j0, sj) in self.s.iter().enumerate() {
            r += sj * &window[b - 1 - j0];
        }
        r
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.block_dim();
        if self.w.ncols() != m || self.s.iter().any(|s| s.nrows() != m || s.ncols() != m) {
            return Err(Error::ModelInvalid("factor blocks are not square M×M".into()));
        }
        if !linalg::is_spd(&self.w) {
            return Err(Error::ModelInvalid("W is not symmetric positive definite".into()));
        }
        if self.s.iter().any(|s| !s.iter().all(|v| v.is_finite())) {
            return Err(Error::ModelInvalid("S contains non-finite entries".into()));
        }
        Ok(())
    }
}

/// `½ eᵀ[S 1]ᵀW[S 1]e − ½ ln|W|` for a stacked window `e = e_{k−b:k}`
/// (oldest first) and `S = [S_b ⋯ S_1]`.
pub fn factor_negloglik(window: &DVector<f64>, s_stacked: &DMatrix<f64>, w: &DMatrix<f64>) -> Result<f64> {
    let m = w.nrows();
    if w.ncols() != m || s_stacked.nrows() != m || window.len() != s_stacked.ncols() + m {
        return Err(Error::DimensionMismatch(format!(
            "window {} / S {}×{} / W {}×{}",
            window.len(),
            s_stacked.nrows(),
            s_stacked.ncols(),
            w.nrows(),
            w.ncols()
        )));
    }
    let bm = s_stacked.ncols();
    let r = s_stacked * window.rows(0, bm) + window.rows(bm, m);
    let logdet = linalg::spd_logdet(w, "W")?;
    Ok(0.5 * r.dot(&(w * &r)) - 0.5 * logdet)
}

/// Per-timestep factors `{W_k, S_{k,1..min(b,k−1)}}` of a length-`K`
/// block-banded inverse covariance.
#[derive(Clone, Debug, PartialEq)]
pub struct BandedNoiseModel {
    bandwidth: usize,
    block_dim: usize,
    factors: Vec<CorrelatedFactor>,
}

impl BandedNoiseModel {
    /// Validates and wraps per-timestep factors. Factor `k` (0-based) must
    /// carry exactly `min(b, k)` correlation blocks.
    pub fn new(bandwidth: usize, block_dim: usize, factors: Vec<CorrelatedFactor>) -> Result<Self> {
        for (k, f) in factors.iter().enumerate() {
            if f.block_dim() != block_dim {
                return Err(Error::ModelInvalid(format!(
                    "timestep {k}: block dimension {} (expected {block_dim})",
                    f.block_dim()
                )));
            }
            if f.bandwidth() != bandwidth.min(k) {
                return Err(Error::ModelInvalid(format!(
                    "timestep {k}: {} correlation blocks (expected {})",
                    f.bandwidth(),
                    bandwidth.min(k)
                )));
            }
            f.validate()
                .map_err(|e| Error::ModelInvalid(format!("timestep {k}: {e}")))?;
        }
        Ok(BandedNoiseModel {
            bandwidth,
            block_dim,
            factors,
        })
    }

    pub fn block_diagonal(ws: Vec<DMatrix<f64>>) -> Result<Self> {
        let m = ws.first().map(|w| w.nrows()).unwrap_or(1);
        Self::new(0, m, ws.into_iter().map(CorrelatedFactor::uncorrelated).collect())
    }

    pub fn bandwidth(&self) -> usize {
        self.bandwidth
    }

    pub fn block_dim(&self) -> usize {
        self.block_dim
    }

    pub fn len(&self) -> usize {
        self.factors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.factors.is_empty()
    }

    pub fn factor(&self, k: usize) -> &CorrelatedFactor {
        &self.factors[k]
    }

    pub fn factors(&self) -> &[CorrelatedFactor] {
        &self.factors
    }

    /// `R⁻¹ = SᵀWS` in banded storage (`MK × MK`, block bandwidth `b`).
    pub fn assemble_inverse_covariance(&self) -> SymBandMatrix {
        let m = self.block_dim;
        let mut out = SymBandMatrix::zeros_blocked(self.len(), m, self.bandwidth);
        for (k, f) in self.factors.iter().enumerate() {
            // row block k of S: (k, k) = I, (k, k−j) = S_{k,j}
            let cols: Vec<(usize, DMatrix<f64>)> = std::iter::once((k, DMatrix::identity(m, m)))
                .chain(f.s.iter().enumerate().map(|(j0, sj)| (k - j0 - 1, sj.clone())))
                .collect();
            let weighted: Vec<DMatrix<f64>> = cols.iter().map(|(_, sq)| &f.w * sq).collect();
            for (p, sp) in &cols {
                for ((q, _), wsq) in cols.iter().zip(&weighted) {
                    if p >= q {
                        out.add_block(p * m, q * m, &(sp.transpose() * wsq));
                    }
                }
            }
        }
        out
    }

    /// Dense `S` (unit lower block-triangular), for checks on small models.
    pub fn dense_s(&self) -> DMatrix<f64> {
        let m = self.block_dim;
        let n = self.len() * m;
        let mut s = DMatrix::identity(n, n);
        for (k, f) in self.factors.iter().enumerate() {
            for (j0, sj) in f.s.iter().enumerate() {
                s.view_mut((k * m, (k - j0 - 1) * m), (m, m)).copy_from(sj);
            }
        }
        s
    }

    /// Dense block-diagonal `W`.
    pub fn dense_w(&self) -> DMatrix<f64> {
        let m = self.block_dim;
        let n = self.len() * m;
        let mut w = DMatrix::zeros(n, n);
        for (k, f) in self.factors.iter().enumerate() {
            w.view_mut((k * m, k * m), (m, m)).copy_from(&f.w);
        }
        w
    }

    /// `ln|R⁻¹| = Σ_k ln|W_k|`.
    pub fn log_det_information(&self) -> Result<f64> {
        self.factors.iter().map(|f| linalg::spd_logdet(&f.w, "W_k")).sum()
    }

    /// Whitened residuals `r_k` for a full error sequence.
    pub fn whiten(&self, errors: &[DVector<f64>]) -> Result<Vec<DVector<f64>>> {
        self.check_errors(errors)?;
        Ok(self
            .factors
            .iter()
            .enumerate()
            .map(|(k, f)| f.residual(&errors[k - f.bandwidth()..=k]))
            .collect())
    }

    /// `½ eᵀR⁻¹e − ½ ln|R⁻¹|` evaluated factor by factor, boundary factors
    /// included.
    pub fn negloglik(&self, errors: &[DVector<f64>]) -> Result<f64> {
        self.check_errors(errors)?;
        let m = self.block_dim;
        let mut total = 0.0;
        for (k, f) in self.factors.iter().enumerate() {
            let b = f.bandwidth();
            let mut window = DVector::zeros((b + 1) * m);
            for (slot, e) in errors[k - b..=k].iter().enumerate() {
                window.rows_mut(slot * m, m).copy_from(e);
            }
            total += factor_negloglik(&window, &f.stacked_s(), &f.w)?;
        }
        Ok(total)
    }

    fn check_errors(&self, errors: &[DVector<f64>]) -> Result<()> {
        if errors.len() != self.len() || errors.iter().any(|e| e.len() != self.block_dim) {
            return Err(Error::DimensionMismatch(format!(
                "{} errors for a model of length {} and block dimension {}",
                errors.len(),
                self.len(),
                self.block_dim
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> NoiseModelJson {
        NoiseModelJson {
            bandwidth: self.bandwidth,
            block_dim: self.block_dim,
            length: self.len(),
            blocks: self
                .factors
                .iter()
                .enumerate()
                .map(|(k, f)| BlockJson {
                    k: k + 1,
                    w: row_major(&f.w),
                    s: f
                        .s
                        .iter()
                        .enumerate()
                        .map(|(j0, sj)| SBlockJson {
                            j: j0 + 1,
                            block: row_major(sj),
                        })
                        .collect(),
                })
                .collect(),
        }
    }

    pub fn from_json(json: &NoiseModelJson) -> Result<Self> {
        let m = json.block_dim;
        if json.blocks.len() != json.length {
            return Err(Error::ModelInvalid(format!(
                "length {} but {} blocks",
                json.length,
                json.blocks.len()
            )));
        }
        let mut factors = Vec::with_capacity(json.length);
        for (k0, blk) in json.blocks.iter().enumerate() {
            if blk.k != k0 + 1 {
                return Err(Error::ModelInvalid(format!("block {} out of order", blk.k)));
            }
            let w = from_row_major(m, &blk.w)?;
            let mut s = Vec::with_capacity(blk.s.len());
            for (j0, sb) in blk.s.iter().enumerate() {
                if sb.j != j0 + 1 {
                    return Err(Error::ModelInvalid(format!("S block {} out of order at k={}", sb.j, blk.k)));
                }
                s.push(from_row_major(m, &sb.block)?);
            }
            factors.push(CorrelatedFactor { s, w });
        }
        Self::new(json.bandwidth, m, factors)
    }
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.len());
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            out.push(m[(r, c)]);
        }
    }
    out
}

fn from_row_major(dim: usize, data: &[f64]) -> Result<DMatrix<f64>> {
    if data.len() != dim * dim {
        return Err(Error::ModelInvalid(format!(
            "block has {} entries (expected {})",
            data.len(),
            dim * dim
        )));
    }
    Ok(DMatrix::from_row_slice(dim, dim, data))
}

/// On-disk schema of a [`BandedNoiseModel`]. Indices `k` and `j` are
/// 1-based; matrices are row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseModelJson {
    pub bandwidth: usize,
    pub block_dim: usize,
    pub length: usize,
    pub blocks: Vec<BlockJson>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockJson {
    pub k: usize,
    #[serde(rename = "W")]
    pub w: Vec<f64>,
    #[serde(rename = "S")]
    pub s: Vec<SBlockJson>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SBlockJson {
    pub j: usize,
    pub block: Vec<f64>,
}
