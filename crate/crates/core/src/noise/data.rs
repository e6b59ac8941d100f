use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::noise::Feature;

/// A contiguous run of groundtruth-evaluated errors.
#[derive(Clone, Debug)]
pub struct ErrorSegment {
    pub errors: Vec<DVector<f64>>,
    pub features: Option<Vec<Feature>>,
}

impl ErrorSegment {
    pub fn new(errors: Vec<DVector<f64>>) -> Self {
        ErrorSegment {
            errors,
            features: None,
        }
    }

    pub fn with_features(errors: Vec<DVector<f64>>, features: Vec<Feature>) -> Self {
        ErrorSegment {
            errors,
            features: Some(features),
        }
    }

    pub fn len(&self) -> usize {
        self.errors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.errors.is_empty()
    }
}

/// Training errors `e_{1:N}`, optionally paired with features.
///
/// A dataset may hold several contiguous segments (for example the training
/// folds around a held-out test fold); windows never straddle a segment
/// boundary.
#[derive(Clone, Debug)]
pub struct ErrorDataset {
    block_dim: usize,
    segments: Vec<ErrorSegment>,
}

impl ErrorDataset {
    pub fn new(block_dim: usize, segments: Vec<ErrorSegment>) -> Result<Self> {
        if block_dim == 0 {
            return Err(Error::InvalidArgument("block dimension must be positive".into()));
        }
        for (s, seg) in segments.iter().enumerate() {
            for (i, e) in seg.errors.iter().enumerate() {
                if e.len() != block_dim {
                    return Err(Error::DimensionMismatch(format!(
                        "segment {s} error {i} has length {} (expected {block_dim})",
                        e.len()
                    )));
                }
                if !e.iter().all(|v| v.is_finite()) {
                    return Err(Error::InvalidArgument(format!(
                        "segment {s} error {i} is not finite"
                    )));
                }
            }
            if let Some(f) = &seg.features {
                if f.len() != seg.errors.len() {
                    return Err(Error::DimensionMismatch(format!(
                        "segment {s} has {} features for {} errors",
                        f.len(),
                        seg.errors.len()
                    )));
                }
                if !f.iter().all(|p| p.is_finite()) {
                    return Err(Error::InvalidArgument(format!("segment {s} has non-finite features")));
                }
            }
        }
        Ok(ErrorDataset { block_dim, segments })
    }

    pub fn from_errors(errors: Vec<DVector<f64>>) -> Result<Self> {
        let dim = errors.first().map(|e| e.len()).unwrap_or(1);
        Self::new(dim, vec![ErrorSegment::new(errors)])
    }

    pub fn from_errors_and_features(errors: Vec<DVector<f64>>, features: Vec<Feature>) -> Result<Self> {
        let dim = errors.first().map(|e| e.len()).unwrap_or(1);
        Self::new(dim, vec![ErrorSegment::with_features(errors, features)])
    }

    pub fn block_dim(&self) -> usize {
        self.block_dim
    }

    pub fn segments(&self) -> &[ErrorSegment] {
        &self.segments
    }

    /// Total number of errors across segments.
    pub fn len(&self) -> usize {
        self.segments.iter().map(|s| s.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn has_features(&self) -> bool {
        self.segments.iter().all(|s| s.features.is_some())
    }

    /// Number of full windows `e_{i-b:i}` available at bandwidth `b`.
    pub fn window_count(&self, b: usize) -> usize {
        self.segments.iter().map(|s| s.len().saturating_sub(b)).sum()
    }

    /// Restricts the dataset to a contiguous range of a single segment.
    pub fn slice(&self, segment: usize, range: std::ops::Range<usize>) -> Result<Self> {
        let seg = &self.segments[segment];
        let features = seg.features.as_ref().map(|f| f[range.clone()].to_vec());
        Self::new(
            self.block_dim,
            vec![ErrorSegment {
                errors: seg.errors[range].to_vec(),
                features,
            }],
        )
    }

    /// Stacks every window `[e_{i-b}; …; e_i]` (oldest first) as a row of an
    /// `n_windows × (b+1)M` matrix, together with the window's location.
    pub fn window_matrix(&self, b: usize) -> (DMatrix<f64>, Vec<WindowLocation>) {
        let m = self.block_dim;
        let n = self.window_count(b);
        let mut rows = DMatrix::zeros(n, (b + 1) * m);
        let mut locs = Vec::with_capacity(n);
        let mut r = 0;
        for (s, seg) in self.segments.iter().enumerate() {
            for i in b..seg.len() {
                for (slot, e) in seg.errors[i - b..=i].iter().enumerate() {
                    for d in 0..m {
                        rows[(r, slot * m + d)] = e[d];
                    }
                }
                locs.push(WindowLocation { segment: s, index: i });
                r += 1;
            }
        }
        (rows, locs)
    }

    pub fn feature_at(&self, loc: WindowLocation) -> Option<Feature> {
        self.segments[loc.segment].features.as_ref().map(|f| f[loc.index])
    }
}

/// Position of a window's newest error within an [`ErrorDataset`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WindowLocation {
    pub segment: usize,
    pub index: usize,
}
