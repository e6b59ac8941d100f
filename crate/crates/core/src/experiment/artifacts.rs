//! On-disk artifacts: learned-model files, CSV tables and the run manifest.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix2, SMatrix};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{LandmarkMap, Sequence};
use crate::error::{Error, Result};
use crate::estimator::EstimationResult;
use crate::eval::pose_error;
use crate::experiment::method::Method;
use crate::experiment::pipeline::{LearnedModels, MeasurementLearner, TrainingData};
use crate::noise::{
    learn_boundary, BandedNoiseModel, ConstantNoiseModel, KernelRegressor, KernelWeights, NoiseModelJson,
    FEATURE_DIM,
};
use crate::se2::Pose2;

/// Measurement part of a learned-model file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum MeasurementModelJson {
    /// Constant pseudomeasurement model: boundary factors, then the
    /// interior factor.
    Constant { model: NoiseModelJson },
    /// Constant 2×2 information of point-landmark errors (row-major).
    Points { information: [f64; 4] },
    /// Kernel weights `M` (row-major 6×6). Predictions need the training
    /// dataset the model was learned from.
    Kernel {
        bandwidth: usize,
        weights: Vec<f64>,
        boundary: Option<NoiseModelJson>,
    },
}

impl MeasurementModelJson {
    pub fn kind(&self) -> &'static str {
        match self {
            MeasurementModelJson::Constant { .. } => "constant",
            MeasurementModelJson::Points { .. } => "points",
            MeasurementModelJson::Kernel { .. } => "kernel",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearnedModelJson {
    pub method: Method,
    /// Constant motion model: boundary factors, then the interior factor.
    pub motion: NoiseModelJson,
    pub measurement: MeasurementModelJson,
}

fn constant_to_json(c: &ConstantNoiseModel) -> Result<NoiseModelJson> {
    Ok(c.expand(c.bandwidth() + 1)?.to_json())
}

fn constant_from_json(json: &NoiseModelJson) -> Result<ConstantNoiseModel> {
    let model = BandedNoiseModel::from_json(json)?;
    if model.len() != model.bandwidth() + 1 {
        return Err(Error::ModelInvalid(format!(
            "constant model of bandwidth {} must list {} factors, found {}",
            model.bandwidth(),
            model.bandwidth() + 1,
            model.len()
        )));
    }
    let mut factors = model.factors().to_vec();
    let interior = factors.pop().expect("length checked");
    Ok(ConstantNoiseModel {
        interior,
        boundary: factors,
    })
}

impl LearnedModelJson {
    pub fn from_models(models: &LearnedModels) -> Result<Self> {
        let measurement = match &models.measurement {
            MeasurementLearner::Constant(c) => MeasurementModelJson::Constant {
                model: constant_to_json(c)?,
            },
            MeasurementLearner::Points(w) => MeasurementModelJson::Points {
                information: [w[(0, 0)], w[(0, 1)], w[(1, 0)], w[(1, 1)]],
            },
            MeasurementLearner::Kernel {
                regressor,
                weights,
                boundary,
            } => {
                let b = regressor.bandwidth();
                MeasurementModelJson::Kernel {
                    bandwidth: b,
                    weights: weights.0.transpose().iter().copied().collect(),
                    boundary: if b > 0 {
                        Some(BandedNoiseModel::new(b, 3, boundary.clone())?.to_json())
                    } else {
                        None
                    },
                }
            }
        };
        Ok(LearnedModelJson {
            method: models.method,
            motion: constant_to_json(&models.motion)?,
            measurement,
        })
    }

    /// Rebuilds the models. Kernel models are re-attached to `training`,
    /// which must be the data they were learned from.
    pub fn to_models(&self, training: Option<&TrainingData>) -> Result<LearnedModels> {
        let motion = constant_from_json(&self.motion)?;
        let b = self.method.bandwidth();
        if motion.bandwidth() != b {
            return Err(Error::ModelInvalid(format!(
                "{} expects a motion model of bandwidth {b}, found {}",
                self.method,
                motion.bandwidth()
            )));
        }
        let measurement = match (&self.measurement, self.method) {
            (MeasurementModelJson::Constant { model }, Method::SvdConst) => {
                MeasurementLearner::Constant(constant_from_json(model)?)
            }
            (MeasurementModelJson::Points { information }, Method::P2pConst) => {
                MeasurementLearner::Points(Matrix2::new(information[0], information[1], information[2], information[3]))
            }
            (MeasurementModelJson::Kernel { bandwidth, weights, .. }, Method::SvdFeat(bm)) if *bandwidth == bm => {
                if weights.len() != FEATURE_DIM * FEATURE_DIM {
                    return Err(Error::ModelInvalid(format!(
                        "kernel weights need {} entries, found {}",
                        FEATURE_DIM * FEATURE_DIM,
                        weights.len()
                    )));
                }
                let data = training.ok_or_else(|| {
                    Error::InvalidArgument("kernel models need their training dataset to predict".into())
                })?;
                MeasurementLearner::Kernel {
                    regressor: Box::new(KernelRegressor::new(&data.measurement, bm)?),
                    weights: KernelWeights(SMatrix::from_row_slice(weights)),
                    boundary: learn_boundary(&data.measurement, bm)?,
                }
            }
            (m, method) => {
                return Err(Error::ModelInvalid(format!(
                    "{} measurement model does not belong to {method}",
                    m.kind()
                )))
            }
        };
        Ok(LearnedModels {
            method: self.method,
            motion,
            measurement,
        })
    }
}

/// Per-timestep estimation error and its 3σ envelope, as CSV rows.
pub fn envelope_rows(result: &EstimationResult, truth: &[Pose2]) -> Vec<[f64; 7]> {
    result
        .trajectory
        .iter()
        .zip(truth)
        .zip(&result.marginals)
        .enumerate()
        .map(|(k, ((est, gt), p))| {
            let e = pose_error(est, gt);
            [
                (k + 1) as f64,
                e.0[0],
                e.0[1],
                e.0[2],
                3.0 * p[(0, 0)].sqrt(),
                3.0 * p[(1, 1)].sqrt(),
                3.0 * p[(2, 2)].sqrt(),
            ]
        })
        .collect()
}

pub const ENVELOPE_HEADER: [&str; 7] = ["k", "e_rho1", "e_rho2", "e_phi", "bound_rho1", "bound_rho2", "bound_phi"];

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    /// Path relative to the output directory.
    pub path: String,
    pub sha256: String,
    pub bytes: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunStatus {
    Complete,
    /// A stage failed; the listed artifacts are from earlier stages only.
    Partial,
}

/// Machine-readable provenance of a run. Contains no timestamps so that
/// identical runs produce identical manifests.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub mode: String,
    pub seed: u64,
    pub config_sha256: String,
    pub status: RunStatus,
    pub failed_stage: Option<String>,
    pub error: Option<String>,
    pub artifacts: Vec<ArtifactEntry>,
}

/// Writes artifacts below one directory and records each in the manifest.
#[derive(Debug)]
pub struct ArtifactWriter {
    root: PathBuf,
    entries: Vec<ArtifactEntry>,
}

impl ArtifactWriter {
    pub fn new(root: &Path) -> Result<Self> {
        fs::create_dir_all(root)?;
        Ok(ArtifactWriter {
            root: root.to_path_buf(),
            entries: Vec::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn entries(&self) -> &[ArtifactEntry] {
        &self.entries
    }

    pub fn write_bytes(&mut self, rel: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.root.join(rel);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(&path, bytes)?;
        self.entries.retain(|e| e.path != rel);
        self.entries.push(ArtifactEntry {
            path: rel.to_string(),
            sha256: sha256_hex(bytes),
            bytes: bytes.len(),
        });
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<PathBuf> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.write_bytes(rel, &bytes)
    }

    pub fn write_sequence(&mut self, rel: &str, seq: &Sequence) -> Result<PathBuf> {
        let mut bytes = Vec::new();
        for r in &seq.records {
            serde_json::to_writer(&mut bytes, r)?;
            bytes.push(b'\n');
        }
        self.write_bytes(rel, &bytes)
    }

    pub fn write_map(&mut self, rel: &str, map: &LandmarkMap) -> Result<PathBuf> {
        self.write_json(rel, map)
    }

    pub fn write_csv<R: AsRef<[f64]>>(&mut self, rel: &str, header: &[&str], rows: &[R]) -> Result<PathBuf> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| Error::InvalidArgument(format!("csv: {e}"));
        w.write_record(header).map_err(csv_err)?;
        for row in rows {
            let row = row.as_ref();
            if row.len() != header.len() {
                return Err(Error::DimensionMismatch(format!(
                    "{rel}: row of {} values for {} columns",
                    row.len(),
                    header.len()
                )));
            }
            w.write_record(row.iter().map(|v| v.to_string())).map_err(csv_err)?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| Error::InvalidArgument(format!("csv: {e}")))?;
        self.write_bytes(rel, &bytes)
    }

    /// Writes `manifest.json` (not itself listed).
    pub fn finish(&self, mut manifest: Manifest) -> Result<Manifest> {
        manifest.artifacts = self.entries.clone();
        let mut bytes = serde_json::to_vec_pretty(&manifest)?;
        bytes.push(b'\n');
        fs::write(self.root.join("manifest.json"), bytes)?;
        Ok(manifest)
    }
}
