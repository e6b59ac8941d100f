//! Learning, estimation and evaluation of one method on one train/test pair.

use std::ops::Range;

use log::{debug, info};
use nalgebra::{DVector, Matrix2};
use serde::{Deserialize, Serialize};

use crate::dataset::{LandmarkMap, Sequence};
use crate::error::{Error, Result};
use crate::estimator::{gauss_newton, EstimationProblem, EstimationResult, Measurements, PointObservation, SolverConfig};
use crate::eval::{batch_nees, ergodic_nees, nees_sequence, pose_error, rmse};
use crate::experiment::method::Method;
use crate::noise::{
    learn_boundary, learn_constant, learn_constant_model, train_kernel_weights_with, BandedNoiseModel,
    ConstantNoiseModel, CorrelatedFactor, ErrorDataset, ErrorSegment, Feature, KernelRegressor,
    KernelTrainingConfig, KernelWeights,
};
use crate::preprocess::{motion_residuals, residuals_from_groundtruth};
use crate::se2::Pose2;

/// How the kernel weights `M` of the feature-conditioned learner are set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearnerSettings {
    /// Train `M` by leave-one-out likelihood; otherwise use `fixed_weights`.
    pub train_kernel: bool,
    /// Train `M` once (on the first trial or fold) and reuse it elsewhere.
    pub share_weights: bool,
    pub kernel: KernelTrainingConfig,
    /// Diagonal of `M` when training is off (all zeros = constant model).
    pub fixed_weights: [f64; 6],
}

impl Default for LearnerSettings {
    fn default() -> Self {
        LearnerSettings {
            train_kernel: true,
            share_weights: true,
            kernel: KernelTrainingConfig::default(),
            fixed_weights: [0.0; 6],
        }
    }
}

/// Groundtruth residuals of the training portion of a sequence.
#[derive(Clone, Debug)]
pub struct TrainingData {
    /// Pseudomeasurement errors (block dimension 3) with features.
    pub measurement: ErrorDataset,
    /// Motion errors (block dimension 3).
    pub motion: ErrorDataset,
    /// Point-landmark errors `y − T·ℓ` (block dimension 2), all timesteps.
    pub points: ErrorDataset,
}

/// Extracts training residuals from the given ranges of `seq`; each range
/// becomes its own segment.
pub fn training_data(seq: &Sequence, ranges: &[Range<usize>], map: &LandmarkMap) -> Result<TrainingData> {
    let gt = seq
        .groundtruth()
        .ok_or_else(|| Error::InvalidArgument("training data needs groundtruth on every record".into()))?;
    let pseudo = seq.pseudo_poses();
    let features = seq.features();
    let odom = seq.odometry();

    let mut meas = Vec::new();
    let mut motion = Vec::new();
    let mut points = Vec::new();
    for r in ranges {
        let f = features.as_ref().map(|f| &f[r.clone()]);
        let ds = residuals_from_groundtruth(&pseudo[r.clone()], &gt[r.clone()], f)?;
        meas.extend(ds.segments().iter().cloned());
        let mo = motion_residuals(&gt[r.clone()], &odom[r.clone()], seq.dt)?;
        motion.extend(mo.segments().iter().cloned());
        for k in r.clone() {
            for obs in &seq.records[k].landmarks {
                let l = map
                    .position(obs.id)
                    .ok_or_else(|| Error::InvalidArgument(format!("landmark {} missing from map", obs.id)))?;
                let e = obs.point() - gt[k].transform_point(&l);
                points.push(DVector::from_column_slice(e.as_slice()));
            }
        }
    }
    Ok(TrainingData {
        measurement: ErrorDataset::new(3, meas)?,
        motion: ErrorDataset::new(3, motion)?,
        points: ErrorDataset::new(2, vec![ErrorSegment::new(points)])?,
    })
}

#[derive(Clone, Debug)]
pub enum MeasurementLearner {
    Constant(ConstantNoiseModel),
    Kernel {
        regressor: Box<KernelRegressor>,
        weights: KernelWeights,
        boundary: Vec<CorrelatedFactor>,
    },
    Points(Matrix2<f64>),
}

#[derive(Clone, Debug)]
pub struct LearnedModels {
    pub method: Method,
    pub motion: ConstantNoiseModel,
    pub measurement: MeasurementLearner,
}

impl LearnedModels {
    pub fn kernel_weights(&self) -> Option<&KernelWeights> {
        match &self.measurement {
            MeasurementLearner::Kernel { weights, .. } => Some(weights),
            _ => None,
        }
    }
}

/// Learns the motion and measurement models of `method`. `shared` supplies
/// kernel weights trained elsewhere.
pub fn learn_models(
    method: Method,
    data: &TrainingData,
    settings: &LearnerSettings,
    shared: Option<&KernelWeights>,
) -> Result<LearnedModels> {
    let b = method.bandwidth();
    let motion = learn_constant_model(&data.motion, b)?;
    let measurement = match method {
        Method::SvdConst => MeasurementLearner::Constant(learn_constant_model(&data.measurement, 0)?),
        Method::P2pConst => {
            let f = learn_constant(&data.points, 0)?;
            MeasurementLearner::Points(Matrix2::from_iterator(f.w.iter().copied()))
        }
        Method::SvdFeat(b) => {
            let regressor = KernelRegressor::new(&data.measurement, b)?;
            let weights = match shared {
                Some(w) => *w,
                None if settings.train_kernel => train_kernel_weights_with(&regressor, &settings.kernel)?,
                None => KernelWeights::diagonal(settings.fixed_weights),
            };
            debug!("{method}: kernel weights diag {:?}", weights.diag());
            MeasurementLearner::Kernel {
                regressor: Box::new(regressor),
                weights,
                boundary: learn_boundary(&data.measurement, b)?,
            }
        }
    };
    Ok(LearnedModels {
        method,
        motion,
        measurement,
    })
}

/// Per-timestep measurement model for a test sequence of length `len`.
/// Returns the model and the number of kernel predictions that fell back to
/// the constant model.
pub fn predict_measurement_model(
    models: &LearnedModels,
    features: Option<&[Feature]>,
    len: usize,
) -> Result<(BandedNoiseModel, usize)> {
    match &models.measurement {
        MeasurementLearner::Constant(c) => Ok((c.expand(len)?, 0)),
        MeasurementLearner::Kernel {
            regressor,
            weights,
            boundary,
        } => {
            let features = features.ok_or_else(|| Error::InvalidArgument("test sequence has no features".into()))?;
            let b = regressor.bandwidth();
            let mut factors: Vec<CorrelatedFactor> = boundary.iter().take(len).cloned().collect();
            let predicted = if len > b {
                regressor.predict_many(&features[b..len], weights)
            } else {
                Vec::new()
            };
            let fallbacks = predicted.iter().filter(|(_, fb)| *fb).count();
            factors.extend(predicted.into_iter().map(|(f, _)| f));
            Ok((BandedNoiseModel::new(b, 3, factors)?, fallbacks))
        }
        MeasurementLearner::Points(_) => Err(Error::InvalidArgument(
            "point-landmark methods have no pseudomeasurement model".into(),
        )),
    }
}

/// Assembles the estimation problem for `test` under the learned models.
pub fn build_problem(
    models: &LearnedModels,
    test: &Sequence,
    map: &LandmarkMap,
    solver: &SolverConfig,
) -> Result<(EstimationProblem, usize)> {
    let k = test.len();
    let motion_noise = models.motion.expand(k - 1)?;
    let (measurements, fallbacks) = match &models.measurement {
        MeasurementLearner::Points(w) => {
            let observations = test
                .records
                .iter()
                .map(|r| {
                    r.landmarks
                        .iter()
                        .map(|o| {
                            map.position(o.id)
                                .map(|landmark| PointObservation {
                                    landmark,
                                    observed: o.point(),
                                })
                                .ok_or_else(|| Error::InvalidArgument(format!("landmark {} missing from map", o.id)))
                        })
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<Vec<_>>>()?;
            (
                Measurements::Points {
                    observations,
                    information: *w,
                },
                0,
            )
        }
        _ => {
            let features = test.features();
            let (noise, fallbacks) = predict_measurement_model(models, features.as_deref(), k)?;
            (
                Measurements::Poses {
                    poses: test.pseudo_poses(),
                    noise,
                },
                fallbacks,
            )
        }
    };
    Ok((
        EstimationProblem {
            dt: test.dt,
            odometry: test.odometry(),
            motion_noise,
            measurements,
            initial_pose: None,
            initial_guess: None,
            config: solver.clone(),
        },
        fallbacks,
    ))
}

/// Accuracy and consistency of one estimate against groundtruth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceEvaluation {
    pub nees: Vec<f64>,
    pub ergodic_nees: f64,
    pub batch_nees: f64,
    pub rmse_translation: f64,
    pub rmse_rotation: f64,
    pub iterations: usize,
    pub final_cost: f64,
}

pub fn evaluate(result: &EstimationResult, truth: &[Pose2]) -> Result<SequenceEvaluation> {
    let nees = nees_sequence(&result.trajectory, &result.marginals, truth)?;
    let errors: Vec<_> = result.trajectory.iter().zip(truth).map(|(e, t)| pose_error(e, t)).collect();
    let (rt, rr) = rmse(&result.trajectory, truth)?;
    Ok(SequenceEvaluation {
        ergodic_nees: ergodic_nees(&nees),
        batch_nees: batch_nees(&errors, &result.information)?,
        nees,
        rmse_translation: rt,
        rmse_rotation: rr,
        iterations: result.iterations,
        final_cost: result.final_cost(),
    })
}

/// Everything produced by running a method on one train/test pair.
#[derive(Clone, Debug)]
pub struct MethodRun {
    pub models: LearnedModels,
    pub measurement_model: Option<BandedNoiseModel>,
    pub result: EstimationResult,
    pub evaluation: Option<SequenceEvaluation>,
    pub fallbacks: usize,
}

/// Settings shared by every method run of an experiment.
#[derive(Clone, Copy, Debug)]
pub struct RunContext<'a> {
    pub map: &'a LandmarkMap,
    pub settings: &'a LearnerSettings,
    pub solver: &'a SolverConfig,
}

/// Learns on `train_ranges` of `train`, estimates `test` and evaluates it
/// when groundtruth is available.
pub fn run_method(
    method: Method,
    train: &Sequence,
    train_ranges: &[Range<usize>],
    test: &Sequence,
    ctx: RunContext<'_>,
    shared: Option<&KernelWeights>,
) -> Result<MethodRun> {
    let data = training_data(train, train_ranges, ctx.map)?;
    let models = learn_models(method, &data, ctx.settings, shared)?;
    let (problem, fallbacks) = build_problem(&models, test, ctx.map, ctx.solver)?;
    let result = gauss_newton(&problem)?;
    let evaluation = test.groundtruth().map(|gt| evaluate(&result, &gt)).transpose()?;
    if let Some(e) = &evaluation {
        info!(
            "{method}: ergodic NEES {:.3}, RMSE {:.4} m / {:.5} rad, {} GN iterations",
            e.ergodic_nees, e.rmse_translation, e.rmse_rotation, e.iterations
        );
    }
    let measurement_model = match problem.measurements {
        Measurements::Poses { noise, .. } => Some(noise),
        Measurements::Points { .. } => None,
    };
    Ok(MethodRun {
        models,
        measurement_model,
        result,
        evaluation,
        fallbacks,
    })
}
