//! Mode dispatch for configuration-driven runs. Every run writes its
//! artifacts below `paths.out_dir` together with `manifest.json`; a failing
//! stage leaves a manifest marked partial.

use std::path::Path;

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{LandmarkMap, Sequence};
use crate::error::{Error, Result};
use crate::estimator::gauss_newton;
use crate::eval::{average_metrics, kfold, AccuracyMetrics};
use crate::experiment::artifacts::{
    envelope_rows, sha256_hex, ArtifactWriter, LearnedModelJson, Manifest, RunStatus, ENVELOPE_HEADER,
};
use crate::experiment::benchmark::run_benchmark;
use crate::experiment::config::{ExperimentConfig, Mode};
use crate::experiment::method::Method;
use crate::experiment::pipeline::{
    build_problem, evaluate, learn_models, predict_measurement_model, run_method, training_data, MethodRun,
    RunContext,
};
use crate::experiment::study::{run_study_on, MethodSummary, StudyConfig, CONFIDENCE_PAIRS};
use crate::noise::{train_kernel_weights_with, KernelRegressor, KernelWeights};
use crate::sim::run_trials;

/// A failed run: the stage, its error and the partial manifest if one
/// could be written.
#[derive(Debug, thiserror::Error)]
#[error("stage '{stage}' failed: {source}")]
pub struct StageError {
    pub stage: String,
    #[source]
    pub source: Error,
    pub manifest: Option<Manifest>,
}

impl StageError {
    /// 2 for configuration errors, 1 for any other stage failure.
    pub fn exit_code(&self) -> i32 {
        match self.source {
            Error::Config(_) => 2,
            _ => 1,
        }
    }
}

/// Table-style cross-validation results of one method.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldRow {
    pub fold: usize,
    /// Held-out timesteps `start..end` (0-based, end exclusive).
    pub start: usize,
    pub end: usize,
    pub ergodic_nees: f64,
    pub batch_nees: f64,
    pub rmse_translation: f64,
    pub rmse_rotation: f64,
    pub iterations: usize,
    pub kernel_fallbacks: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossValidatedMethod {
    pub method: Method,
    pub kernel_weights: Option<[f64; 6]>,
    pub folds: Vec<FoldRow>,
    pub average: AccuracyMetrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossValidationReport {
    pub length: usize,
    pub folds: usize,
    pub methods: Vec<CrossValidatedMethod>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub trials: usize,
    pub test_length: usize,
    pub train_length: usize,
    pub confidence_pairs: Vec<(f64, f64)>,
    pub methods: Vec<MethodSummary>,
}

struct Run<'a> {
    cfg: &'a ExperimentConfig,
    out: ArtifactWriter,
    stage: &'static str,
}

fn read_sequence(path: Option<&Path>, what: &str) -> Result<Sequence> {
    let p = path.ok_or_else(|| Error::Config(format!("paths.{what} is required")))?;
    Sequence::read_jsonl(p)
}

fn read_map(path: Option<&Path>) -> Result<LandmarkMap> {
    let p = path.ok_or_else(|| Error::Config("paths.map is required".into()))?;
    LandmarkMap::read_json(p)
}

impl Run<'_> {
    fn enter(&mut self, stage: &'static str) {
        info!("stage {stage}");
        self.stage = stage;
    }

    fn write_method_artifacts(&mut self, prefix: &str, run: &MethodRun, truth: Option<&[crate::se2::Pose2]>) -> Result<()> {
        self.out
            .write_json(&format!("{prefix}model.json"), &LearnedModelJson::from_models(&run.models)?)?;
        if let Some(m) = &run.measurement_model {
            self.out
                .write_json(&format!("{prefix}measurement_model.json"), &m.to_json())?;
        }
        self.out
            .write_json(&format!("{prefix}result.json"), &run.result.to_json())?;
        if let (Some(eval), Some(gt)) = (&run.evaluation, truth) {
            self.out.write_json(&format!("{prefix}evaluation.json"), eval)?;
            self.out
                .write_csv(&format!("{prefix}envelope.csv"), &ENVELOPE_HEADER, &envelope_rows(&run.result, gt))?;
        }
        Ok(())
    }

    fn simulate(&mut self) -> Result<()> {
        self.enter("simulate");
        let trials = run_trials(&self.cfg.sim, self.cfg.trials)?;
        self.enter("write");
        for t in &trials {
            let dir = format!("trial_{:03}", t.index);
            self.out.write_sequence(&format!("{dir}/train.jsonl"), &t.train)?;
            self.out.write_sequence(&format!("{dir}/test.jsonl"), &t.test)?;
            self.out.write_map(&format!("{dir}/map.json"), &t.world.to_map())?;
        }
        Ok(())
    }

    fn learn(&mut self) -> Result<()> {
        self.enter("load");
        let paths = &self.cfg.paths;
        let train = read_sequence(paths.train.as_deref(), "train")?;
        let map = read_map(paths.map.as_deref())?;
        let test = paths.test.as_deref().map(Sequence::read_jsonl).transpose()?;
        self.enter("learn");
        let data = training_data(&train, &[0..train.len()], &map)?;
        let models = learn_models(self.cfg.method, &data, &self.cfg.learner, None)?;
        self.out.write_json("model.json", &LearnedModelJson::from_models(&models)?)?;
        if let Some(test) = test {
            if self.cfg.method != Method::P2pConst {
                self.enter("predict");
                let (model, _) = predict_measurement_model(&models, test.features().as_deref(), test.len())?;
                self.out.write_json("measurement_model.json", &model.to_json())?;
            }
        }
        Ok(())
    }

    fn estimate(&mut self) -> Result<()> {
        self.enter("load");
        let paths = &self.cfg.paths;
        let test = read_sequence(paths.test.as_deref(), "test")?;
        let map = read_map(paths.map.as_deref())?;
        let train = paths.train.as_deref().map(Sequence::read_jsonl).transpose()?;
        let stored: Option<LearnedModelJson> = match paths.model.as_deref() {
            Some(p) => Some(serde_json::from_str(&std::fs::read_to_string(p)?)?),
            None => None,
        };
        self.enter("learn");
        let data = train
            .as_ref()
            .map(|t| training_data(t, &[0..t.len()], &map))
            .transpose()?;
        let models = match (&stored, &data) {
            (Some(json), _) => {
                if json.method != self.cfg.method {
                    return Err(Error::Config(format!(
                        "model file holds {} but the run asks for {}",
                        json.method, self.cfg.method
                    )));
                }
                json.to_models(data.as_ref())?
            }
            (None, Some(d)) => learn_models(self.cfg.method, d, &self.cfg.learner, None)?,
            (None, None) => return Err(Error::Config("estimate needs paths.model or paths.train".into())),
        };
        self.enter("estimate");
        let (problem, fallbacks) = build_problem(&models, &test, &map, &self.cfg.solver)?;
        let result = gauss_newton(&problem)?;
        self.enter("evaluate");
        let truth = test.groundtruth();
        let evaluation = truth.as_ref().map(|gt| evaluate(&result, gt)).transpose()?;
        let measurement_model = match problem.measurements {
            crate::estimator::Measurements::Poses { noise, .. } => Some(noise),
            crate::estimator::Measurements::Points { .. } => None,
        };
        let run = MethodRun {
            models,
            measurement_model,
            result,
            evaluation,
            fallbacks,
        };
        self.enter("write");
        self.write_method_artifacts("", &run, truth.as_deref())
    }

    fn cross_validate(&mut self) -> Result<()> {
        self.enter("load");
        let paths = &self.cfg.paths;
        let seq = read_sequence(paths.test.as_deref(), "test")?;
        let map = read_map(paths.map.as_deref())?;
        let truth = seq
            .groundtruth()
            .ok_or_else(|| Error::InvalidArgument("cross-validation needs groundtruth on every record".into()))?;
        self.enter("cross-validate");
        let folds = kfold(seq.len(), self.cfg.folds)?;
        let ctx = RunContext {
            map: &map,
            settings: &self.cfg.learner,
            solver: &self.cfg.solver,
        };
        let mut methods = Vec::new();
        let mut nees_columns: Vec<Vec<f64>> = Vec::new();
        let mut envelopes = Vec::new();
        for method in self.cfg.methods() {
            let shared = match method {
                Method::SvdFeat(b) if self.cfg.learner.share_weights && self.cfg.learner.train_kernel => {
                    let data = training_data(&seq, &folds[0].train, &map)?;
                    let reg = KernelRegressor::new(&data.measurement, b)?;
                    Some(train_kernel_weights_with(&reg, &self.cfg.learner.kernel)?)
                }
                _ => None,
            };
            let runs: Vec<MethodRun> = folds
                .par_iter()
                .map(|f| run_method(method, &seq, &f.train, &seq.slice(f.test.clone()), ctx, shared.as_ref()))
                .collect::<Result<_>>()?;
            let mut rows = Vec::new();
            let mut column = Vec::with_capacity(seq.len());
            let mut envelope = Vec::with_capacity(seq.len());
            for (i, (f, run)) in folds.iter().zip(&runs).enumerate() {
                let e = run.evaluation.as_ref().expect("groundtruth checked above");
                rows.push(FoldRow {
                    fold: i,
                    start: f.test.start,
                    end: f.test.end,
                    ergodic_nees: e.ergodic_nees,
                    batch_nees: e.batch_nees,
                    rmse_translation: e.rmse_translation,
                    rmse_rotation: e.rmse_rotation,
                    iterations: e.iterations,
                    kernel_fallbacks: run.fallbacks,
                });
                column.extend_from_slice(&e.nees);
                for mut r in envelope_rows(&run.result, &truth[f.test.clone()]) {
                    r[0] += f.test.start as f64;
                    envelope.push(r);
                }
            }
            let metrics: Vec<AccuracyMetrics> = rows
                .iter()
                .map(|r| AccuracyMetrics {
                    ergodic_nees: r.ergodic_nees,
                    rmse_translation: r.rmse_translation,
                    rmse_rotation: r.rmse_rotation,
                })
                .collect();
            let average = average_metrics(&metrics);
            info!(
                "{method}: average ergodic NEES {:.3}, RMSE {:.4} m / {:.5} rad",
                average.ergodic_nees, average.rmse_translation, average.rmse_rotation
            );
            methods.push(CrossValidatedMethod {
                method,
                kernel_weights: shared
                    .map(|w| w.diag())
                    .or_else(|| runs[0].models.kernel_weights().map(KernelWeights::diag)),
                folds: rows,
                average,
            });
            nees_columns.push(column);
            envelopes.push((method, envelope));
        }
        self.enter("write");
        let report = CrossValidationReport {
            length: seq.len(),
            folds: self.cfg.folds,
            methods,
        };
        self.out.write_json("report.json", &report)?;
        let names: Vec<String> = report.methods.iter().map(|m| m.method.to_string()).collect();
        let mut header = vec!["k", "fold"];
        header.extend(names.iter().map(String::as_str));
        let fold_of = |k: usize| folds.iter().position(|f| f.test.contains(&k)).unwrap_or(0);
        let rows: Vec<Vec<f64>> = (0..seq.len())
            .map(|k| {
                let mut row = vec![(k + 1) as f64, fold_of(k) as f64];
                row.extend(nees_columns.iter().map(|c| c[k]));
                row
            })
            .collect();
        self.out.write_csv("nees.csv", &header, &rows)?;
        for (method, env) in envelopes {
            self.out
                .write_csv(&format!("envelope_{method}.csv"), &ENVELOPE_HEADER, &env)?;
        }
        Ok(())
    }

    fn full_pipeline(&mut self) -> Result<()> {
        self.enter("simulate");
        let cfg = self.cfg;
        let trials = run_trials(&cfg.sim, cfg.trials)?;
        self.enter("write-datasets");
        let saved = if cfg.save_all_trials { trials.len() } else { 1 };
        for t in &trials[..saved] {
            let dir = format!("trial_{:03}", t.index);
            self.out.write_sequence(&format!("{dir}/train.jsonl"), &t.train)?;
            self.out.write_sequence(&format!("{dir}/test.jsonl"), &t.test)?;
            self.out.write_map(&format!("{dir}/map.json"), &t.world.to_map())?;
        }

        self.enter("study");
        let study_cfg = StudyConfig {
            sim: cfg.sim.clone(),
            trials: cfg.trials,
            methods: cfg.methods(),
            learner: cfg.learner.clone(),
            solver: cfg.solver.clone(),
        };
        let study = run_study_on(&study_cfg, &trials)?;

        self.enter("write-report");
        let report = StudyReport {
            trials: cfg.trials,
            test_length: cfg.sim.test_length,
            train_length: cfg.sim.train_length,
            confidence_pairs: CONFIDENCE_PAIRS.to_vec(),
            methods: study.methods.clone(),
        };
        self.out.write_json("report.json", &report)?;
        let bounds = &study.methods[0].chi2;
        let mut header: Vec<String> = vec!["k".into()];
        for c in bounds {
            let pct = 100.0 * (c.upper_prob - c.lower_prob);
            header.push(format!("lower_{pct:.1}"));
            header.push(format!("upper_{pct:.1}"));
        }
        header.extend(study.methods.iter().map(|m| format!("{}_nees_sum", m.method)));
        let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
        let rows: Vec<Vec<f64>> = (0..cfg.sim.test_length)
            .map(|k| {
                let mut row = vec![(k + 1) as f64];
                for c in bounds {
                    row.push(c.lower_bound);
                    row.push(c.upper_bound);
                }
                row.extend(study.chi2_sums.iter().map(|sums| sums[0][k]));
                row
            })
            .collect();
        self.out.write_csv("nees.csv", &header_refs, &rows)?;

        self.enter("trial-artifacts");
        let summary = &study.methods[0];
        let t0 = &trials[0];
        let map = t0.world.to_map();
        let shared = summary.kernel_weights.map(KernelWeights::diagonal);
        let ctx = RunContext {
            map: &map,
            settings: &cfg.learner,
            solver: &cfg.solver,
        };
        let run = run_method(summary.method, &t0.train, &[0..t0.train.len()], &t0.test, ctx, shared.as_ref())?;
        let truth = t0.test.groundtruth();
        self.write_method_artifacts("trial_000/", &run, truth.as_deref())
    }

    fn benchmark(&mut self) -> Result<()> {
        self.enter("benchmark");
        let report = run_benchmark(&self.cfg.benchmark, &self.cfg.sim, &self.cfg.learner, &self.cfg.solver)?;
        self.enter("write");
        self.out.write_json("benchmark.json", &report)?;
        let rows: Vec<[f64; 4]> = report
            .rows
            .iter()
            .map(|r| [r.bandwidth as f64, r.predict_seconds, r.optimize_seconds, r.iterations as f64])
            .collect();
        self.out.write_csv(
            "benchmark_bandwidth.csv",
            &["bandwidth", "predict_seconds", "optimize_seconds", "iterations"],
            &rows,
        )?;
        let rows: Vec<[f64; 3]> = report
            .scaling
            .iter()
            .map(|r| [r.length as f64, r.optimize_seconds, r.iterations as f64])
            .collect();
        self.out
            .write_csv("benchmark_scaling.csv", &["length", "optimize_seconds", "iterations"], &rows)?;
        Ok(())
    }
}

/// Runs the configured mode end to end.
pub fn run_pipeline(cfg: &ExperimentConfig) -> std::result::Result<Manifest, StageError> {
    let fail = |stage: &str, source: Error| StageError {
        stage: stage.to_string(),
        source,
        manifest: None,
    };
    cfg.validate().map_err(|e| match e {
        Error::Config(_) => fail("config", e),
        other => fail("config", Error::Config(other.to_string())),
    })?;
    let out = ArtifactWriter::new(&cfg.paths.out_dir).map_err(|e| fail("setup", e))?;
    let config_json = cfg.to_canonical_json();
    let mut run = Run { cfg, out, stage: "setup" };
    run.out
        .write_bytes("config.json", format!("{config_json}\n").as_bytes())
        .map_err(|e| fail("setup", e))?;

    let outcome = match cfg.mode {
        Mode::Simulate => run.simulate(),
        Mode::Learn => run.learn(),
        Mode::Estimate => run.estimate(),
        Mode::Evaluate => run.cross_validate(),
        Mode::FullPipeline => run.full_pipeline(),
        Mode::Benchmark => run.benchmark(),
    };
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        mode: cfg.mode.to_string(),
        seed: cfg.seed,
        config_sha256: sha256_hex(config_json.as_bytes()),
        status: RunStatus::Complete,
        failed_stage: None,
        error: None,
        artifacts: Vec::new(),
    };
    match outcome {
        Ok(()) => run.out.finish(manifest).map_err(|e| fail("manifest", e)),
        Err(source) => {
            let partial = Manifest {
                status: RunStatus::Partial,
                failed_stage: Some(run.stage.to_string()),
                error: Some(source.to_string()),
                ..manifest
            };
            Err(StageError {
                stage: run.stage.to_string(),
                manifest: run.out.finish(partial).ok(),
                source,
            })
        }
    }
}
