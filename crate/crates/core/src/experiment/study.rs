//! Monte Carlo simulation studies over many trials.

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::estimator::SolverConfig;
use crate::eval::{median, nees_chi2_test, Chi2TestResult};
use crate::experiment::method::Method;
use crate::experiment::pipeline::{run_method, training_data, LearnerSettings, RunContext, SequenceEvaluation};
use crate::noise::{train_kernel_weights_with, KernelRegressor, KernelWeights};
use crate::sim::{simulate_trial, SimConfig, Trial};

/// Confidence pairs `(ℓ, u)` reported by the χ² test.
pub const CONFIDENCE_PAIRS: [(f64, f64); 2] = [(0.001, 0.999), (0.025, 0.975)];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub sim: SimConfig,
    pub trials: usize,
    pub methods: Vec<Method>,
    pub learner: LearnerSettings,
    pub solver: SolverConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub trial: u64,
    pub ergodic_nees: f64,
    pub batch_nees: f64,
    pub rmse_translation: f64,
    pub rmse_rotation: f64,
    pub iterations: usize,
    pub kernel_fallbacks: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Chi2Summary {
    pub lower_prob: f64,
    pub upper_prob: f64,
    pub lower_bound: f64,
    pub upper_bound: f64,
    pub violation_fraction: f64,
}

impl From<&Chi2TestResult> for Chi2Summary {
    fn from(t: &Chi2TestResult) -> Self {
        Chi2Summary {
            lower_prob: t.lower_prob,
            upper_prob: t.upper_prob,
            lower_bound: t.lower_bound,
            upper_bound: t.upper_bound,
            violation_fraction: t.violation_fraction,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub kernel_weights: Option<[f64; 6]>,
    pub trials: Vec<TrialSummary>,
    pub chi2: Vec<Chi2Summary>,
    pub median_ergodic_nees: f64,
    pub median_rmse_translation: f64,
    pub median_rmse_rotation: f64,
}

/// Study results: the report plus per-method, per-trial NEES sequences.
#[derive(Clone, Debug)]
pub struct StudyOutput {
    pub methods: Vec<MethodSummary>,
    /// `nees[m][trial][k]`.
    pub nees: Vec<Vec<Vec<f64>>>,
    /// `sums[m][pair][k]`: NEES summed over trials.
    pub chi2_sums: Vec<Vec<Vec<f64>>>,
}

impl StudyOutput {
    pub fn summary(&self, method: Method) -> Option<&MethodSummary> {
        self.methods.iter().find(|m| m.method == method)
    }
}

fn shared_weights(method: Method, trial: &Trial, learner: &LearnerSettings) -> Result<Option<KernelWeights>> {
    let Method::SvdFeat(b) = method else { return Ok(None) };
    if !learner.share_weights {
        return Ok(None);
    }
    if !learner.train_kernel {
        return Ok(Some(KernelWeights::diagonal(learner.fixed_weights)));
    }
    let data = training_data(&trial.train, &[0..trial.train.len()], &trial.world.to_map())?;
    let reg = KernelRegressor::new(&data.measurement, b)?;
    let w = train_kernel_weights_with(&reg, &learner.kernel)?;
    info!("{method}: shared kernel weights diag {:?}", w.diag());
    Ok(Some(w))
}

/// Runs every method on every trial. Trials are simulated once and shared
/// by all methods.
pub fn run_study(cfg: &StudyConfig) -> Result<StudyOutput> {
    let trials: Vec<Trial> = (0..cfg.trials as u64)
        .into_par_iter()
        .map(|i| simulate_trial(&cfg.sim, i))
        .collect::<Result<_>>()?;
    run_study_on(cfg, &trials)
}

/// Like [`run_study`] on already simulated trials.
pub fn run_study_on(cfg: &StudyConfig, trials: &[Trial]) -> Result<StudyOutput> {
    let mut methods = Vec::new();
    let mut all_nees = Vec::new();
    let mut all_sums = Vec::new();
    for &method in &cfg.methods {
        let shared = match trials.first() {
            Some(t) => shared_weights(method, t, &cfg.learner)?,
            None => None,
        };
        let runs: Vec<(SequenceEvaluation, usize, Option<[f64; 6]>)> = trials
            .par_iter()
            .map(|t| {
                let map = t.world.to_map();
                let ctx = RunContext {
                    map: &map,
                    settings: &cfg.learner,
                    solver: &cfg.solver,
                };
                let run = run_method(method, &t.train, &[0..t.train.len()], &t.test, ctx, shared.as_ref())?;
                let weights = run.models.kernel_weights().map(|w| w.diag());
                let eval = run.evaluation.expect("simulated sequences carry groundtruth");
                Ok((eval, run.fallbacks, weights))
            })
            .collect::<Result<_>>()?;

        let nees: Vec<Vec<f64>> = runs.iter().map(|(e, _, _)| e.nees.clone()).collect();
        let tests = CONFIDENCE_PAIRS
            .iter()
            .map(|&(l, u)| nees_chi2_test(&nees, 3, l, u))
            .collect::<Result<Vec<_>>>()?;
        let trial_rows: Vec<TrialSummary> = runs
            .iter()
            .zip(trials)
            .map(|((e, fb, _), t)| TrialSummary {
                trial: t.index,
                ergodic_nees: e.ergodic_nees,
                batch_nees: e.batch_nees,
                rmse_translation: e.rmse_translation,
                rmse_rotation: e.rmse_rotation,
                iterations: e.iterations,
                kernel_fallbacks: *fb,
            })
            .collect();
        let col = |f: fn(&TrialSummary) -> f64| median(&trial_rows.iter().map(f).collect::<Vec<_>>());
        let summary = MethodSummary {
            method,
            kernel_weights: shared.map(|w| w.diag()).or_else(|| runs.first().and_then(|r| r.2)),
            chi2: tests.iter().map(Chi2Summary::from).collect(),
            median_ergodic_nees: col(|t| t.ergodic_nees),
            median_rmse_translation: col(|t| t.rmse_translation),
            median_rmse_rotation: col(|t| t.rmse_rotation),
            trials: trial_rows,
        };
        info!(
            "{method}: median ergodic NEES {:.3}, χ² violations {:.4} / {:.4}",
            summary.median_ergodic_nees, summary.chi2[0].violation_fraction, summary.chi2[1].violation_fraction
        );
        all_sums.push(tests.into_iter().map(|t| t.sums).collect());
        all_nees.push(nees);
        methods.push(summary);
    }
    Ok(StudyOutput {
        methods,
        nees: all_nees,
        chi2_sums: all_sums,
    })
}
