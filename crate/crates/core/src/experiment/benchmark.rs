//! Wall-clock timing of the two per-sequence stages: predicting the noise
//! parameters of every timestep, and optimizing (Gauss-Newton to
//! convergence plus marginal covariance recovery).

use std::time::Instant;

use log::info;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{gauss_newton, SolverConfig};
use crate::eval::median;
use crate::experiment::config::BenchmarkConfig;
use crate::experiment::method::Method;
use crate::experiment::pipeline::{
    build_problem, learn_models, predict_measurement_model, training_data, LearnedModels, LearnerSettings,
    MeasurementLearner,
};
use crate::noise::learn_constant_model;
use crate::sim::{simulate_sequence, simulate_trial, SequenceKind, SimConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandwidthTiming {
    pub bandwidth: usize,
    pub predict_seconds: f64,
    pub optimize_seconds: f64,
    pub iterations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LengthTiming {
    pub length: usize,
    pub optimize_seconds: f64,
    pub iterations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub length: usize,
    pub train_length: usize,
    pub repeats: usize,
    pub rows: Vec<BandwidthTiming>,
    /// Least-squares slope of `ln t` against `ln(b + 1)`.
    pub predict_exponent: f64,
    pub optimize_exponent: f64,
    pub scaling_bandwidth: usize,
    pub scaling: Vec<LengthTiming>,
    /// Least-squares slope of `ln t` against `ln K`.
    pub scaling_exponent: f64,
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len().min(y.len());
    if n < 2 {
        return f64::NAN;
    }
    let lx: Vec<f64> = x[..n].iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y[..n].iter().map(|v| v.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n as f64;
    let my = ly.iter().sum::<f64>() / n as f64;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

/// Median wall-clock seconds of `repeats` calls after one untimed warm-up,
/// plus the last output.
fn time_median<T>(repeats: usize, mut f: impl FnMut() -> Result<T>) -> Result<(f64, T)> {
    f()?;
    let mut times = Vec::with_capacity(repeats);
    let mut last = None;
    for _ in 0..repeats.max(1) {
        let start = Instant::now();
        let out = f()?;
        times.push(start.elapsed().as_secs_f64());
        last = Some(out);
    }
    Ok((median(&times), last.expect("at least one repeat")))
}

/// Runs the bandwidth sweep and the length-scaling sweep. Kernel weights
/// are `learner.fixed_weights`; their value does not change the work done.
pub fn run_benchmark(
    cfg: &BenchmarkConfig,
    sim: &SimConfig,
    learner: &LearnerSettings,
    solver: &SolverConfig,
) -> Result<BenchmarkReport> {
    if cfg.bandwidths.is_empty() || cfg.repeats == 0 {
        return Err(Error::Config("benchmark needs bandwidths and at least one repeat".into()));
    }
    let sim = SimConfig {
        test_length: cfg.length,
        train_length: cfg.train_length,
        ..sim.clone()
    };
    let trial = simulate_trial(&sim, 0)?;
    let map = trial.world.to_map();
    let data = training_data(&trial.train, &[0..trial.train.len()], &map)?;
    let settings = LearnerSettings {
        train_kernel: false,
        share_weights: false,
        ..learner.clone()
    };
    let features = trial.test.features();

    let mut rows = Vec::with_capacity(cfg.bandwidths.len());
    for &b in &cfg.bandwidths {
        let models = learn_models(Method::SvdFeat(b), &data, &settings, None)?;
        let (predict_seconds, _) = time_median(cfg.repeats, || {
            predict_measurement_model(&models, features.as_deref(), trial.test.len())
        })?;
        let (problem, _) = build_problem(&models, &trial.test, &map, solver)?;
        let (optimize_seconds, result) = time_median(cfg.repeats, || gauss_newton(&problem))?;
        info!(
            "bandwidth {b}: predict {predict_seconds:.4} s, optimize {optimize_seconds:.4} s ({} iterations)",
            result.iterations
        );
        rows.push(BandwidthTiming {
            bandwidth: b,
            predict_seconds,
            optimize_seconds,
            iterations: result.iterations,
        });
    }

    let bs = cfg.scaling_bandwidth;
    let constant = LearnedModels {
        method: Method::SvdFeat(bs),
        motion: learn_constant_model(&data.motion, bs)?,
        measurement: MeasurementLearner::Constant(learn_constant_model(&data.measurement, bs)?),
    };
    let mut scaling = Vec::with_capacity(cfg.scaling_lengths.len());
    for &k in &cfg.scaling_lengths {
        let test = simulate_sequence(&sim, &trial.world, 0, SequenceKind::Test, k)?;
        let (problem, _) = build_problem(&constant, &test, &map, solver)?;
        let (optimize_seconds, result) = time_median(cfg.repeats, || gauss_newton(&problem))?;
        info!("K = {k}: optimize {optimize_seconds:.4} s ({} iterations)", result.iterations);
        scaling.push(LengthTiming {
            length: k,
            optimize_seconds,
            iterations: result.iterations,
        });
    }

    let bx: Vec<f64> = rows.iter().map(|r| r.bandwidth as f64 + 1.0).collect();
    let kx: Vec<f64> = scaling.iter().map(|r| r.length as f64).collect();
    Ok(BenchmarkReport {
        length: cfg.length,
        train_length: cfg.train_length,
        repeats: cfg.repeats,
        predict_exponent: loglog_slope(&bx, &rows.iter().map(|r| r.predict_seconds).collect::<Vec<_>>()),
        optimize_exponent: loglog_slope(&bx, &rows.iter().map(|r| r.optimize_seconds).collect::<Vec<_>>()),
        rows,
        scaling_bandwidth: bs,
        scaling_exponent: loglog_slope(&kx, &scaling.iter().map(|r| r.optimize_seconds).collect::<Vec<_>>()),
        scaling,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_power_law() {
        let x = [1.0, 2.0, 4.0, 8.0];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powf(1.5)).collect();
        assert!((loglog_slope(&x, &y) - 1.5).abs() < 1e-12);
        assert!(loglog_slope(&[1.0], &[1.0]).is_nan());
    }

    #[test]
    fn small_benchmark_runs() {
        let cfg = BenchmarkConfig {
            length: 80,
            train_length: 300,
            bandwidths: vec![0, 2],
            scaling_lengths: vec![50, 100],
            scaling_bandwidth: 1,
            repeats: 1,
        };
        let r = run_benchmark(&cfg, &SimConfig::default(), &LearnerSettings::default(), &SolverConfig::default()).unwrap();
        assert_eq!(r.rows.len(), 2);
        assert_eq!(r.scaling.len(), 2);
        assert!(r.rows.iter().all(|row| row.predict_seconds > 0.0 && row.optimize_seconds > 0.0));
        assert!(r.predict_exponent.is_finite() && r.scaling_exponent.is_finite());
    }
}
