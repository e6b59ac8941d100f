//! Run configuration: a JSON document whose keys mirror [`ExperimentConfig`].
//! Every key is optional; missing keys take their defaults.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::estimator::SolverConfig;
use crate::experiment::method::Method;
use crate::experiment::pipeline::LearnerSettings;
use crate::sim::SimConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Simulate trials and write their datasets and maps.
    Simulate,
    /// Learn noise models from a training dataset.
    Learn,
    /// Estimate a test trajectory with learned (or freshly learned) models.
    Estimate,
    /// Cross-validate methods on a recorded dataset.
    Evaluate,
    /// Simulate, learn, estimate and evaluate over many trials.
    FullPipeline,
    /// Time the prediction and optimization stages.
    Benchmark,
}

impl Mode {
    pub const ALL: [Mode; 6] = [
        Mode::Simulate,
        Mode::Learn,
        Mode::Estimate,
        Mode::Evaluate,
        Mode::FullPipeline,
        Mode::Benchmark,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Simulate => "simulate",
            Mode::Learn => "learn",
            Mode::Estimate => "estimate",
            Mode::Evaluate => "evaluate",
            Mode::FullPipeline => "full-pipeline",
            Mode::Benchmark => "benchmark",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown mode '{s}'")))
    }
}

/// Input and output locations. Relative inputs resolve against the working
/// directory.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    pub out_dir: PathBuf,
    /// Training dataset (`learn`, `estimate`).
    pub train: Option<PathBuf>,
    /// Test dataset (`estimate`) or the full recorded dataset (`evaluate`).
    pub test: Option<PathBuf>,
    pub map: Option<PathBuf>,
    /// Learned model to reuse in `estimate`.
    pub model: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchmarkConfig {
    /// Test length `K` of the bandwidth sweep.
    pub length: usize,
    pub train_length: usize,
    pub bandwidths: Vec<usize>,
    /// Test lengths of the optimizer scaling sweep.
    pub scaling_lengths: Vec<usize>,
    pub scaling_bandwidth: usize,
    /// Each timing is the median of this many runs.
    pub repeats: usize,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            length: 3000,
            train_length: 3000,
            bandwidths: (0..=5).collect(),
            scaling_lengths: vec![1_000, 10_000, 100_000],
            scaling_bandwidth: 1,
            repeats: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mode: Mode,
    /// Method used by single-method modes and reported first elsewhere.
    pub method: Method,
    /// Further methods compared in `evaluate` and `full-pipeline`.
    pub compare: Vec<Method>,
    /// Master seed; overrides `sim.seed`.
    pub seed: u64,
    pub trials: usize,
    pub folds: usize,
    pub sim: SimConfig,
    pub learner: LearnerSettings,
    pub solver: SolverConfig,
    pub benchmark: BenchmarkConfig,
    pub paths: Paths,
    /// Write the datasets of every trial in `full-pipeline`, not just the
    /// first.
    pub save_all_trials: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            mode: Mode::FullPipeline,
            method: Method::SvdFeat(1),
            compare: Vec::new(),
            seed: 0,
            trials: 25,
            folds: 4,
            sim: SimConfig::default(),
            learner: LearnerSettings::default(),
            solver: SolverConfig::default(),
            benchmark: BenchmarkConfig::default(),
            paths: Paths {
                out_dir: PathBuf::from("out"),
                ..Paths::default()
            },
            save_all_trials: false,
        }
    }
}

impl ExperimentConfig {
    /// Parses a JSON config, applying `overrides` (`dotted.key=value`, value
    /// parsed as JSON and otherwise taken as a string) before decoding.
    pub fn from_json_str(text: &str, overrides: &[String]) -> Result<Self> {
        let mut value: Value =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("config is not valid JSON: {e}")))?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let cfg: ExperimentConfig =
            serde_json::from_value(value).map_err(|e| Error::Config(format!("bad config: {e}")))?;
        Ok(cfg.normalized())
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json_str(&text, overrides)
    }

    fn normalized(mut self) -> Self {
        self.sim.seed = self.seed;
        self
    }

    /// Sets the master seed everywhere it is used.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.sim.seed = seed;
    }

    /// Sets the bandwidth of the primary method; only feature-conditioned
    /// methods have one.
    pub fn set_bandwidth(&mut self, b: usize) -> Result<()> {
        match self.method {
            Method::SvdFeat(_) => {
                self.method = Method::SvdFeat(b);
                Ok(())
            }
            m => Err(Error::Config(format!("{m} has no bandwidth to set"))),
        }
    }

    /// The primary method followed by the compared ones, without repeats.
    pub fn methods(&self) -> Vec<Method> {
        let mut out = vec![self.method];
        for m in &self.compare {
            if !out.contains(m) {
                out.push(*m);
            }
        }
        out
    }

    /// Canonical JSON used for hashing and the manifest.
    pub fn to_canonical_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        let need = |p: &Option<PathBuf>, what: &str| -> Result<()> {
            match p {
                None => Err(Error::Config(format!("mode {} needs paths.{what}", self.mode))),
                Some(p) if !p.exists() => Err(Error::Config(format!("paths.{what}: {} does not exist", p.display()))),
                Some(_) => Ok(()),
            }
        };
        match self.mode {
            Mode::Simulate | Mode::FullPipeline => {
                if self.trials == 0 {
                    return Err(Error::Config("trials must be at least 1".into()));
                }
            }
            Mode::Learn => {
                need(&self.paths.train, "train")?;
                need(&self.paths.map, "map")?;
            }
            Mode::Estimate => {
                need(&self.paths.test, "test")?;
                need(&self.paths.map, "map")?;
                if self.paths.model.is_some() {
                    need(&self.paths.model, "model")?;
                }
                if self.paths.model.is_none() || matches!(self.method, Method::SvdFeat(_)) {
                    need(&self.paths.train, "train")?;
                }
            }
            Mode::Evaluate => {
                need(&self.paths.test, "test")?;
                need(&self.paths.map, "map")?;
                if self.folds < 2 {
                    return Err(Error::Config("folds must be at least 2".into()));
                }
            }
            Mode::Benchmark => {
                let b = &self.benchmark;
                if b.length < 2 || b.train_length < 2 || b.repeats == 0 || b.bandwidths.is_empty() {
                    return Err(Error::Config("benchmark lengths, repeats and bandwidths must be non-trivial".into()));
                }
            }
        }
        if self.solver.max_iterations == 0 {
            return Err(Error::Config("solver.max_iterations must be positive".into()));
        }
        Ok(())
    }
}

/// Sets `dotted.key` in a JSON object tree, creating objects on the way.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override '{assignment}' is not key=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if part.is_empty() {
            return Err(Error::Config(format!("override key '{key}' has an empty component")));
        }
        let obj = node
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("override '{key}': '{part}' is not inside an object")))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    Ok(())
}
