//! Experiment harness: methods, per-sequence pipeline, simulation studies,
//! benchmarks and run artifacts.

pub mod artifacts;
pub mod benchmark;
pub mod config;
pub mod method;
pub mod pipeline;
pub mod runner;
pub mod study;

pub use artifacts::{ArtifactEntry, ArtifactWriter, LearnedModelJson, Manifest, MeasurementModelJson, RunStatus};
pub use benchmark::{loglog_slope, run_benchmark, BandwidthTiming, BenchmarkReport, LengthTiming};
pub use config::{BenchmarkConfig, ExperimentConfig, Mode, Paths};
pub use method::Method;
pub use pipeline::{
    build_problem, evaluate, learn_models, predict_measurement_model, run_method, training_data, LearnedModels,
    LearnerSettings, MeasurementLearner, MethodRun, RunContext, SequenceEvaluation, TrainingData,
};
pub use study::{run_study, run_study_on, Chi2Summary, MethodSummary, StudyConfig, StudyOutput, TrialSummary};
pub use runner::{run_pipeline, CrossValidatedMethod, CrossValidationReport, FoldRow, StageError, StudyReport};
