//! Block-banded noise models: representation, constant learning and
//! feature-conditioned kernel learning.

pub mod data;
pub mod kernel;
pub mod learn;
pub mod model;

pub use data::{ErrorDataset, ErrorSegment, WindowLocation};
pub use kernel::{
    kernel_eval, predict_varying, train_kernel_weights, train_kernel_weights_with, Feature, KernelRegressor, KernelTrainingConfig, FEATURE_DIM,
    KernelWeights,
};
pub use learn::{learn_boundary, learn_constant, learn_constant_model, ConstantNoiseModel};
pub use model::{factor_negloglik, BandedNoiseModel, CorrelatedFactor, NoiseModelJson};
