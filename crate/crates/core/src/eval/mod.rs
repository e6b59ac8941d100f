//! Consistency and accuracy metrics.

pub mod chi2;
pub mod metrics;

pub use chi2::{chi2_cdf, chi2_pdf, chi2_quantile, chi2_sf, gamma_p, gamma_q, ln_gamma};
pub use metrics::{
    average_metrics, batch_nees, ergodic_nees, kfold, marginal_nees, median, nees_chi2_test, nees_sequence,
    pose_error, rmse, AccuracyMetrics, Chi2TestResult, Fold,
};
