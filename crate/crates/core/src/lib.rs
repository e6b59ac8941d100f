//! Learning time-correlated measurement noise models as block-banded inverse
//! covariances and using them for batch MAP trajectory estimation on SE(2).

pub mod banded;
pub mod dataset;
pub mod error;
pub mod estimator;
pub mod eval;
pub mod experiment;
pub mod linalg;
pub mod noise;
pub mod preprocess;
pub mod se2;
pub mod sim;

pub use error::{Error, Result};
pub use se2::{Pose2, Twist2};
