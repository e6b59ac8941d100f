use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::Error;

/// Compared estimation methods.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    /// Point-landmark errors with a constant uncorrelated model.
    P2pConst,
    /// SVD pseudomeasurements with a constant uncorrelated model.
    SvdConst,
    /// SVD pseudomeasurements with feature-conditioned models of the given
    /// measurement and motion bandwidth.
    SvdFeat(usize),
}

impl Method {
    /// Bandwidth of the measurement model (and of the motion model).
    pub fn bandwidth(&self) -> usize {
        match self {
            Method::SvdFeat(b) => *b,
            _ => 0,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::P2pConst => write!(f, "P2P-CONST"),
            Method::SvdConst => write!(f, "SVD-CONST"),
            Method::SvdFeat(b) => write!(f, "SVD-FEAT-{b}"),
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        let upper = s.trim().to_ascii_uppercase();
        match upper.as_str() {
            "P2P-CONST" => Ok(Method::P2pConst),
            "SVD-CONST" => Ok(Method::SvdConst),
            _ => upper
                .strip_prefix("SVD-FEAT-")
                .and_then(|b| b.parse().ok())
                .map(Method::SvdFeat)
                .ok_or_else(|| {
                    Error::Config(format!(
                        "unknown method '{s}' (expected P2P-CONST, SVD-CONST or SVD-FEAT-<bandwidth>)"
                    ))
                }),
        }
    }
}

impl Serialize for Method {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Method {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
