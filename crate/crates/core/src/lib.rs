//! Fiber-probe degradation simulation, SRCNN super-resolution, image-quality
//! metrics and reader-study statistics.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub mod cli;
pub mod degrade;
pub mod fsutil;
pub mod harness;
pub mod image;
pub mod metrics;
pub mod phantom;
pub mod preprocess;
pub mod readerstats;
pub mod srcnn;

pub use image::{load_pgm, save_pgm, Image, ImageError, PgmDepth};

/// Binary diagnostic class. Neoplastic is the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Diagnosis {
    Neoplastic,
    NonNeoplastic,
}

impl Diagnosis {
    pub fn as_str(self) -> &'static str {
        match self {
            Diagnosis::Neoplastic => "neoplastic",
            Diagnosis::NonNeoplastic => "non_neoplastic",
        }
    }
}

impl fmt::Display for Diagnosis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Diagnosis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "neoplastic" => Ok(Diagnosis::Neoplastic),
            "non_neoplastic" => Ok(Diagnosis::NonNeoplastic),
            other => Err(format!("unknown diagnosis {other:?}")),
        }
    }
}
