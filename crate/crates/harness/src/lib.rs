//! Configuration, presets and orchestration for the `actc` command-line tool.

pub mod config;
pub mod output;
pub mod preset;
pub mod scenario;

use std::path::Path;

use thiserror::Error;

pub use config::ScenarioConfig;
pub use preset::preset;
pub use scenario::{simulate, Scenario, ScenarioResult};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("unknown preset `{0}` (known: fig1, fig3_quantizer, fig3_sparsifier)")]
    UnknownPreset(String),
    #[error("db of non-positive value {0}")]
    NonPositive(f64),
    #[error(transparent)]
    Core(#[from] actc_core::Error),
}

impl HarnessError {
    pub fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

macro_rules! from_core {
    ($($t:ty),*) => {
        $(impl From<$t> for HarnessError {
            fn from(e: $t) -> Self {
                Self::Core(e.into())
            }
        })*
    };
}

from_core!(
    actc_core::model::ModelError,
    actc_core::topology::TopologyError,
    actc_core::compression::CompressionError,
    actc_core::diffusion::DiffusionError,
    actc_core::theory::TheoryError,
    actc_core::allocation::AllocationError
);

/// `10 log₁₀ x`.
pub fn db(x: f64) -> Result<f64, HarnessError> {
    if x > 0.0 {
        Ok(10.0 * x.log10())
    } else {
        Err(HarnessError::NonPositive(x))
    }
}
