//! Crate-wide error type aggregating the per-module errors.

use thiserror::Error;

use crate::correlation::CorrelationError;
use crate::dispersion::DispersionError;
use crate::fitting::FitError;
use crate::models::ModelError;
use crate::phasematch::PhaseMatchError;
use crate::simulator::SimError;

/// Any error produced by this crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Dispersion(#[from] DispersionError),
    #[error(transparent)]
    PhaseMatch(#[from] PhaseMatchError),
    #[error(transparent)]
    Correlation(#[from] CorrelationError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error(transparent)]
    Sim(#[from] SimError),
    /// A pipeline stage failed; records which stage for diagnostics.
    #[error("stage '{stage}' failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn in_stage(stage: &'static str, err: impl Into<Error>) -> Self {
        Error::Stage {
            stage,
            source: Box::new(err.into()),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
