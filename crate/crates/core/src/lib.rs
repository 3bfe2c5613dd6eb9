//! Photon-pair timing analysis toolkit.
//!
//! Characterizes single-photon detector temporal response functions from
//! time-correlated photon-pair data: builds cross-correlation histograms
//! from time-tag streams, fits convolution models to extract the
//! device-under-test response, and removes the reference detector's jitter
//! in quadrature. A critical phase-matching solver predicts the
//! wavelength tuning of the angle-tuned SPDC pair source, and a Monte
//! Carlo time-tag simulator provides ground truth for validating the
//! whole analysis chain.
//!
//! The crate is organized along the processing chain:
//!
//! * [`dispersion`] — Sellmeier refractive indices for uniaxial crystals
//! * [`phasematch`] — tuning-curve solver and filter-transmission
//!   wavelength inference
//! * [`correlation`] — time-tag streams, histograms, threshold timing
//! * [`models`] — detector response families and their algebra
//! * [`fitting`] — weighted least-squares fits and jitter subtraction
//! * [`simulator`] — reproducible Monte Carlo tag-stream generation

pub mod correlation;
pub mod dispersion;
pub mod error;
pub mod fitting;
mod math;
pub mod models;
pub mod phasematch;
pub mod simulator;

pub use correlation::{
    cross_correlation, normalize_g2, threshold_crossing_time, CorrelationHistogram, Edge,
    NormalizedHistogram, TimeTagStream, Waveform,
};
pub use dispersion::{SellmeierSet, UniaxialCrystal};
pub use error::{Error, Result};
pub use fitting::{
    characterize, fit_binned, fit_histogram, initial_guess, predicted_counts,
    predicted_counts_gradient, subtract_reference, CharacterizationReport, FitParams, FitResult,
    HistogramConfig, JitterValue,
};
pub use math::{erf, erfc, erfcx, GAUSSIAN_FWHM_FACTOR};
pub use models::{predicted_c12, FigureOfMerit, ModelFamily, ResponseModel};
pub use phasematch::{
    idler_from_signal, solve_signal_wavelength, tuning_curve, wavelength_from_transmission,
    FilterCalibration, PhaseMatchSolution, SignalPolarization, SourceGeometry,
};
pub use simulator::{expected_accidentals, simulate, DetectorSim, SimConfig, SimOutput, SimTruth};
