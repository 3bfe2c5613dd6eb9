//! Refractive-index model for negative uniaxial crystals.
//!
//! Indices follow a four-coefficient Sellmeier form
//! `n^2(lambda) = b1 + b2/(lambda^2 - b3) - b4 lambda^2` with wavelength in
//! micrometers. Coefficient sets live in TOML data files so further crystals
//! can be added without code changes; the BBO set ships embedded.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Embedded coefficient file for beta-barium borate.
const BBO_TOML: &str = include_str!("../data/bbo.toml");

#[derive(Debug, Clone, Error, PartialEq)]
pub enum DispersionError {
    #[error("wavelength {lambda_um} um outside validity range [{min_um}, {max_um}] um")]
    WavelengthOutOfRange {
        lambda_um: f64,
        min_um: f64,
        max_um: f64,
    },
    #[error("propagation angle {theta_rad} rad outside [0, pi/2]")]
    AngleOutOfRange { theta_rad: f64 },
    #[error("invalid crystal data: {0}")]
    InvalidCrystal(String),
    #[error("failed to parse crystal file: {0}")]
    Parse(String),
    #[error("failed to read crystal file: {0}")]
    Io(String),
}

/// One Sellmeier coefficient set (one polarization).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SellmeierSet {
    pub b1: f64,
    pub b2: f64,
    pub b3: f64,
    pub b4: f64,
}

impl SellmeierSet {
    /// n^2 at `lambda_um`; no range check.
    fn n_squared(&self, lambda_um: f64) -> f64 {
        let l2 = lambda_um * lambda_um;
        self.b1 + self.b2 / (l2 - self.b3) - self.b4 * l2
    }
}

#[derive(Debug, Clone, Deserialize)]
struct CrystalFile {
    name: String,
    #[serde(default)]
    source: String,
    valid_range_um: (f64, f64),
    ordinary: SellmeierSet,
    extraordinary: SellmeierSet,
}

/// A negative uniaxial crystal: ordinary and principal extraordinary
/// Sellmeier sets plus their common validity window.
#[derive(Debug, Clone, PartialEq)]
pub struct UniaxialCrystal {
    name: String,
    source: String,
    valid_range_um: (f64, f64),
    ordinary: SellmeierSet,
    extraordinary: SellmeierSet,
}

impl UniaxialCrystal {
    /// Build and validate a crystal. Checks, over a sampled grid of the
    /// validity window: no Sellmeier pole inside the window, n^2 > 1, and
    /// n_e < n_o (negative uniaxial).
    pub fn new(
        name: impl Into<String>,
        source: impl Into<String>,
        valid_range_um: (f64, f64),
        ordinary: SellmeierSet,
        extraordinary: SellmeierSet,
    ) -> Result<Self, DispersionError> {
        let (min, max) = valid_range_um;
        if !(min > 0.0 && max > min) {
            return Err(DispersionError::InvalidCrystal(format!(
                "validity range [{min}, {max}] um is not an increasing positive interval"
            )));
        }
        for set in [&ordinary, &extraordinary] {
            if set.b3 >= min * min {
                return Err(DispersionError::InvalidCrystal(format!(
                    "Sellmeier pole at lambda^2 = {} um^2 lies inside the validity window",
                    set.b3
                )));
            }
        }
        let crystal = Self {
            name: name.into(),
            source: source.into(),
            valid_range_um,
            ordinary,
            extraordinary,
        };
        const SAMPLES: usize = 257;
        for i in 0..SAMPLES {
            let l = min + (max - min) * i as f64 / (SAMPLES - 1) as f64;
            let no2 = crystal.ordinary.n_squared(l);
            let ne2 = crystal.extraordinary.n_squared(l);
            if !(no2 > 1.0) || !(ne2 > 1.0) {
                return Err(DispersionError::InvalidCrystal(format!(
                    "n^2 <= 1 at lambda = {l} um"
                )));
            }
            if ne2 >= no2 {
                return Err(DispersionError::InvalidCrystal(format!(
                    "not negative uniaxial: n_e >= n_o at lambda = {l} um"
                )));
            }
        }
        Ok(crystal)
    }

    /// The embedded BBO crystal.
    pub fn bbo() -> Self {
        Self::from_toml_str(BBO_TOML).expect("embedded BBO data is valid")
    }

    /// Parse a crystal from TOML text (same schema as the shipped data file).
    pub fn from_toml_str(text: &str) -> Result<Self, DispersionError> {
        let file: CrystalFile =
            toml::from_str(text).map_err(|e| DispersionError::Parse(e.to_string()))?;
        Self::new(
            file.name,
            file.source,
            file.valid_range_um,
            file.ordinary,
            file.extraordinary,
        )
    }

    /// Load a crystal coefficient file from disk.
    pub fn from_file(path: impl AsRef<std::path::Path>) -> Result<Self, DispersionError> {
        let text = std::fs::read_to_string(path).map_err(|e| DispersionError::Io(e.to_string()))?;
        Self::from_toml_str(&text)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Literature citation for the coefficient set.
    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn valid_range_um(&self) -> (f64, f64) {
        self.valid_range_um
    }

    fn check_range(&self, lambda_um: f64) -> Result<(), DispersionError> {
        let (min, max) = self.valid_range_um;
        if lambda_um < min || lambda_um > max || !lambda_um.is_finite() {
            return Err(DispersionError::WavelengthOutOfRange {
                lambda_um,
                min_um: min,
                max_um: max,
            });
        }
        Ok(())
    }

    /// Ordinary refractive index.
    pub fn n_ordinary(&self, lambda_um: f64) -> Result<f64, DispersionError> {
        self.check_range(lambda_um)?;
        Ok(self.ordinary.n_squared(lambda_um).sqrt())
    }

    /// Principal extraordinary index (propagation at 90 degrees to the
    /// optic axis).
    pub fn n_extraordinary_principal(&self, lambda_um: f64) -> Result<f64, DispersionError> {
        self.check_range(lambda_um)?;
        Ok(self.extraordinary.n_squared(lambda_um).sqrt())
    }

    /// Extraordinary index at propagation angle `theta_rad` to the optic
    /// axis, from the uniaxial index ellipse
    /// `1/n^2(theta) = cos^2(theta)/n_o^2 + sin^2(theta)/n_e^2`.
    ///
    /// At theta = 0 this reduces to the ordinary index through the same
    /// arithmetic path (cos = 1, sin = 0).
    pub fn n_extraordinary(&self, lambda_um: f64, theta_rad: f64) -> Result<f64, DispersionError> {
        self.check_range(lambda_um)?;
        if !(0.0..=std::f64::consts::FRAC_PI_2).contains(&theta_rad) {
            return Err(DispersionError::AngleOutOfRange { theta_rad });
        }
        let (s, c) = theta_rad.sin_cos();
        // exact identity on-axis: same arithmetic path as the ordinary index
        if s == 0.0 {
            return Ok(self.ordinary.n_squared(lambda_um).sqrt());
        }
        if c == 0.0 {
            return Ok(self.extraordinary.n_squared(lambda_um).sqrt());
        }
        let inv = c * c / self.ordinary.n_squared(lambda_um)
            + s * s / self.extraordinary.n_squared(lambda_um);
        Ok(1.0 / inv.sqrt())
    }
}
