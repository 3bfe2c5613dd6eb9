//! Collinear Type-II critical phase matching for an angle-tuned uniaxial
//! pair source, plus longpass-filter transmission inversion for wavelength
//! inference.
//!
//! The model is the scalar collinear one: energy conservation fixes the
//! idler from the signal, and momentum conservation
//! `dk = k_pump - k_signal - k_idler` is driven to zero in the signal
//! wavelength by a bracketed bisection. The pump propagates as an
//! extraordinary wave at the internal angle; one daughter is ordinary and
//! the other extraordinary, selectable via [`SignalPolarization`].
//!
//! Which daughter is ordinary, and where the rotation dial's zero sits
//! relative to normal incidence, are not knowable from a histogram of the
//! source output alone; both are calibration flags on [`SourceGeometry`],
//! frozen in [`SourceGeometry::bbo_angle_tuned`] against the measured
//! tuning endpoints of the reference BBO source.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dispersion::{DispersionError, UniaxialCrystal};
use crate::math::bisect_root;

/// Signal-wavelength search bracket for the root finder, nm. The effective
/// bracket is this window intersected with the dispersion validity of all
/// three waves.
pub const SIGNAL_SEARCH_BRACKET_NM: (f64, f64) = (480.0, 790.0);

/// Wavelength resolution of the bisection, nm.
pub const WAVELENGTH_RESOLUTION_NM: f64 = 1e-4;

/// Acceptable residual |dk| at a solution, rad/um.
pub const RESIDUAL_TOLERANCE_RAD_PER_UM: f64 = 1e-6;

const INTERNAL_ANGLE_TOL_DEG: f64 = 1e-9;
const INTERNAL_ANGLE_MAX_ITER: usize = 500;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum PhaseMatchError {
    #[error(transparent)]
    Dispersion(#[from] DispersionError),
    #[error("no real idler: signal {lambda_signal_nm} nm must exceed pump {lambda_pump_nm} nm")]
    NoIdler {
        lambda_pump_nm: f64,
        lambda_signal_nm: f64,
    },
    #[error("angle of incidence {theta_incidence_deg} deg outside the representable range")]
    IncidenceOutOfRange { theta_incidence_deg: f64 },
    #[error("internal-angle fixed point did not converge after {0} iterations")]
    InternalAngleDiverged(usize),
    #[error("internal angle {theta_internal_deg} deg leaves the crystal quadrant (0, 90) deg")]
    InternalAngleOutOfQuadrant { theta_internal_deg: f64 },
    #[error("no phase-matched solution at this angle ({theta_incidence_deg} deg incidence)")]
    NoSolution { theta_incidence_deg: f64 },
    #[error("solver residual {residual} rad/um exceeds tolerance at {theta_incidence_deg} deg")]
    ResidualTooLarge {
        theta_incidence_deg: f64,
        residual: f64,
    },
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("invalid filter calibration: {0}")]
    InvalidCalibration(String),
    #[error("filter not discriminating at this wavelength (transmission {transmission})")]
    NotDiscriminating { transmission: f64 },
    #[error("tuning curve needs at least 2 points, got {0}")]
    TooFewPoints(usize),
}

/// Which daughter wave carries ordinary polarization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalPolarization {
    /// Signal ordinary, idler extraordinary (calibrated default).
    Ordinary,
    /// Signal extraordinary, idler ordinary.
    Extraordinary,
}

/// Crystal cut plus pump geometry for the angle-tuned source.
#[derive(Debug, Clone)]
pub struct SourceGeometry {
    pub crystal: UniaxialCrystal,
    /// Angle between entrance-face normal and optic axis, degrees.
    pub theta_cut_deg: f64,
    /// Azimuthal cut angle, degrees. Recorded metadata; the collinear
    /// scalar model does not use it.
    pub phi_cut_deg: f64,
    pub lambda_pump_nm: f64,
    /// Crystal length, mm. Metadata only.
    pub crystal_length_mm: f64,
    /// Calibrated polarization assignment of the daughters.
    pub signal_polarization: SignalPolarization,
    /// Dial reading (degrees) at which the pump is at normal incidence.
    /// Zero means the reported angle of incidence is measured from the
    /// entrance-face normal; the calibrated preset carries the offset of
    /// the reference source's rotation stage.
    pub dial_zero_deg: f64,
}

impl SourceGeometry {
    pub fn new(
        crystal: UniaxialCrystal,
        theta_cut_deg: f64,
        phi_cut_deg: f64,
        lambda_pump_nm: f64,
        crystal_length_mm: f64,
    ) -> Result<Self, PhaseMatchError> {
        if !(theta_cut_deg > 0.0 && theta_cut_deg < 90.0) {
            return Err(PhaseMatchError::InvalidGeometry(format!(
                "cut angle {theta_cut_deg} deg outside (0, 90)"
            )));
        }
        let (min, max) = crystal.valid_range_um();
        let pump_um = lambda_pump_nm * 1e-3;
        if !(pump_um >= min && pump_um <= max) {
            return Err(PhaseMatchError::InvalidGeometry(format!(
                "pump {lambda_pump_nm} nm outside dispersion validity [{min}, {max}] um"
            )));
        }
        Ok(Self {
            crystal,
            theta_cut_deg,
            phi_cut_deg,
            lambda_pump_nm,
            crystal_length_mm,
            signal_polarization: SignalPolarization::Ordinary,
            dial_zero_deg: 0.0,
        })
    }

    pub fn with_signal_polarization(mut self, p: SignalPolarization) -> Self {
        self.signal_polarization = p;
        self
    }

    pub fn with_dial_zero_deg(mut self, dial_zero_deg: f64) -> Self {
        self.dial_zero_deg = dial_zero_deg;
        self
    }

    /// The angle-tuned BBO source: 405 nm pump, 43.6 deg cut, 30 deg
    /// azimuth, 2 mm length. Polarization assignment and dial zero are
    /// calibrated so the solved tuning curve reproduces the measured
    /// endpoints (signal 526 -> 661 nm over 12.7 -> 26.7 deg incidence).
    pub fn bbo_angle_tuned() -> Self {
        Self::new(UniaxialCrystal::bbo(), 43.6, 30.0, 405.0, 2.0)
            .expect("builtin geometry is valid")
            .with_signal_polarization(SignalPolarization::Ordinary)
            .with_dial_zero_deg(39.13)
    }

    fn pump_um(&self) -> f64 {
        self.lambda_pump_nm * 1e-3
    }
}

/// One phase-matched operating point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseMatchSolution {
    pub theta_incidence_deg: f64,
    pub theta_internal_deg: f64,
    pub lambda_signal_nm: f64,
    pub lambda_idler_nm: f64,
    /// |dk| at the solution, rad/um.
    pub residual_rad_per_um: f64,
}

/// Idler wavelength from energy conservation,
/// `1/lambda_idler = 1/lambda_pump - 1/lambda_signal` (nm).
pub fn idler_from_signal(
    lambda_pump_nm: f64,
    lambda_signal_nm: f64,
) -> Result<f64, PhaseMatchError> {
    if !(lambda_signal_nm > lambda_pump_nm) {
        return Err(PhaseMatchError::NoIdler {
            lambda_pump_nm,
            lambda_signal_nm,
        });
    }
    Ok(1.0 / (1.0 / lambda_pump_nm - 1.0 / lambda_signal_nm))
}

/// Internal pump propagation angle to the optic axis for a dial reading
/// `theta_incidence_deg`.
///
/// Refraction at the entrance face maps the external rotation
/// `theta_incidence - dial_zero` onto the internal angle
/// `theta_cut + asin(sin(rotation) / n_pump)`, with the pump's
/// extraordinary index evaluated self-consistently at the internal angle
/// (fixed-point iteration, converged below 1e-6 degree).
pub fn internal_angle(
    geometry: &SourceGeometry,
    theta_incidence_deg: f64,
) -> Result<f64, PhaseMatchError> {
    let rotation_deg = theta_incidence_deg - geometry.dial_zero_deg;
    if theta_incidence_deg.abs() >= 90.0 || rotation_deg.abs() >= 90.0 {
        return Err(PhaseMatchError::IncidenceOutOfRange {
            theta_incidence_deg,
        });
    }
    let sin_rot = rotation_deg.to_radians().sin();
    let pump_um = geometry.pump_um();
    let quadrant = 0.0..=90.0;

    let mut theta = geometry.theta_cut_deg;
    for _ in 0..INTERNAL_ANGLE_MAX_ITER {
        let clamped = theta.clamp(0.0, 90.0);
        let n_pump = geometry
            .crystal
            .n_extraordinary(pump_um, clamped.to_radians())?;
        let next = geometry.theta_cut_deg + (sin_rot / n_pump).asin().to_degrees();
        if (next - theta).abs() < INTERNAL_ANGLE_TOL_DEG {
            if !quadrant.contains(&next) {
                return Err(PhaseMatchError::InternalAngleOutOfQuadrant {
                    theta_internal_deg: next,
                });
            }
            return Ok(next);
        }
        theta = next;
    }
    Err(PhaseMatchError::InternalAngleDiverged(
        INTERNAL_ANGLE_MAX_ITER,
    ))
}

/// Collinear phase mismatch `dk = k_pump - k_signal - k_idler` in rad/um.
///
/// The pump is extraordinary at `theta_internal_deg`; the daughters take
/// the polarizations selected by the geometry. The idler follows from
/// energy conservation.
pub fn phase_mismatch(
    geometry: &SourceGeometry,
    theta_internal_deg: f64,
    lambda_signal_nm: f64,
) -> Result<f64, PhaseMatchError> {
    let theta = theta_internal_deg.to_radians();
    let pump_um = geometry.pump_um();
    let signal_um = lambda_signal_nm * 1e-3;
    let idler_um = idler_from_signal(geometry.lambda_pump_nm, lambda_signal_nm)? * 1e-3;

    let n_pump = geometry.crystal.n_extraordinary(pump_um, theta)?;
    let (n_signal, n_idler) = match geometry.signal_polarization {
        SignalPolarization::Ordinary => (
            geometry.crystal.n_ordinary(signal_um)?,
            geometry.crystal.n_extraordinary(idler_um, theta)?,
        ),
        SignalPolarization::Extraordinary => (
            geometry.crystal.n_extraordinary(signal_um, theta)?,
            geometry.crystal.n_ordinary(idler_um)?,
        ),
    };
    Ok(std::f64::consts::TAU * (n_pump / pump_um - n_signal / signal_um - n_idler / idler_um))
}

/// Effective signal bracket: the search window clipped to the dispersion
/// validity of signal and idler.
fn effective_bracket(geometry: &SourceGeometry) -> Option<(f64, f64)> {
    let (lo0, hi0) = SIGNAL_SEARCH_BRACKET_NM;
    let (min_um, max_um) = geometry.crystal.valid_range_um();
    let pump = geometry.lambda_pump_nm;
    // idler <= validity max translates into a lower signal bound
    let idler_cap = 1.0 / (1.0 / pump - 1.0 / (max_um * 1e3));
    let margin = 1e-6;
    let lo = lo0
        .max(min_um * 1e3 + margin)
        .max(idler_cap + margin)
        .max(pump + margin);
    let hi = hi0.min(max_um * 1e3 - margin);
    (lo < hi).then_some((lo, hi))
}

/// Solve for the phase-matched signal wavelength at one dial angle.
pub fn solve_signal_wavelength(
    geometry: &SourceGeometry,
    theta_incidence_deg: f64,
) -> Result<PhaseMatchSolution, PhaseMatchError> {
    let theta_internal_deg = internal_angle(geometry, theta_incidence_deg)?;
    let (lo, hi) = effective_bracket(geometry).ok_or(PhaseMatchError::NoSolution {
        theta_incidence_deg,
    })?;

    // Validity holds across the bracket by construction, so the closure
    // can be total.
    let f = |ls_nm: f64| {
        phase_mismatch(geometry, theta_internal_deg, ls_nm)
            .expect("bracket clipped to dispersion validity")
    };
    let root = bisect_root(f, lo, hi, WAVELENGTH_RESOLUTION_NM * 0.1).ok_or(
        PhaseMatchError::NoSolution {
            theta_incidence_deg,
        },
    )?;
    let residual = f(root).abs();
    if residual > RESIDUAL_TOLERANCE_RAD_PER_UM {
        return Err(PhaseMatchError::ResidualTooLarge {
            theta_incidence_deg,
            residual,
        });
    }
    Ok(PhaseMatchSolution {
        theta_incidence_deg,
        theta_internal_deg,
        lambda_signal_nm: root,
        lambda_idler_nm: idler_from_signal(geometry.lambda_pump_nm, root)?,
        residual_rad_per_um: residual,
    })
}

/// One row of a tuning curve; unsolvable angles keep their error instead
/// of being dropped.
#[derive(Debug, Clone)]
pub struct TuningPoint {
    pub theta_incidence_deg: f64,
    pub solution: Result<PhaseMatchSolution, PhaseMatchError>,
}

/// Sweep the dial and solve point-wise.
pub fn tuning_curve(
    geometry: &SourceGeometry,
    theta_start_deg: f64,
    theta_end_deg: f64,
    n_points: usize,
) -> Result<Vec<TuningPoint>, PhaseMatchError> {
    if n_points < 2 {
        return Err(PhaseMatchError::TooFewPoints(n_points));
    }
    let step = (theta_end_deg - theta_start_deg) / (n_points - 1) as f64;
    Ok((0..n_points)
        .map(|i| {
            let theta = theta_start_deg + step * i as f64;
            TuningPoint {
                theta_incidence_deg: theta,
                solution: solve_signal_wavelength(geometry, theta),
            }
        })
        .collect())
}

/// Calibration table of a longpass color-glass filter: transmission
/// sampled at increasing wavelength.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterCalibration {
    pub name: String,
    /// (wavelength nm, transmission) samples, wavelength strictly
    /// increasing, transmission non-decreasing in [0, 1].
    points: Vec<(f64, f64)>,
    /// Wavelength uncertainty of the calibration itself, nm.
    pub wavelength_uncertainty_nm: f64,
}

impl FilterCalibration {
    pub fn new(
        name: impl Into<String>,
        points: Vec<(f64, f64)>,
        wavelength_uncertainty_nm: f64,
    ) -> Result<Self, PhaseMatchError> {
        if points.len() < 2 {
            return Err(PhaseMatchError::InvalidCalibration(format!(
                "need at least 2 sample points, got {}",
                points.len()
            )));
        }
        for w in points.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(PhaseMatchError::InvalidCalibration(
                    "wavelengths must be strictly increasing".into(),
                ));
            }
            if w[1].1 < w[0].1 {
                return Err(PhaseMatchError::InvalidCalibration(
                    "transmission must be non-decreasing (longpass)".into(),
                ));
            }
        }
        if points.iter().any(|&(_, t)| !(0.0..=1.0).contains(&t)) {
            return Err(PhaseMatchError::InvalidCalibration(
                "transmission values must lie in [0, 1]".into(),
            ));
        }
        if wavelength_uncertainty_nm < 0.0 {
            return Err(PhaseMatchError::InvalidCalibration(
                "wavelength uncertainty must be non-negative".into(),
            ));
        }
        Ok(Self {
            name: name.into(),
            points,
            wavelength_uncertainty_nm,
        })
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    /// Forward interpolation: transmission at a wavelength inside the
    /// sampled range.
    pub fn transmission_at(&self, lambda_nm: f64) -> Option<f64> {
        let pts = &self.points;
        if lambda_nm < pts[0].0 || lambda_nm > pts[pts.len() - 1].0 {
            return None;
        }
        let i = pts.partition_point(|&(l, _)| l <= lambda_nm).min(pts.len() - 1);
        if i == 0 {
            return Some(pts[0].1);
        }
        let (l0, t0) = pts[i - 1];
        let (l1, t1) = pts[i];
        if lambda_nm == l0 {
            return Some(t0);
        }
        Some(t0 + (t1 - t0) * (lambda_nm - l0) / (l1 - l0))
    }
}

/// Invert a filter calibration: wavelength (and its uncertainty) from a
/// measured transmission.
///
/// The measured transmission must fall strictly inside the calibrated
/// transmission range: outside it the filter edge carries no wavelength
/// information. The returned uncertainty combines the calibration's
/// wavelength uncertainty with the transmission uncertainty mapped
/// through the local slope, in quadrature.
pub fn wavelength_from_transmission(
    cal: &FilterCalibration,
    measured_t: f64,
    delta_t: f64,
) -> Result<(f64, f64), PhaseMatchError> {
    let pts = cal.points();
    let (t_min, t_max) = (pts[0].1, pts[pts.len() - 1].1);
    if !(measured_t > t_min && measured_t < t_max) {
        return Err(PhaseMatchError::NotDiscriminating {
            transmission: measured_t,
        });
    }

    // Exact node hit: return the sample's wavelength, slope from the
    // surrounding segment pair.
    if let Some(i) = pts.iter().position(|&(_, t)| t == measured_t) {
        let j = pts.iter().rposition(|&(_, t)| t == measured_t).unwrap();
        if pts[j].1 == pts[i].1 && i != j {
            return Err(PhaseMatchError::NotDiscriminating {
                transmission: measured_t,
            });
        }
        let (lo, hi) = (i.saturating_sub(1), (i + 1).min(pts.len() - 1));
        let slope = (pts[hi].1 - pts[lo].1) / (pts[hi].0 - pts[lo].0);
        let dl = (cal.wavelength_uncertainty_nm.powi(2) + (delta_t / slope).powi(2)).sqrt();
        return Ok((pts[i].0, dl));
    }

    let i = pts.partition_point(|&(_, t)| t < measured_t);
    let (l0, t0) = pts[i - 1];
    let (l1, t1) = pts[i];
    if t1 == t0 {
        return Err(PhaseMatchError::NotDiscriminating {
            transmission: measured_t,
        });
    }
    let slope = (t1 - t0) / (l1 - l0);
    let lambda = l0 + (measured_t - t0) / slope;
    let dl = (cal.wavelength_uncertainty_nm.powi(2) + (delta_t / slope).powi(2)).sqrt();
    Ok((lambda, dl))
}
