//! Analytic detector temporal-response models.
//!
//! Three families cover the detectors this toolkit deals with: a plain
//! Gaussian, a Gaussian plus an exponential diffusion tail (thin-junction
//! APDs), and a two-Gaussian mixture (gated InGaAs APDs). The weights keep
//! the conventional parameterization in which the model integral is 1,
//! A + B tau, and A + B respectively; normalization happens only where a
//! probability density is required.

use rand::Rng;
use rand_distr::{Exp1, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math::{bisect_root, erfc, erfcx, gaussian_density, golden_section_max};
pub use crate::math::GAUSSIAN_FWHM_FACTOR;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ModelError {
    #[error("invalid model parameters: {0}")]
    InvalidParameters(String),
    #[error("ratio R undefined: exponential-tail weight B is zero")]
    RatioUndefined,
    #[error("operation requires a {expected} model, got {got}")]
    WrongFamily {
        expected: ModelFamily,
        got: ModelFamily,
    },
}

/// Model family tag, used to select fit models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelFamily {
    Gaussian,
    GaussExpTail,
    DoubleGaussian,
}

impl std::fmt::Display for ModelFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelFamily::Gaussian => "gauss",
            ModelFamily::GaussExpTail => "gauss-exp",
            ModelFamily::DoubleGaussian => "double-gauss",
        })
    }
}

impl std::str::FromStr for ModelFamily {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gauss" | "gaussian" => Ok(ModelFamily::Gaussian),
            "gauss-exp" | "gauss_exp_tail" => Ok(ModelFamily::GaussExpTail),
            "double-gauss" | "double_gaussian" => Ok(ModelFamily::DoubleGaussian),
            other => Err(ModelError::InvalidParameters(format!(
                "unknown model family '{other}' (expected gauss, gauss-exp or double-gauss)"
            ))),
        }
    }
}

/// Detector temporal-response function. Times in picoseconds, densities in
/// 1/ps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ResponseModel {
    /// `G(sigma, t - mu)`
    Gaussian { mu_ps: f64, sigma_ps: f64 },
    /// `A G(sigma, x) + B (G(sigma) * 1_{u>=0} e^{-u/tau})(x)`, x = t - mu.
    GaussExpTail {
        a: f64,
        b: f64,
        mu_ps: f64,
        sigma_ps: f64,
        tau_ps: f64,
    },
    /// `A G(sigma1, t - mu1) + B G(sigma2, t - mu2)`
    DoubleGaussian {
        a: f64,
        b: f64,
        mu1_ps: f64,
        mu2_ps: f64,
        sigma1_ps: f64,
        sigma2_ps: f64,
    },
}

/// Gaussian convolved with the unnormalized one-sided exponential
/// `1_{u>=0} exp(-u/tau)`; integral over x equals tau.
///
/// Uses the exponentially-modified-Gaussian closed form, switching to the
/// scaled complementary error function when the plain exponent would
/// overflow, so the result is finite for sigma/tau and |x|/sigma up to 1e3
/// and beyond.
pub(crate) fn emg_unnormalized(sigma: f64, tau: f64, x: f64) -> f64 {
    let b = (sigma / tau - x / sigma) / std::f64::consts::SQRT_2;
    if b >= 0.0 {
        // exp(a) erfc(b) = erfcx(b) exp(a - b^2), and a - b^2 = -x^2/(2 sigma^2)
        let z = x / sigma;
        0.5 * erfcx(b) * (-0.5 * z * z).exp()
    } else {
        // b < 0 implies a < 0, so the direct form cannot overflow
        let a = sigma * sigma / (2.0 * tau * tau) - x / tau;
        0.5 * a.exp() * erfc(b)
    }
}

impl ResponseModel {
    /// Check the family's parameter invariants.
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::InvalidParameters(msg));
        match *self {
            ResponseModel::Gaussian { sigma_ps, mu_ps } => {
                if !(sigma_ps > 0.0) || !mu_ps.is_finite() {
                    return bad(format!("Gaussian needs sigma > 0, got sigma = {sigma_ps}"));
                }
            }
            ResponseModel::GaussExpTail {
                a,
                b,
                mu_ps,
                sigma_ps,
                tau_ps,
            } => {
                if !(sigma_ps > 0.0 && tau_ps > 0.0) {
                    return bad(format!(
                        "GaussExpTail needs sigma > 0 and tau > 0, got {sigma_ps}, {tau_ps}"
                    ));
                }
                if !(a >= 0.0 && b >= 0.0 && a + b * tau_ps > 0.0) || !mu_ps.is_finite() {
                    return bad(format!(
                        "GaussExpTail needs A, B >= 0 with A + B tau > 0, got A = {a}, B = {b}"
                    ));
                }
            }
            ResponseModel::DoubleGaussian {
                a,
                b,
                mu1_ps,
                mu2_ps,
                sigma1_ps,
                sigma2_ps,
            } => {
                if !(sigma1_ps > 0.0 && sigma2_ps > 0.0) {
                    return bad(format!(
                        "DoubleGaussian needs sigmas > 0, got {sigma1_ps}, {sigma2_ps}"
                    ));
                }
                if !(a > 0.0 && b >= 0.0) || !mu1_ps.is_finite() || !mu2_ps.is_finite() {
                    return bad(format!(
                        "DoubleGaussian needs A > 0 and B >= 0, got A = {a}, B = {b}"
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn family(&self) -> ModelFamily {
        match self {
            ResponseModel::Gaussian { .. } => ModelFamily::Gaussian,
            ResponseModel::GaussExpTail { .. } => ModelFamily::GaussExpTail,
            ResponseModel::DoubleGaussian { .. } => ModelFamily::DoubleGaussian,
        }
    }

    /// Closed-form evaluation of the (unnormalized) response at `t_ps`.
    pub fn evaluate(&self, t_ps: f64) -> f64 {
        match *self {
            ResponseModel::Gaussian { mu_ps, sigma_ps } => gaussian_density(sigma_ps, t_ps - mu_ps),
            ResponseModel::GaussExpTail {
                a,
                b,
                mu_ps,
                sigma_ps,
                tau_ps,
            } => {
                let x = t_ps - mu_ps;
                a * gaussian_density(sigma_ps, x) + b * emg_unnormalized(sigma_ps, tau_ps, x)
            }
            ResponseModel::DoubleGaussian {
                a,
                b,
                mu1_ps,
                mu2_ps,
                sigma1_ps,
                sigma2_ps,
            } => {
                a * gaussian_density(sigma1_ps, t_ps - mu1_ps)
                    + b * gaussian_density(sigma2_ps, t_ps - mu2_ps)
            }
        }
    }

    /// Integral of the model over all t: 1, A + B tau, or A + B.
    pub fn total_weight(&self) -> f64 {
        match *self {
            ResponseModel::Gaussian { .. } => 1.0,
            ResponseModel::GaussExpTail { a, b, tau_ps, .. } => a + b * tau_ps,
            ResponseModel::DoubleGaussian { a, b, .. } => a + b,
        }
    }

    /// Per-component integrals, in declaration order.
    pub fn component_integrals(&self) -> Vec<f64> {
        match *self {
            ResponseModel::Gaussian { .. } => vec![1.0],
            ResponseModel::GaussExpTail { a, b, tau_ps, .. } => vec![a, b * tau_ps],
            ResponseModel::DoubleGaussian { a, b, .. } => vec![a, b],
        }
    }

    /// Rescale the weights so the model integrates to 1.
    pub fn normalized(&self) -> ResponseModel {
        let w = self.total_weight();
        let mut m = self.clone();
        match &mut m {
            ResponseModel::Gaussian { .. } => {}
            ResponseModel::GaussExpTail { a, b, .. } => {
                *a /= w;
                *b /= w;
            }
            ResponseModel::DoubleGaussian { a, b, .. } => {
                *a /= w;
                *b /= w;
            }
        }
        m
    }

    /// Convolve with a zero-mean Gaussian of width `sigma_ref_ps`. Every
    /// family is closed under this: each component's sigma broadens in
    /// quadrature while weights, means and tail constants are unchanged.
    pub fn convolve_with_gaussian(&self, sigma_ref_ps: f64) -> ResponseModel {
        assert!(sigma_ref_ps >= 0.0, "reference width must be non-negative");
        let widen = |s: f64| (s * s + sigma_ref_ps * sigma_ref_ps).sqrt();
        let mut m = self.clone();
        match &mut m {
            ResponseModel::Gaussian { sigma_ps, .. } => *sigma_ps = widen(*sigma_ps),
            ResponseModel::GaussExpTail { sigma_ps, .. } => *sigma_ps = widen(*sigma_ps),
            ResponseModel::DoubleGaussian {
                sigma1_ps,
                sigma2_ps,
                ..
            } => {
                *sigma1_ps = widen(*sigma1_ps);
                *sigma2_ps = widen(*sigma2_ps);
            }
        }
        m
    }

    /// Ratio of the Gaussian to the exponential-tail component integrals,
    /// `R = A / (B tau)`. Defined for [`ResponseModel::GaussExpTail`] only.
    pub fn ratio_r(&self) -> Result<f64, ModelError> {
        match *self {
            ResponseModel::GaussExpTail { a, b, .. } => {
                if b == 0.0 {
                    Err(ModelError::RatioUndefined)
                } else {
                    // a = 0 gives R = 0; tau > 0 by the invariants
                    let tau = match *self {
                        ResponseModel::GaussExpTail { tau_ps, .. } => tau_ps,
                        _ => unreachable!(),
                    };
                    Ok(a / (b * tau))
                }
            }
            _ => Err(ModelError::WrongFamily {
                expected: ModelFamily::GaussExpTail,
                got: self.family(),
            }),
        }
    }

    fn sigma_scales(&self) -> (f64, f64) {
        match *self {
            ResponseModel::Gaussian { sigma_ps, .. } => (sigma_ps, sigma_ps),
            ResponseModel::GaussExpTail {
                sigma_ps, tau_ps, ..
            } => (sigma_ps, sigma_ps.max(tau_ps)),
            ResponseModel::DoubleGaussian {
                sigma1_ps,
                sigma2_ps,
                ..
            } => (sigma1_ps.min(sigma2_ps), sigma1_ps.max(sigma2_ps)),
        }
    }

    /// Envelope of the support relevant for peak and half-max searches.
    fn search_window(&self) -> (f64, f64) {
        match *self {
            ResponseModel::Gaussian { mu_ps, sigma_ps } => {
                (mu_ps - 8.0 * sigma_ps, mu_ps + 8.0 * sigma_ps)
            }
            ResponseModel::GaussExpTail {
                mu_ps,
                sigma_ps,
                tau_ps,
                ..
            } => (
                mu_ps - 8.0 * sigma_ps,
                mu_ps + 8.0 * sigma_ps + 30.0 * tau_ps,
            ),
            ResponseModel::DoubleGaussian {
                mu1_ps,
                mu2_ps,
                sigma1_ps,
                sigma2_ps,
                ..
            } => (
                mu1_ps.min(mu2_ps) - 8.0 * sigma1_ps.max(sigma2_ps),
                mu1_ps.max(mu2_ps) + 8.0 * sigma1_ps.max(sigma2_ps),
            ),
        }
    }

    /// Numeric full width at half maximum.
    ///
    /// Locates the global maximum (scan plus golden-section refinement),
    /// then bisects the half-maximum crossings to 1e-4 ps. For the plain
    /// Gaussian the exact `2 sqrt(2 ln 2) sigma` is returned. A multimodal
    /// model whose density dips below half maximum between peaks yields the
    /// outermost crossings with `ambiguous` set.
    pub fn fwhm(&self) -> Result<Fwhm, ModelError> {
        self.validate()?;
        if let ResponseModel::Gaussian { sigma_ps, mu_ps } = *self {
            let half = 0.5 * GAUSSIAN_FWHM_FACTOR * sigma_ps;
            return Ok(Fwhm {
                fwhm_ps: GAUSSIAN_FWHM_FACTOR * sigma_ps,
                left_ps: mu_ps - half,
                right_ps: mu_ps + half,
                ambiguous: false,
            });
        }

        let (lo, hi) = self.search_window();
        let (scale_min, _) = self.sigma_scales();
        let step = (scale_min / 8.0).max((hi - lo) / 4_000_000.0);

        // global max on the grid, golden-refined
        let n = ((hi - lo) / step).ceil() as usize;
        let mut best_i = 0;
        let mut best = f64::MIN;
        for i in 0..=n {
            let t = lo + step * i as f64;
            let v = self.evaluate(t);
            if v > best {
                best = v;
                best_i = i;
            }
        }
        let t0 = lo + step * best_i.saturating_sub(1) as f64;
        let t1 = lo + step * (best_i + 1).min(n) as f64;
        let t_peak = golden_section_max(|t| self.evaluate(t), t0, t1, 1e-9);
        let f_peak = self.evaluate(t_peak).max(best);
        let half = 0.5 * f_peak;

        // all crossings of f - half on the grid
        let g = |t: f64| self.evaluate(t) - half;
        let mut brackets = Vec::new();
        let mut prev_t = lo;
        let mut prev_v = g(lo);
        for i in 1..=n {
            let t = lo + step * i as f64;
            let v = g(t);
            if prev_v.signum() != v.signum() {
                brackets.push((prev_t, t));
            }
            prev_t = t;
            prev_v = v;
        }
        if brackets.len() < 2 {
            return Err(ModelError::InvalidParameters(
                "could not bracket half-maximum crossings".into(),
            ));
        }
        let left = bisect_root(g, brackets[0].0, brackets[0].1, 1e-4).unwrap();
        let last = brackets[brackets.len() - 1];
        let right = bisect_root(g, last.0, last.1, 1e-4).unwrap();
        Ok(Fwhm {
            fwhm_ps: right - left,
            left_ps: left,
            right_ps: right,
            ambiguous: brackets.len() > 2,
        })
    }

    /// Figures of merit quoted for a detector response.
    pub fn figure_of_merit(&self) -> Result<FigureOfMerit, ModelError> {
        let fwhm = self.fwhm()?;
        let ratio_r = match *self {
            ResponseModel::GaussExpTail { b, .. } if b > 0.0 => Some(self.ratio_r()?),
            ResponseModel::DoubleGaussian { a, b, .. } if b > 0.0 => Some(a / b),
            _ => None,
        };
        Ok(FigureOfMerit {
            fwhm_ps: fwhm.fwhm_ps,
            multimodal: fwhm.ambiguous,
            ratio_r,
            component_integrals: self.component_integrals(),
        })
    }

    /// Draw one response delay from the normalized density.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            ResponseModel::Gaussian { mu_ps, sigma_ps } => {
                mu_ps + sigma_ps * rng.sample::<f64, _>(StandardNormal)
            }
            ResponseModel::GaussExpTail {
                a,
                b,
                mu_ps,
                sigma_ps,
                tau_ps,
            } => {
                let tail_weight = b * tau_ps / (a + b * tau_ps);
                let pick: f64 = rng.gen();
                let g = mu_ps + sigma_ps * rng.sample::<f64, _>(StandardNormal);
                if pick < tail_weight {
                    g + tau_ps * rng.sample::<f64, _>(Exp1)
                } else {
                    g
                }
            }
            ResponseModel::DoubleGaussian {
                a,
                b,
                mu1_ps,
                mu2_ps,
                sigma1_ps,
                sigma2_ps,
            } => {
                let second_weight = b / (a + b);
                let pick: f64 = rng.gen();
                let z: f64 = rng.sample(StandardNormal);
                if pick < second_weight {
                    mu2_ps + sigma2_ps * z
                } else {
                    mu1_ps + sigma1_ps * z
                }
            }
        }
    }
}

/// Result of a numeric FWHM search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fwhm {
    pub fwhm_ps: f64,
    pub left_ps: f64,
    pub right_ps: f64,
    /// More than two half-max crossings exist; the outermost pair was used.
    pub ambiguous: bool,
}

/// Derived quantities reported alongside a fitted response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FigureOfMerit {
    pub fwhm_ps: f64,
    pub multimodal: bool,
    /// Gaussian-to-tail integral ratio (A/(B tau)) for the tail model, or
    /// the weight ratio A/B for the two-Gaussian model.
    pub ratio_r: Option<f64>,
    pub component_integrals: Vec<f64>,
}

/// Expected coincidence counts per bin at time difference `t_ps`:
/// the response (normalized, broadened by the reference detector) scaled
/// by the pair count and bin width, on top of the accidental floor.
pub fn predicted_c12(
    model: &ResponseModel,
    sigma_ref_ps: f64,
    n_pairs: f64,
    floor_counts: f64,
    bin_width_ps: f64,
    t_ps: f64,
) -> f64 {
    let broadened = model.normalized().convolve_with_gaussian(sigma_ref_ps);
    n_pairs * bin_width_ps * broadened.evaluate(t_ps) + floor_counts
}
