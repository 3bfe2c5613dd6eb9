//! Weighted nonlinear least-squares estimation of detector response
//! parameters from coincidence histograms, reference-jitter subtraction,
//! and the end-to-end characterization pipeline.
//!
//! Fits minimize `sum_b (counts_b - model_b)^2 / max(counts_b, 1)` — the
//! usual Poisson-variance weighting with a floor so empty bins carry unit
//! weight. The reference detector enters as a fixed Gaussian width folded
//! into the model, never as a fitted parameter, so the fitted shape
//! parameters describe the device under test directly.

mod lm;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::correlation::{
    cross_correlation, default_sideband, normalize_g2, CorrelationError, CorrelationHistogram,
    NormalizedHistogram, TimeTagStream,
};
use crate::error::Error;
use crate::math::GAUSSIAN_FWHM_FACTOR;
use crate::models::{
    emg_unnormalized, FigureOfMerit, ModelError, ModelFamily, ResponseModel,
};
use lm::{LeastSquares, LmError, LmOptions};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum FitError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Correlation(#[from] CorrelationError),
    #[error("histogram has {bins} usable bins for {params} parameters; need at least {}", 3 * params)]
    TooFewBins { bins: usize, params: usize },
    #[error("no discernible peak (max bin {max} vs floor {floor:.2}); acquire longer or check the delay window")]
    NoPeak { max: u64, floor: f64 },
    #[error("degenerate fit: unidentifiable parameter combination {combination}")]
    Degenerate { combination: String },
    #[error("unphysical subtraction: reference jitter {sigma_ref} ps is not below the combined width {sigma12} ps")]
    UnphysicalSubtraction { sigma12: f64, sigma_ref: f64 },
    #[error("invalid fit input: {0}")]
    InvalidInput(String),
}

/// A Gaussian-equivalent jitter value with its 1-sigma uncertainty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JitterValue {
    pub sigma_ps: f64,
    pub sigma_err_ps: f64,
    /// Wavelength this jitter was characterized at, nm. Metadata only.
    pub wavelength_nm: Option<f64>,
}

impl JitterValue {
    pub fn new(sigma_ps: f64, sigma_err_ps: f64) -> Self {
        Self {
            sigma_ps,
            sigma_err_ps,
            wavelength_nm: None,
        }
    }

    pub fn at_wavelength(mut self, lambda_nm: f64) -> Self {
        self.wavelength_nm = Some(lambda_nm);
        self
    }

    pub fn fwhm_ps(&self) -> f64 {
        GAUSSIAN_FWHM_FACTOR * self.sigma_ps
    }

    pub fn fwhm_err_ps(&self) -> f64 {
        GAUSSIAN_FWHM_FACTOR * self.sigma_err_ps
    }
}

/// Remove a known reference jitter from a measured combined width in
/// quadrature: `sigma_dut = sqrt(sigma12^2 - sigma_ref^2)`, with
/// first-order error propagation.
pub fn subtract_reference(
    combined: &JitterValue,
    reference: &JitterValue,
) -> Result<JitterValue, FitError> {
    let (s12, sr) = (combined.sigma_ps, reference.sigma_ps);
    if !(s12 > sr) {
        return Err(FitError::UnphysicalSubtraction {
            sigma12: s12,
            sigma_ref: sr,
        });
    }
    let sigma = (s12 * s12 - sr * sr).sqrt();
    let err = ((s12 * combined.sigma_err_ps).powi(2) + (sr * reference.sigma_err_ps).powi(2))
        .sqrt()
        / sigma;
    Ok(JitterValue {
        sigma_ps: sigma,
        sigma_err_ps: err,
        wavelength_nm: combined.wavelength_nm,
    })
}

/// Fit parameters in the per-family internal parameterization. Weights are
/// expressed as the tail (or second-component) fraction of the total
/// integral so every parameter is identifiable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum FitParams {
    Gaussian {
        mu_ps: f64,
        sigma_ps: f64,
        n_pairs: f64,
        floor: f64,
    },
    GaussExpTail {
        mu_ps: f64,
        sigma_ps: f64,
        tau_ps: f64,
        /// B tau / (A + B tau)
        tail_fraction: f64,
        n_pairs: f64,
        floor: f64,
    },
    DoubleGaussian {
        mu1_ps: f64,
        sigma1_ps: f64,
        mu2_ps: f64,
        sigma2_ps: f64,
        /// B / (A + B)
        second_fraction: f64,
        n_pairs: f64,
        floor: f64,
    },
}

impl FitParams {
    pub fn family(&self) -> ModelFamily {
        match self {
            FitParams::Gaussian { .. } => ModelFamily::Gaussian,
            FitParams::GaussExpTail { .. } => ModelFamily::GaussExpTail,
            FitParams::DoubleGaussian { .. } => ModelFamily::DoubleGaussian,
        }
    }

    fn to_vec(self) -> Vec<f64> {
        match self {
            FitParams::Gaussian {
                mu_ps,
                sigma_ps,
                n_pairs,
                floor,
            } => vec![mu_ps, sigma_ps, n_pairs, floor],
            FitParams::GaussExpTail {
                mu_ps,
                sigma_ps,
                tau_ps,
                tail_fraction,
                n_pairs,
                floor,
            } => vec![mu_ps, sigma_ps, tau_ps, tail_fraction, n_pairs, floor],
            FitParams::DoubleGaussian {
                mu1_ps,
                sigma1_ps,
                mu2_ps,
                sigma2_ps,
                second_fraction,
                n_pairs,
                floor,
            } => vec![
                mu1_ps,
                sigma1_ps,
                mu2_ps,
                sigma2_ps,
                second_fraction,
                n_pairs,
                floor,
            ],
        }
    }

    fn from_vec(family: ModelFamily, p: &[f64]) -> Self {
        match family {
            ModelFamily::Gaussian => FitParams::Gaussian {
                mu_ps: p[0],
                sigma_ps: p[1],
                n_pairs: p[2],
                floor: p[3],
            },
            ModelFamily::GaussExpTail => FitParams::GaussExpTail {
                mu_ps: p[0],
                sigma_ps: p[1],
                tau_ps: p[2],
                tail_fraction: p[3],
                n_pairs: p[4],
                floor: p[5],
            },
            ModelFamily::DoubleGaussian => FitParams::DoubleGaussian {
                mu1_ps: p[0],
                sigma1_ps: p[1],
                mu2_ps: p[2],
                sigma2_ps: p[3],
                second_fraction: p[4],
                n_pairs: p[5],
                floor: p[6],
            },
        }
    }

    /// The DUT response model these parameters describe, normalized to
    /// unit integral.
    pub fn response_model(&self) -> ResponseModel {
        match *self {
            FitParams::Gaussian { mu_ps, sigma_ps, .. } => ResponseModel::Gaussian { mu_ps, sigma_ps },
            FitParams::GaussExpTail {
                mu_ps,
                sigma_ps,
                tau_ps,
                tail_fraction,
                ..
            } => ResponseModel::GaussExpTail {
                a: 1.0 - tail_fraction,
                b: tail_fraction / tau_ps,
                mu_ps,
                sigma_ps,
                tau_ps,
            },
            FitParams::DoubleGaussian {
                mu1_ps,
                sigma1_ps,
                mu2_ps,
                sigma2_ps,
                second_fraction,
                ..
            } => ResponseModel::DoubleGaussian {
                a: 1.0 - second_fraction,
                b: second_fraction,
                mu1_ps,
                mu2_ps,
                sigma1_ps,
                sigma2_ps,
            },
        }
    }
}

fn param_names(family: ModelFamily) -> &'static [&'static str] {
    match family {
        ModelFamily::Gaussian => &["mu_ps", "sigma_ps", "n_pairs", "floor"],
        ModelFamily::GaussExpTail => &[
            "mu_ps",
            "sigma_ps",
            "tau_ps",
            "tail_fraction",
            "n_pairs",
            "floor",
        ],
        ModelFamily::DoubleGaussian => &[
            "mu1_ps",
            "sigma1_ps",
            "mu2_ps",
            "sigma2_ps",
            "second_fraction",
            "n_pairs",
            "floor",
        ],
    }
}

/// Moment-based starting point derived from a histogram.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialGuess {
    pub params: FitParams,
    /// The peak sat on the window edge and its location was clamped
    /// inside; treat the fit window with suspicion.
    pub mu_clamped: bool,
}

/// Normalized model density and its partial derivatives with respect to
/// the shape parameters, evaluated at x with the reference width already
/// folded in.
struct ShapeEval {
    value: f64,
    /// d value / d shape_i, in the family's parameter order.
    partials: [f64; 5],
    n_shape: usize,
}

fn eval_shape(family: ModelFamily, shape: &[f64], sigma_ref: f64, t: f64) -> ShapeEval {
    // Gaussian density and its mu/sigma partials, with sigma broadened by
    // the reference and the chain rule back to the DUT sigma.
    #[inline]
    fn gauss_parts(mu: f64, sigma: f64, sigma_ref: f64, t: f64) -> (f64, f64, f64, f64, f64) {
        let se = (sigma * sigma + sigma_ref * sigma_ref).sqrt();
        let x = t - mu;
        let g = crate::math::gaussian_density(se, x);
        let dg_dmu = g * x / (se * se);
        let dg_dse = g * (x * x / (se * se * se) - 1.0 / se);
        let dse_dsigma = sigma / se;
        (g, dg_dmu, dg_dse * dse_dsigma, se, x)
    }

    match family {
        ModelFamily::Gaussian => {
            let (g, dmu, dsigma, _, _) = gauss_parts(shape[0], shape[1], sigma_ref, t);
            ShapeEval {
                value: g,
                partials: [dmu, dsigma, 0.0, 0.0, 0.0],
                n_shape: 2,
            }
        }
        ModelFamily::GaussExpTail => {
            let (mu, sigma, tau, w) = (shape[0], shape[1], shape[2], shape[3]);
            let (g, dg_dmu, dg_dsigma, se, x) = gauss_parts(mu, sigma, sigma_ref, t);
            let h = emg_unnormalized(se, tau, x);
            // H partials in (x, se, tau); see the EMG closed form
            let dh_dx = -h / tau + g;
            let dh_dse = h * se / (tau * tau) - g * (se / tau + x / se);
            let dh_dtau = h * (x - se * se / tau) / (tau * tau) + g * se * se / (tau * tau);
            let dse_dsigma = sigma / se;

            let tail = h / tau;
            let value = (1.0 - w) * g + w * tail;
            let d_mu = (1.0 - w) * dg_dmu + w * (-dh_dx) / tau;
            let d_sigma = (1.0 - w) * dg_dsigma + w * (dh_dse * dse_dsigma) / tau;
            let d_tau = w * (dh_dtau / tau - h / (tau * tau));
            let d_w = tail - g;
            ShapeEval {
                value,
                partials: [d_mu, d_sigma, d_tau, d_w, 0.0],
                n_shape: 4,
            }
        }
        ModelFamily::DoubleGaussian => {
            let (mu1, s1, mu2, s2, w) = (shape[0], shape[1], shape[2], shape[3], shape[4]);
            let (g1, d1_mu, d1_sigma, _, _) = gauss_parts(mu1, s1, sigma_ref, t);
            let (g2, d2_mu, d2_sigma, _, _) = gauss_parts(mu2, s2, sigma_ref, t);
            ShapeEval {
                value: (1.0 - w) * g1 + w * g2,
                partials: [
                    (1.0 - w) * d1_mu,
                    (1.0 - w) * d1_sigma,
                    w * d2_mu,
                    w * d2_sigma,
                    g2 - g1,
                ],
                n_shape: 5,
            }
        }
    }
}

/// Expected counts in one bin under the internal fit parameterization:
/// `n_pairs * bin_width * f_norm(t; shape (+) sigma_ref) + floor`. This is
/// exactly the model the least-squares engine fits.
pub fn predicted_counts(
    params: &FitParams,
    sigma_ref_ps: f64,
    bin_width_ps: f64,
    t_ps: f64,
) -> f64 {
    let p = params.to_vec();
    let k = p.len();
    let shape = eval_shape(params.family(), &p[..k - 2], sigma_ref_ps, t_ps);
    p[k - 2] * bin_width_ps * shape.value + p[k - 1]
}

/// Analytic gradient of [`predicted_counts`] with respect to the internal
/// parameters, in declaration order. The fit Jacobian is assembled from
/// the same partial derivatives.
pub fn predicted_counts_gradient(
    params: &FitParams,
    sigma_ref_ps: f64,
    bin_width_ps: f64,
    t_ps: f64,
) -> Vec<f64> {
    let p = params.to_vec();
    let k = p.len();
    let shape = eval_shape(params.family(), &p[..k - 2], sigma_ref_ps, t_ps);
    let mut g = vec![0.0; k];
    for (j, slot) in g.iter_mut().take(shape.n_shape).enumerate() {
        *slot = p[k - 2] * bin_width_ps * shape.partials[j];
    }
    g[k - 2] = bin_width_ps * shape.value;
    g[k - 1] = 1.0;
    g
}

/// Weighted histogram-fit problem handed to the minimizer.
struct HistogramProblem {
    family: ModelFamily,
    sigma_ref_ps: f64,
    bin_width_ps: f64,
    centers: Vec<f64>,
    counts: Vec<f64>,
    inv_sqrt_w: Vec<f64>,
}

impl HistogramProblem {
    fn model_value(&self, p: &[f64], t: f64) -> f64 {
        let k = p.len();
        let (n, c0) = (p[k - 2], p[k - 1]);
        n * self.bin_width_ps * eval_shape(self.family, &p[..k - 2], self.sigma_ref_ps, t).value
            + c0
    }
}

impl LeastSquares for HistogramProblem {
    fn n_residuals(&self) -> usize {
        self.centers.len()
    }

    fn n_params(&self) -> usize {
        param_names(self.family).len()
    }

    fn residuals(&self, p: &[f64], out: &mut DVector<f64>) {
        for (i, (&t, &c)) in self.centers.iter().zip(&self.counts).enumerate() {
            out[i] = (c - self.model_value(p, t)) * self.inv_sqrt_w[i];
        }
    }

    fn jacobian(&self, p: &[f64], out: &mut DMatrix<f64>) {
        let k = p.len();
        let n = p[k - 2];
        for (i, &t) in self.centers.iter().enumerate() {
            let shape = eval_shape(self.family, &p[..k - 2], self.sigma_ref_ps, t);
            let w = self.inv_sqrt_w[i];
            // r = (c - m)/sqrt(w)  =>  dr/dp = -dm/dp / sqrt(w)
            for j in 0..shape.n_shape {
                out[(i, j)] = -n * self.bin_width_ps * shape.partials[j] * w;
            }
            out[(i, k - 2)] = -self.bin_width_ps * shape.value * w;
            out[(i, k - 1)] = -w;
        }
    }

    fn feasible(&self, p: &[f64]) -> bool {
        let k = p.len();
        if !p.iter().all(|v| v.is_finite()) {
            return false;
        }
        let (n, c0) = (p[k - 2], p[k - 1]);
        if n < 0.0 || c0 < 0.0 {
            return false;
        }
        match self.family {
            ModelFamily::Gaussian => p[1] > 1e-9,
            ModelFamily::GaussExpTail => {
                p[1] > 1e-9 && p[2] > 1e-9 && (1e-9..=1.0 - 1e-9).contains(&p[3])
            }
            ModelFamily::DoubleGaussian => {
                p[1] > 1e-9 && p[3] > 1e-9 && (1e-9..=1.0 - 1e-9).contains(&p[4])
            }
        }
    }

    fn param_names(&self) -> &'static [&'static str] {
        param_names(self.family)
    }
}

/// One fitted parameter with its 1-sigma uncertainty from the covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitParam {
    pub name: String,
    pub value: f64,
    pub stderr: f64,
}

/// Outcome of a histogram fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub family: ModelFamily,
    /// All fitted parameters (shape, pair count, floor) with uncertainties.
    pub params: Vec<FitParam>,
    /// Fitted DUT response, weights normalized to unit integral.
    pub model: ResponseModel,
    /// Gaussian-to-tail ratio R = A/(B tau) with its propagated error,
    /// for the tail family.
    pub ratio_r: Option<FitParam>,
    pub reduced_chi2: f64,
    pub iterations: usize,
    pub converged: bool,
    pub covariance: Vec<Vec<f64>>,
    /// Weighted cost after each accepted step.
    pub cost_history: Vec<f64>,
    pub sigma_ref_ps: f64,
    pub n_fit_bins: usize,
    pub figure: Option<FigureOfMerit>,
    /// For the Gaussian family: the fitted DUT sigma as a jitter value.
    pub dut_jitter: Option<JitterValue>,
}

impl FitResult {
    pub fn param(&self, name: &str) -> Option<&FitParam> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn fit_params(&self) -> FitParams {
        let values: Vec<f64> = self.params.iter().map(|p| p.value).collect();
        FitParams::from_vec(self.family, &values)
    }
}

/// Histogram and fit-window configuration for the pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramConfig {
    pub bin_width_ps: i64,
    pub window_ps: (i64, i64),
    /// Sideband intervals for the accidental floor; outer quarters of the
    /// window when absent.
    pub sideband_ps: Option<Vec<(i64, i64)>>,
    /// Override the automatic fit window (peak +- 8 scale widths).
    pub fit_window_ps: Option<(i64, i64)>,
}

impl Default for HistogramConfig {
    fn default() -> Self {
        Self {
            bin_width_ps: 2,
            window_ps: (-2000, 2000),
            sideband_ps: None,
            fit_window_ps: None,
        }
    }
}

fn median_u64(values: &mut Vec<u64>) -> f64 {
    values.sort_unstable();
    values[values.len() / 2] as f64
}

fn guess_from_counts(
    h: &CorrelationHistogram,
    family: ModelFamily,
) -> Result<InitialGuess, FitError> {
    let counts = h.counts();
    let n_bins = counts.len();
    let bw = h.bin_width_ps as f64;

    let mut side: Vec<u64> = Vec::new();
    for (i, &c) in counts.iter().enumerate() {
        let center = h.bin_center_ps(i);
        if default_sideband(h.window_ps)
            .iter()
            .any(|&(lo, hi)| center >= lo as f64 && center <= hi as f64)
        {
            side.push(c);
        }
    }
    let floor = if side.is_empty() {
        0.0
    } else {
        median_u64(&mut side)
    };

    let (imax, &max) = counts
        .iter()
        .enumerate()
        .max_by_key(|(_, &c)| c)
        .ok_or_else(|| FitError::InvalidInput("empty histogram".into()))?;
    if (max as f64) <= floor + 5.0 * floor.sqrt() {
        return Err(FitError::NoPeak { max, floor });
    }

    let mu_clamped = imax == 0 || imax == n_bins - 1;
    let imax_eff = imax.clamp(1, n_bins - 2);
    let mu = h.bin_center_ps(imax_eff);

    // half-max width around the peak
    let half = floor + (max as f64 - floor) / 2.0;
    let mut il = imax_eff;
    while il > 0 && counts[il] as f64 > half {
        il -= 1;
    }
    let mut ir = imax_eff;
    while ir + 1 < n_bins && counts[ir] as f64 > half {
        ir += 1;
    }
    let width = ((ir - il) as f64).max(1.0) * bw;
    let sigma = (width / GAUSSIAN_FWHM_FACTOR).max(bw / 2.0);

    let n_pairs = counts
        .iter()
        .map(|&c| c as f64 - floor)
        .sum::<f64>()
        .max(1.0);

    let params = match family {
        ModelFamily::Gaussian => FitParams::Gaussian {
            mu_ps: mu,
            sigma_ps: sigma,
            n_pairs,
            floor,
        },
        ModelFamily::GaussExpTail => {
            // exponential slope of the log of the right tail
            let tail_from = mu + 2.0 * sigma;
            let cut = floor + 3.0 * floor.max(1.0).sqrt();
            let pts: Vec<(f64, f64)> = (0..n_bins)
                .filter(|&i| h.bin_center_ps(i) > tail_from && counts[i] as f64 > cut)
                .map(|i| (h.bin_center_ps(i), (counts[i] as f64 - floor).ln()))
                .collect();
            let tau = if pts.len() >= 3 {
                let n = pts.len() as f64;
                let sx: f64 = pts.iter().map(|p| p.0).sum();
                let sy: f64 = pts.iter().map(|p| p.1).sum();
                let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
                let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
                let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
                if slope < 0.0 {
                    (-1.0 / slope).clamp(bw, (h.window_ps.1 - h.window_ps.0) as f64)
                } else {
                    4.0 * sigma
                }
            } else {
                4.0 * sigma
            };
            let tail_counts: f64 = (0..n_bins)
                .filter(|&i| h.bin_center_ps(i) > tail_from)
                .map(|i| counts[i] as f64 - floor)
                .sum();
            let tail_fraction = (2.0 * tail_counts / n_pairs).clamp(0.05, 0.9);
            FitParams::GaussExpTail {
                mu_ps: mu,
                sigma_ps: sigma,
                tau_ps: tau,
                tail_fraction,
                n_pairs,
                floor,
            }
        }
        ModelFamily::DoubleGaussian => {
            // secondary shoulder: strongest bin away from the main peak
            let cut = floor + 5.0 * floor.max(1.0).sqrt();
            let shoulder = (0..n_bins)
                .filter(|&i| (h.bin_center_ps(i) - mu).abs() > 2.0 * sigma)
                .filter(|&i| counts[i] as f64 > cut)
                .max_by_key(|&i| counts[i]);
            let mu2 = shoulder
                .map(|i| h.bin_center_ps(i))
                .unwrap_or(mu + 2.0 * sigma);
            FitParams::DoubleGaussian {
                mu1_ps: mu,
                sigma1_ps: sigma,
                mu2_ps: mu2,
                sigma2_ps: 2.0 * sigma,
                second_fraction: 0.1,
                n_pairs,
                floor,
            }
        }
    };
    Ok(InitialGuess { params, mu_clamped })
}

/// Moment-based initial parameters for a histogram fit.
///
/// Requires a discernible peak: the maximum bin must exceed the sideband
/// floor by five standard deviations.
pub fn initial_guess(
    h: &CorrelationHistogram,
    family: ModelFamily,
) -> Result<InitialGuess, FitError> {
    guess_from_counts(h, family)
}

/// Subtract the reference width from the observed-scale sigma guesses so
/// the start point lives in DUT parameter space.
fn deconvolve_guess(params: FitParams, sigma_ref: f64) -> FitParams {
    let narrow = |s: f64| {
        let v = s * s - sigma_ref * sigma_ref;
        v.max(s * s * 0.01).sqrt()
    };
    let mut p = params;
    match &mut p {
        FitParams::Gaussian { sigma_ps, .. } => *sigma_ps = narrow(*sigma_ps),
        FitParams::GaussExpTail { sigma_ps, .. } => *sigma_ps = narrow(*sigma_ps),
        FitParams::DoubleGaussian {
            sigma1_ps,
            sigma2_ps,
            ..
        } => {
            *sigma1_ps = narrow(*sigma1_ps);
            *sigma2_ps = narrow(*sigma2_ps);
        }
    }
    p
}

/// The scale that bounds the fit window around the peak.
fn guess_scale(params: &FitParams) -> f64 {
    match *params {
        FitParams::Gaussian { sigma_ps, .. } => sigma_ps,
        FitParams::GaussExpTail {
            sigma_ps, tau_ps, ..
        } => sigma_ps + tau_ps,
        FitParams::DoubleGaussian {
            mu1_ps,
            sigma1_ps,
            mu2_ps,
            sigma2_ps,
            ..
        } => sigma1_ps.max(sigma2_ps) + (mu2_ps - mu1_ps).abs(),
    }
}

fn guess_mu(params: &FitParams) -> f64 {
    match *params {
        FitParams::Gaussian { mu_ps, .. } => mu_ps,
        FitParams::GaussExpTail { mu_ps, .. } => mu_ps,
        FitParams::DoubleGaussian { mu1_ps, .. } => mu1_ps,
    }
}

/// Fit real-valued binned data. This is the core the histogram fit wraps;
/// it exists separately so exact (noise-free) synthetic data can be fit
/// without integer rounding.
pub fn fit_binned(
    centers: &[f64],
    counts: &[f64],
    bin_width_ps: f64,
    family: ModelFamily,
    sigma_ref_ps: f64,
    init: FitParams,
) -> Result<FitResult, FitError> {
    if sigma_ref_ps < 0.0 {
        return Err(FitError::InvalidInput(
            "reference sigma must be non-negative".into(),
        ));
    }
    if init.family() != family {
        return Err(FitError::InvalidInput(format!(
            "initial parameters are for {} but the fit family is {}",
            init.family(),
            family
        )));
    }
    let names = param_names(family);
    if centers.len() < 3 * names.len() {
        return Err(FitError::TooFewBins {
            bins: centers.len(),
            params: names.len(),
        });
    }

    let problem = HistogramProblem {
        family,
        sigma_ref_ps,
        bin_width_ps,
        centers: centers.to_vec(),
        counts: counts.to_vec(),
        inv_sqrt_w: counts.iter().map(|&c| 1.0 / c.max(1.0).sqrt()).collect(),
    };

    let p0 = init.to_vec();
    let fit = lm::minimize(&problem, &p0, &LmOptions::default()).map_err(|e| match e {
        LmError::Singular { combination } => FitError::Degenerate { combination },
        LmError::InfeasibleStart => {
            FitError::InvalidInput("initial parameters violate model invariants".into())
        }
    })?;

    let k = names.len();
    let params: Vec<FitParam> = names
        .iter()
        .enumerate()
        .map(|(i, &name)| FitParam {
            name: name.to_string(),
            value: fit.params[i],
            stderr: fit.covariance[(i, i)].max(0.0).sqrt(),
        })
        .collect();
    let fitted = FitParams::from_vec(family, &fit.params);
    let model = fitted.response_model();

    let ratio_r = match fitted {
        FitParams::GaussExpTail { tail_fraction, .. } => {
            let w_err = params[3].stderr;
            Some(FitParam {
                name: "ratio_r".into(),
                value: (1.0 - tail_fraction) / tail_fraction,
                stderr: w_err / (tail_fraction * tail_fraction),
            })
        }
        _ => None,
    };

    let dut_jitter = match fitted {
        FitParams::Gaussian { sigma_ps, .. } => Some(JitterValue::new(sigma_ps, params[1].stderr)),
        _ => None,
    };

    let covariance = (0..k)
        .map(|i| (0..k).map(|j| fit.covariance[(i, j)]).collect())
        .collect();

    Ok(FitResult {
        family,
        params,
        figure: model.figure_of_merit().ok(),
        model,
        ratio_r,
        reduced_chi2: fit.reduced_chi2,
        iterations: fit.iterations,
        converged: fit.converged,
        covariance,
        cost_history: fit.cost_history,
        sigma_ref_ps,
        n_fit_bins: centers.len(),
        dut_jitter,
    })
}

/// Fit a coincidence histogram with the chosen response family.
///
/// The fit region is the peak plus/minus eight scale widths joined with
/// the outer-quarter sidebands (or `fit_window_ps` when set). A fit that
/// fails to converge within the iteration budget is returned with
/// `converged == false` rather than as an error.
pub fn fit_histogram(
    h: &CorrelationHistogram,
    family: ModelFamily,
    sigma_ref_ps: f64,
    init: Option<FitParams>,
    fit_window_ps: Option<(i64, i64)>,
) -> Result<FitResult, FitError> {
    let init = match init {
        Some(p) => p,
        None => deconvolve_guess(initial_guess(h, family)?.params, sigma_ref_ps),
    };

    let scale = guess_scale(&init).max(h.bin_width_ps as f64);
    let mu = guess_mu(&init);
    let core = fit_window_ps
        .map(|(lo, hi)| (lo as f64, hi as f64))
        .unwrap_or((mu - 8.0 * scale, mu + 8.0 * scale));
    let sidebands = default_sideband(h.window_ps);

    let mut centers = Vec::new();
    let mut counts = Vec::new();
    for (i, &c) in h.counts().iter().enumerate() {
        let t = h.bin_center_ps(i);
        let in_core = t >= core.0 && t <= core.1;
        let in_side = sidebands
            .iter()
            .any(|&(lo, hi)| t >= lo as f64 && t <= hi as f64);
        if in_core || in_side {
            centers.push(t);
            counts.push(c as f64);
        }
    }
    fit_binned(
        &centers,
        &counts,
        h.bin_width_ps as f64,
        family,
        sigma_ref_ps,
        init,
    )
}

/// Everything produced on the way to a characterization, kept for audit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CharacterizationReport {
    pub histogram: CorrelationHistogram,
    pub normalized: NormalizedHistogram,
    pub guess: InitialGuess,
    pub fit: FitResult,
    pub sigma_ref: JitterValue,
}

/// End-to-end pipeline: correlate, normalize, guess, fit, derive figures
/// of merit. Stage failures abort with the stage name attached.
pub fn characterize(
    dut: &TimeTagStream,
    reference: &TimeTagStream,
    sigma_ref: &JitterValue,
    family: ModelFamily,
    cfg: &HistogramConfig,
) -> Result<CharacterizationReport, Error> {
    if dut.is_empty() || reference.is_empty() {
        return Err(Error::in_stage(
            "input",
            FitError::InvalidInput("both streams must contain tags".into()),
        ));
    }

    let histogram = cross_correlation(dut, reference, cfg.window_ps, cfg.bin_width_ps)
        .map_err(|e| Error::in_stage("cross_correlation", e))?;

    let sideband = cfg
        .sideband_ps
        .clone()
        .unwrap_or_else(|| default_sideband(cfg.window_ps));
    let normalized =
        normalize_g2(&histogram, &sideband).map_err(|e| Error::in_stage("normalize_g2", e))?;

    let guess =
        initial_guess(&histogram, family).map_err(|e| Error::in_stage("initial_guess", e))?;

    let init = deconvolve_guess(guess.params, sigma_ref.sigma_ps);
    let fit = fit_histogram(
        &histogram,
        family,
        sigma_ref.sigma_ps,
        Some(init),
        cfg.fit_window_ps,
    )
    .map_err(|e| Error::in_stage("fit_histogram", e))?;

    Ok(CharacterizationReport {
        histogram,
        normalized,
        guess,
        fit,
        sigma_ref: sigma_ref.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::correlation::HistogramMeta;
    use crate::models::predicted_c12;

    fn meta() -> HistogramMeta {
        HistogramMeta {
            channel_a: 0,
            channel_b: 1,
            duration_a_ps: 0,
            duration_b_ps: 0,
            rate_a_hz: 0.0,
            rate_b_hz: 0.0,
        }
    }

    fn synthetic(
        model: &ResponseModel,
        sigma_ref: f64,
        n: f64,
        c0: f64,
        window: (i64, i64),
        bw: i64,
    ) -> (Vec<f64>, Vec<f64>) {
        let n_bins = ((window.1 - window.0) / bw) as usize;
        let centers: Vec<f64> = (0..n_bins)
            .map(|i| window.0 as f64 + (i as f64 + 0.5) * bw as f64)
            .collect();
        let counts = centers
            .iter()
            .map(|&t| predicted_c12(model, sigma_ref, n, c0, bw as f64, t))
            .collect();
        (centers, counts)
    }

    #[test]
    fn noise_free_gaussian_recovery() {
        let truth = ResponseModel::Gaussian {
            mu_ps: 12.0,
            sigma_ps: 23.6,
        };
        let (centers, counts) = synthetic(&truth, 0.0, 1.0e5, 3.0, (-2000, 2000), 2);
        let init = FitParams::Gaussian {
            mu_ps: 0.0,
            sigma_ps: 30.0,
            n_pairs: 8.0e4,
            floor: 1.0,
        };
        let fit = fit_binned(&centers, &counts, 2.0, ModelFamily::Gaussian, 0.0, init).unwrap();
        assert!(fit.converged);
        let p = fit.fit_params();
        match p {
            FitParams::Gaussian {
                mu_ps,
                sigma_ps,
                n_pairs,
                floor,
            } => {
                assert!((mu_ps - 12.0).abs() / 12.0 < 1e-6, "mu {mu_ps}");
                assert!((sigma_ps - 23.6).abs() / 23.6 < 1e-6, "sigma {sigma_ps}");
                assert!((n_pairs - 1.0e5).abs() / 1.0e5 < 1e-6, "n {n_pairs}");
                assert!((floor - 3.0).abs() / 3.0 < 1e-6, "floor {floor}");
            }
            _ => unreachable!(),
        }
        assert!(fit.cost_history.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn noise_free_gauss_exp_recovery_with_reference() {
        let truth = ResponseModel::GaussExpTail {
            a: 0.5,
            b: 0.5 / 200.0,
            mu_ps: 0.0,
            sigma_ps: 80.0,
            tau_ps: 200.0,
        };
        let (centers, counts) = synthetic(&truth, 17.0, 1.0e5, 1.0, (-2000, 2000), 2);
        let init = FitParams::GaussExpTail {
            mu_ps: 10.0,
            sigma_ps: 60.0,
            tau_ps: 300.0,
            tail_fraction: 0.4,
            n_pairs: 9.0e4,
            floor: 0.5,
        };
        let fit =
            fit_binned(&centers, &counts, 2.0, ModelFamily::GaussExpTail, 17.0, init).unwrap();
        assert!(fit.converged);
        match fit.fit_params() {
            FitParams::GaussExpTail {
                sigma_ps,
                tau_ps,
                tail_fraction,
                ..
            } => {
                assert!((sigma_ps - 80.0).abs() / 80.0 < 1e-6, "sigma {sigma_ps}");
                assert!((tau_ps - 200.0).abs() / 200.0 < 1e-6, "tau {tau_ps}");
                assert!(
                    (tail_fraction - 0.5).abs() / 0.5 < 1e-6,
                    "w {tail_fraction}"
                );
            }
            _ => unreachable!(),
        }
        // R = A/(B tau) = 1 for this truth
        let r = fit.ratio_r.as_ref().unwrap();
        assert!((r.value - 1.0).abs() < 1e-6, "R = {}", r.value);
    }

    #[test]
    fn noise_free_double_gaussian_recovery() {
        let truth = ResponseModel::DoubleGaussian {
            a: 0.7,
            b: 0.3,
            mu1_ps: 0.0,
            mu2_ps: 82.7,
            sigma1_ps: 75.2,
            sigma2_ps: 135.3,
        };
        let (centers, counts) = synthetic(&truth, 17.0, 2.0e5, 2.0, (-2000, 2000), 2);
        let init = FitParams::DoubleGaussian {
            mu1_ps: -10.0,
            sigma1_ps: 60.0,
            mu2_ps: 120.0,
            sigma2_ps: 160.0,
            second_fraction: 0.2,
            n_pairs: 1.5e5,
            floor: 1.0,
        };
        let fit = fit_binned(
            &centers,
            &counts,
            2.0,
            ModelFamily::DoubleGaussian,
            17.0,
            init,
        )
        .unwrap();
        assert!(fit.converged);
        match fit.fit_params() {
            FitParams::DoubleGaussian {
                mu2_ps,
                sigma1_ps,
                sigma2_ps,
                second_fraction,
                ..
            } => {
                assert!((sigma1_ps - 75.2).abs() / 75.2 < 1e-5);
                assert!((sigma2_ps - 135.3).abs() / 135.3 < 1e-5);
                assert!((mu2_ps - 82.7).abs() / 82.7 < 1e-5);
                assert!((second_fraction - 0.3).abs() / 0.3 < 1e-5);
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn subtract_reference_paper_values() {
        // 23.8(2) with 16.7(1) reference -> 16.96 ps sigma, 39.9 ps FWHM
        let out = subtract_reference(
            &JitterValue::new(23.8, 0.2),
            &JitterValue::new(16.7, 0.1),
        )
        .unwrap();
        assert!((out.sigma_ps - 16.9573).abs() < 1e-3, "{}", out.sigma_ps);
        assert!((out.fwhm_ps() - 39.93).abs() < 0.05, "{}", out.fwhm_ps());
        assert!((out.sigma_err_ps - 0.2975).abs() < 1e-3);

        // 23.7(1) with 16.9(2) -> FWHM ~ 39.1
        let out = subtract_reference(
            &JitterValue::new(23.7, 0.1),
            &JitterValue::new(16.9, 0.2),
        )
        .unwrap();
        assert!((out.fwhm_ps() - 39.13).abs() < 0.05, "{}", out.fwhm_ps());

        // degenerate identical detectors: sigma12 = sigma sqrt(2)
        let s = 23.6 / std::f64::consts::SQRT_2;
        let out = subtract_reference(
            &JitterValue::new(23.6, 0.1),
            &JitterValue::new(s, 0.05),
        )
        .unwrap();
        assert!((out.sigma_ps - s).abs() < 1e-9);
        assert!((out.fwhm_ps() - 39.30).abs() < 0.05);
    }

    #[test]
    fn subtract_round_trip() {
        let a = 13.3f64;
        let b = 9.1f64;
        let combined = JitterValue::new((a * a + b * b).sqrt(), 0.0);
        let out = subtract_reference(&combined, &JitterValue::new(b, 0.0)).unwrap();
        assert!((out.sigma_ps - a).abs() / a < 1e-12);
    }

    #[test]
    fn subtract_unphysical() {
        assert!(matches!(
            subtract_reference(&JitterValue::new(10.0, 0.1), &JitterValue::new(12.0, 0.1)),
            Err(FitError::UnphysicalSubtraction { .. })
        ));
    }

    #[test]
    fn guess_flat_histogram_error() {
        let h =
            CorrelationHistogram::from_counts(10, (-500, 500), vec![7; 100], meta()).unwrap();
        assert!(matches!(
            initial_guess(&h, ModelFamily::Gaussian),
            Err(FitError::NoPeak { .. })
        ));
    }

    #[test]
    fn guess_edge_peak_clamped() {
        let mut counts = vec![2u64; 100];
        counts[99] = 500;
        let h = CorrelationHistogram::from_counts(10, (-500, 500), counts, meta()).unwrap();
        let g = initial_guess(&h, ModelFamily::Gaussian).unwrap();
        assert!(g.mu_clamped);
        match g.params {
            FitParams::Gaussian { mu_ps, .. } => assert!(mu_ps < 495.0 - 4.9),
            _ => unreachable!(),
        }
    }

    #[test]
    fn guess_on_synthetic_gaussian() {
        let truth = ResponseModel::Gaussian {
            mu_ps: -40.0,
            sigma_ps: 60.0,
        };
        let counts: Vec<u64> = (0..2000)
            .map(|i| {
                let t = -2000.0 + (i as f64 + 0.5) * 2.0;
                predicted_c12(&truth, 0.0, 5.0e4, 20.0, 2.0, t).round() as u64
            })
            .collect();
        let h = CorrelationHistogram::from_counts(2, (-2000, 2000), counts, meta()).unwrap();
        let g = initial_guess(&h, ModelFamily::Gaussian).unwrap();
        match g.params {
            FitParams::Gaussian {
                mu_ps,
                sigma_ps,
                n_pairs,
                floor,
            } => {
                assert!((mu_ps - -40.0).abs() < 0.2 * 60.0, "mu {mu_ps}");
                assert!((sigma_ps - 60.0).abs() / 60.0 < 0.2, "sigma {sigma_ps}");
                assert!((n_pairs - 5.0e4).abs() / 5.0e4 < 0.2, "n {n_pairs}");
                assert!((floor - 20.0).abs() / 20.0 < 0.2, "floor {floor}");
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn too_few_bins_rejected() {
        let centers = vec![0.0, 1.0, 2.0];
        let counts = vec![1.0, 2.0, 1.0];
        let init = FitParams::Gaussian {
            mu_ps: 1.0,
            sigma_ps: 1.0,
            n_pairs: 4.0,
            floor: 0.0,
        };
        assert!(matches!(
            fit_binned(&centers, &counts, 1.0, ModelFamily::Gaussian, 0.0, init),
            Err(FitError::TooFewBins { .. })
        ));
    }

    #[test]
    fn family_mismatch_rejected() {
        let centers: Vec<f64> = (0..40).map(|i| i as f64).collect();
        let counts = vec![1.0; 40];
        let init = FitParams::Gaussian {
            mu_ps: 0.0,
            sigma_ps: 1.0,
            n_pairs: 1.0,
            floor: 0.0,
        };
        assert!(fit_binned(
            &centers,
            &counts,
            1.0,
            ModelFamily::GaussExpTail,
            0.0,
            init
        )
        .is_err());
    }
}
