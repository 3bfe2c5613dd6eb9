//! Independent numerical oracles for the invariant and acceptance suites:
//! adaptive quadrature, brute-force pair counting, dense-grid extrema and
//! elementary goodness-of-fit statistics. Nothing here touches the closed
//! forms under test.

#![allow(dead_code)]

/// Adaptive Simpson quadrature to an absolute tolerance.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson(a: f64, fa: f64, b: f64, fb: f64, fm: f64) -> f64 {
        (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        m: f64,
        fm: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = simpson(a, fa, m, fm, flm);
        let right = simpson(m, fm, b, fb, frm);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            left + right + delta / 15.0
        } else {
            recurse(f, a, fa, m, fm, lm, flm, left, 0.5 * tol, depth - 1)
                + recurse(f, m, fm, b, fb, rm, frm, right, 0.5 * tol, depth - 1)
        }
    }
    let m = 0.5 * (a + b);
    let (fa, fb, fm) = (f(a), f(b), f(m));
    let whole = simpson(a, fa, b, fb, fm);
    recurse(f, a, fa, b, fb, m, fm, whole, tol, 40)
}

/// Panelled adaptive Simpson: the domain is split into uniform panels and
/// each is integrated adaptively, so narrow features cannot slip between
/// the probe points of a single global estimate.
pub fn simpson_panels(f: &dyn Fn(f64) -> f64, a: f64, b: f64, panels: usize, tol: f64) -> f64 {
    let step = (b - a) / panels as f64;
    (0..panels)
        .map(|i| {
            let lo = a + step * i as f64;
            adaptive_simpson(f, lo, lo + step, tol)
        })
        .sum()
}

/// Gaussian density used by the quadrature oracles (kept local so the
/// oracle does not share code with the crate under test).
pub fn gauss(sigma: f64, x: f64) -> f64 {
    (-0.5 * (x / sigma) * (x / sigma)).exp() / ((2.0 * std::f64::consts::PI).sqrt() * sigma)
}

/// Quadrature oracle for the Gaussian x one-sided-exponential convolution
/// `(G(sigma) * 1_{u>=0} e^{-u/tau})(x)`. The integrand is supported where
/// the Gaussian factor lives, u in [x - 14 sigma, x + 14 sigma] (clipped
/// to u >= 0).
pub fn emg_by_quadrature(sigma: f64, tau: f64, x: f64) -> f64 {
    let hi = x + 14.0 * sigma;
    if hi <= 0.0 {
        return 0.0;
    }
    let lo = (x - 14.0 * sigma).max(0.0);
    simpson_panels(
        &|u: f64| gauss(sigma, x - u) * (-u / tau).exp(),
        lo,
        hi,
        512,
        1e-14,
    )
}

/// Quadrature oracle for `(f * G(sigma_ref))(t)`; the kernel restricts the
/// support to t +- 14 sigma_ref.
pub fn convolve_by_quadrature(f: &dyn Fn(f64) -> f64, sigma_ref: f64, t: f64) -> f64 {
    simpson_panels(
        &|u: f64| f(u) * gauss(sigma_ref, t - u),
        t - 14.0 * sigma_ref,
        t + 14.0 * sigma_ref,
        512,
        1e-14,
    )
}

/// O(Na * Nb) reference pair counter for histogram checks.
pub fn brute_force_counts(
    ta: &[i64],
    tb: &[i64],
    window: (i64, i64),
    bin_width: i64,
) -> Vec<u64> {
    let n_bins = ((window.1 - window.0) / bin_width) as usize;
    let mut counts = vec![0u64; n_bins];
    for &t in ta {
        for &u in tb {
            let dt = t - u;
            if dt >= window.0 && dt < window.1 {
                counts[((dt - window.0) / bin_width) as usize] += 1;
            }
        }
    }
    counts
}

/// Dense-grid FWHM oracle: linear-interpolated half-max crossings on a
/// uniform grid.
pub fn fwhm_by_grid(f: &dyn Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> f64 {
    let step = (hi - lo) / (n - 1) as f64;
    let ys: Vec<f64> = (0..n).map(|i| f(lo + step * i as f64)).collect();
    let imax = ys
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .unwrap()
        .0;
    let half = ys[imax] / 2.0;
    let mut il = imax;
    while ys[il] > half {
        il -= 1;
    }
    let tl = lo + step * (il as f64 + (half - ys[il]) / (ys[il + 1] - ys[il]));
    let mut ir = imax;
    while ys[ir] > half {
        ir += 1;
    }
    let tr = lo + step * (ir as f64 - (half - ys[ir]) / (ys[ir - 1] - ys[ir]));
    tr - tl
}

/// Upper critical value of the chi-square distribution via the
/// Wilson-Hilferty cube approximation; good to a fraction of a percent for
/// the dof used here (>= 30).
pub fn chi2_critical(dof: f64, alpha: f64) -> f64 {
    let z = normal_quantile(1.0 - alpha);
    let a = 2.0 / (9.0 * dof);
    dof * (1.0 - a + z * a.sqrt()).powi(3)
}

/// Standard normal quantile (Acklam's rational approximation).
pub fn normal_quantile(p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0);
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    let p_low = 0.02425;
    if p < p_low {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - p_low {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        -normal_quantile(1.0 - p)
    }
}

/// One-sample Kolmogorov-Smirnov p-value from the asymptotic Kolmogorov
/// distribution.
pub fn ks_p_value(d: f64, n: usize) -> f64 {
    let lambda = (n as f64).sqrt() * d;
    let mut sum = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        sum += 2.0 * (-1.0f64).powi(k as i32 + 1) * (-2.0 * kf * kf * lambda * lambda).exp();
    }
    sum.clamp(0.0, 1.0)
}

/// KS statistic of a sample against a CDF.
pub fn ks_statistic(sample: &mut [f64], cdf: &dyn Fn(f64) -> f64) -> f64 {
    sample.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sample.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in sample.iter().enumerate() {
        let c = cdf(x);
        d = d.max((c - i as f64 / n).abs());
        d = d.max(((i + 1) as f64 / n - c).abs());
    }
    d
}

/// Standard normal CDF through the crate-independent erf approximation
/// (Abramowitz-Stegun 7.1.26; 1e-7 absolute, fine for KS checks).
pub fn normal_cdf(x: f64) -> f64 {
    let t = 1.0 / (1.0 + 0.3275911 * (x.abs() / std::f64::consts::SQRT_2));
    let poly = t
        * (0.254829592 + t * (-0.284496736 + t * (1.421413741 + t * (-1.453152027 + t * 1.061405429))));
    let erf_abs = 1.0 - poly * (-(x / std::f64::consts::SQRT_2).powi(2)).exp();
    if x >= 0.0 {
        0.5 * (1.0 + erf_abs)
    } else {
        0.5 * (1.0 - erf_abs)
    }
}

/// Deterministic xorshift for oracle-side randomized sweeps.
pub struct TestRng(u64);

impl TestRng {
    pub fn new(seed: u64) -> Self {
        Self(seed.max(1))
    }

    pub fn next_u64(&mut self) -> u64 {
        let mut x = self.0;
        x ^= x << 13;
        x ^= x >> 7;
        x ^= x << 17;
        self.0 = x;
        x
    }

    /// Uniform in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn in_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }
}
