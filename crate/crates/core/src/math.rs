//! Numerical support routines: error functions and scalar root/extremum
//! searches.
//!
//! The error functions follow W. J. Cody's rational-approximation scheme
//! (SPECFUN `calerf`), which provides `erf`, `erfc` and the scaled
//! complement `erfcx(x) = exp(x^2) erfc(x)` from the same three rational
//! fits with relative error below 1e-15 in double precision.

/// 1 / sqrt(pi)
const FRAC_1_SQRT_PI: f64 = 0.564_189_583_547_756_286_95;

const THRESH: f64 = 0.46875;
const XBIG: f64 = 26.543;
const XNEG: f64 = -26.628;
const XSMALL: f64 = 1.11e-16;

const A: [f64; 5] = [
    3.16112374387056560e0,
    1.13864154151050156e2,
    3.77485237685302021e2,
    3.20937758913846947e3,
    1.85777706184603153e-1,
];
const B: [f64; 4] = [
    2.36012909523441209e1,
    2.44024637934444173e2,
    1.28261652607737228e3,
    2.84423683343917062e3,
];
const C: [f64; 9] = [
    5.64188496988670089e-1,
    8.88314979438837594e0,
    6.61191906371416295e1,
    2.98635138197400131e2,
    8.81952221241769090e2,
    1.71204761263407058e3,
    2.05107837782607147e3,
    1.23033935479799725e3,
    2.15311535474403846e-8,
];
const D: [f64; 8] = [
    1.57449261107098347e1,
    1.17693950891312499e2,
    5.37181101862009858e2,
    1.62138957456669019e3,
    3.29079923573345963e3,
    4.36261909014324716e3,
    3.43936767414372164e3,
    1.23033935480374942e3,
];
const P: [f64; 6] = [
    3.05326634961232344e-1,
    3.60344899949804439e-1,
    1.25781726111229246e-1,
    1.60837851487422766e-2,
    6.58749161529837803e-4,
    1.63153871373020978e-2,
];
const Q: [f64; 5] = [
    2.56852019228982242e0,
    1.87295284992346047e0,
    5.27905102951428412e-1,
    6.05183413124413191e-2,
    2.33520497626869185e-3,
];

/// exp(-y^2) split for accuracy: exp(-trunc^2) * exp(-(y-trunc)(y+trunc)).
fn exp_neg_ysq(y: f64) -> f64 {
    let ysq = (y * 16.0).trunc() / 16.0;
    let del = (y - ysq) * (y + ysq);
    (-ysq * ysq).exp() * (-del).exp()
}

/// Core of Cody's scheme for |x| > THRESH: returns erfcx(y) for y = |x|.
fn erfcx_core(y: f64) -> f64 {
    if y <= 4.0 {
        let mut xnum = C[8] * y;
        let mut xden = y;
        for i in 0..7 {
            xnum = (xnum + C[i]) * y;
            xden = (xden + D[i]) * y;
        }
        (xnum + C[7]) / (xden + D[7])
    } else {
        let ysq = 1.0 / (y * y);
        let mut xnum = P[5] * ysq;
        let mut xden = ysq;
        for i in 0..4 {
            xnum = (xnum + P[i]) * ysq;
            xden = (xden + Q[i]) * ysq;
        }
        let r = ysq * (xnum + P[4]) / (xden + Q[4]);
        (FRAC_1_SQRT_PI - r) / y
    }
}

/// erf(x) for |x| <= THRESH via the small-argument rational fit.
fn erf_small(x: f64) -> f64 {
    let ysq = if x.abs() > XSMALL { x * x } else { 0.0 };
    let mut xnum = A[4] * ysq;
    let mut xden = ysq;
    for i in 0..3 {
        xnum = (xnum + A[i]) * ysq;
        xden = (xden + B[i]) * ysq;
    }
    x * (xnum + A[3]) / (xden + B[3])
}

/// Error function.
pub fn erf(x: f64) -> f64 {
    let y = x.abs();
    if y <= THRESH {
        erf_small(x)
    } else {
        let e = exp_neg_ysq(y) * erfcx_core(y);
        let r = 1.0 - e;
        if x < 0.0 {
            -r
        } else {
            r
        }
    }
}

/// Complementary error function.
pub fn erfc(x: f64) -> f64 {
    let y = x.abs();
    if y <= THRESH {
        1.0 - erf_small(x)
    } else {
        let r = if y >= XBIG {
            0.0
        } else {
            exp_neg_ysq(y) * erfcx_core(y)
        };
        if x < 0.0 {
            2.0 - r
        } else {
            r
        }
    }
}

/// Scaled complementary error function, exp(x^2) erfc(x).
///
/// Finite for all x >= XNEG (~ -26.6); below that the true value overflows
/// f64 and +inf is returned.
pub fn erfcx(x: f64) -> f64 {
    let y = x.abs();
    if y <= THRESH {
        (y * y).exp() * (1.0 - erf_small(x))
    } else if x >= 0.0 {
        erfcx_core(y)
    } else if x < XNEG {
        f64::INFINITY
    } else {
        // erfcx(-y) = 2 exp(y^2) - erfcx(y)
        let ysq = (y * 16.0).trunc() / 16.0;
        let del = (y - ysq) * (y + ysq);
        let e = (ysq * ysq).exp() * del.exp();
        2.0 * e - erfcx_core(y)
    }
}

/// Full width at half maximum of a unit-variance Gaussian: 2 sqrt(2 ln 2).
pub const GAUSSIAN_FWHM_FACTOR: f64 = 2.354_820_045_030_949_3;

/// Normalized Gaussian density exp(-x^2 / 2 sigma^2) / sqrt(2 pi sigma^2).
pub fn gaussian_density(sigma: f64, x: f64) -> f64 {
    let z = x / sigma;
    (-0.5 * z * z).exp() / ((2.0 * std::f64::consts::PI).sqrt() * sigma)
}

/// Bisection root finder on [lo, hi]; requires a sign change.
///
/// Returns the midpoint of the final bracket once its width drops below
/// `xtol`. `None` when f(lo) and f(hi) have the same sign.
pub(crate) fn bisect_root(f: impl Fn(f64) -> f64, lo: f64, hi: f64, xtol: f64) -> Option<f64> {
    let (mut lo, mut hi) = (lo, hi);
    let mut flo = f(lo);
    let fhi = f(hi);
    if flo == 0.0 {
        return Some(lo);
    }
    if fhi == 0.0 {
        return Some(hi);
    }
    if flo.signum() == fhi.signum() {
        return None;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if hi - lo < xtol {
            return Some(mid);
        }
        let fm = f(mid);
        if fm == 0.0 {
            return Some(mid);
        }
        if fm.signum() == flo.signum() {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    Some(0.5 * (lo + hi))
}

/// Golden-section search for the maximum of a unimodal function on [lo, hi].
pub(crate) fn golden_section_max(f: impl Fn(f64) -> f64, lo: f64, hi: f64, xtol: f64) -> f64 {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while b - a > xtol {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}
