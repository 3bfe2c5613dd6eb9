//! Time-tag streams, cross-correlation histograms and waveform threshold
//! timing.
//!
//! Timestamps are integer picoseconds throughout: sub-picosecond structure
//! never matters at the jitter scales involved, and integer arithmetic
//! keeps histograms bit-reproducible.

pub mod io;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum CorrelationError {
    #[error("timestamps not sorted at index {index} ({prev} then {next}); pass sort=true to sort on load")]
    Unsorted { index: usize, prev: i64, next: i64 },
    #[error("timestamp {value} at index {index} outside acquisition window [0, {duration_ps}]")]
    OutOfWindow {
        index: usize,
        value: i64,
        duration_ps: i64,
    },
    #[error("invalid histogram configuration: {0}")]
    Config(String),
    #[error("sideband region too small: {bins} bins, need at least {min}")]
    SidebandTooSmall { bins: usize, min: usize },
    #[error("cannot normalize: sideband mean is zero (insufficient accidentals)")]
    InsufficientAccidentals,
    #[error("waveform needs at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("waveform sample period must be positive, got {0}")]
    BadSamplePeriod(f64),
    #[error("threshold {threshold_mv} mV never crossed on the {edge:?} edge")]
    ThresholdNeverCrossed { threshold_mv: f64, edge: Edge },
    #[error("noise jitter undefined: slope is zero at the threshold")]
    ZeroSlope,
    #[error("parse error at byte offset {offset}: {message}")]
    Parse { offset: u64, message: String },
    #[error("i/o error: {0}")]
    Io(String),
}

/// Sorted photon detection timestamps for one channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeTagStream {
    pub channel: u32,
    timestamps: Vec<i64>,
    /// Acquisition duration, ps.
    pub duration_ps: i64,
}

impl TimeTagStream {
    /// Build a validated stream. Timestamps must be non-decreasing and lie
    /// in `[0, duration]`; without an explicit duration the last tag is
    /// used.
    pub fn new(
        channel: u32,
        timestamps: Vec<i64>,
        duration_ps: Option<i64>,
    ) -> Result<Self, CorrelationError> {
        for (i, w) in timestamps.windows(2).enumerate() {
            if w[1] < w[0] {
                return Err(CorrelationError::Unsorted {
                    index: i + 1,
                    prev: w[0],
                    next: w[1],
                });
            }
        }
        let duration_ps = duration_ps.unwrap_or_else(|| timestamps.last().copied().unwrap_or(0));
        for (i, &t) in timestamps.iter().enumerate() {
            if t < 0 || t > duration_ps {
                return Err(CorrelationError::OutOfWindow {
                    index: i,
                    value: t,
                    duration_ps,
                });
            }
        }
        Ok(Self {
            channel,
            timestamps,
            duration_ps,
        })
    }

    /// As [`TimeTagStream::new`] but sorts first.
    pub fn from_unsorted(
        channel: u32,
        mut timestamps: Vec<i64>,
        duration_ps: Option<i64>,
    ) -> Result<Self, CorrelationError> {
        timestamps.sort_unstable();
        Self::new(channel, timestamps, duration_ps)
    }

    pub fn timestamps(&self) -> &[i64] {
        &self.timestamps
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    /// Mean count rate over the acquisition, Hz.
    pub fn rate_hz(&self) -> f64 {
        if self.duration_ps == 0 {
            return 0.0;
        }
        self.timestamps.len() as f64 / (self.duration_ps as f64 * 1e-12)
    }
}

/// Acquisition metadata carried along with a histogram.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramMeta {
    pub channel_a: u32,
    pub channel_b: u32,
    pub duration_a_ps: i64,
    pub duration_b_ps: i64,
    pub rate_a_hz: f64,
    pub rate_b_hz: f64,
}

/// Binned counts of detection-time differences `dt = t_a - t_b`.
///
/// Bins are half-open `[edge, edge + width)` and partition the window
/// exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationHistogram {
    pub bin_width_ps: i64,
    /// Half-open window `[min, max)`, ps.
    pub window_ps: (i64, i64),
    counts: Vec<u64>,
    /// Number of ordered pairs falling in the window.
    pub total_pairs: u64,
    pub meta: HistogramMeta,
}

impl CorrelationHistogram {
    /// Assemble a histogram from raw bin counts (mainly for tests and
    /// file ingestion).
    pub fn from_counts(
        bin_width_ps: i64,
        window_ps: (i64, i64),
        counts: Vec<u64>,
        meta: HistogramMeta,
    ) -> Result<Self, CorrelationError> {
        check_binning(window_ps, bin_width_ps)?;
        let n_bins = ((window_ps.1 - window_ps.0) / bin_width_ps) as usize;
        if counts.len() != n_bins {
            return Err(CorrelationError::Config(format!(
                "{} counts for {} bins",
                counts.len(),
                n_bins
            )));
        }
        let total_pairs = counts.iter().sum();
        Ok(Self {
            bin_width_ps,
            window_ps,
            counts,
            total_pairs,
            meta,
        })
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn n_bins(&self) -> usize {
        self.counts.len()
    }

    pub fn bin_center_ps(&self, index: usize) -> f64 {
        self.window_ps.0 as f64 + (index as f64 + 0.5) * self.bin_width_ps as f64
    }

    /// Bin index for a time difference, if inside the window.
    pub fn bin_index(&self, dt_ps: i64) -> Option<usize> {
        if dt_ps < self.window_ps.0 || dt_ps >= self.window_ps.1 {
            return None;
        }
        Some(((dt_ps - self.window_ps.0) / self.bin_width_ps) as usize)
    }
}

fn check_binning(window_ps: (i64, i64), bin_width_ps: i64) -> Result<(), CorrelationError> {
    if bin_width_ps <= 0 {
        return Err(CorrelationError::Config(format!(
            "bin width must be positive, got {bin_width_ps}"
        )));
    }
    let span = window_ps.1 - window_ps.0;
    if span <= 0 {
        return Err(CorrelationError::Config(format!(
            "window ({}, {}) is empty",
            window_ps.0, window_ps.1
        )));
    }
    if span % bin_width_ps != 0 {
        return Err(CorrelationError::Config(format!(
            "window span {span} ps is not divisible by bin width {bin_width_ps} ps"
        )));
    }
    Ok(())
}

/// Cross-correlation of two tag streams: counts every ordered pair
/// `(t_a, t_b)` with `t_a - t_b` inside the half-open window.
///
/// A two-pointer sweep over the sorted streams gives O(Na + Nb + matches);
/// all pairs within the window are counted, not nearest neighbors only.
pub fn cross_correlation(
    a: &TimeTagStream,
    b: &TimeTagStream,
    window_ps: (i64, i64),
    bin_width_ps: i64,
) -> Result<CorrelationHistogram, CorrelationError> {
    check_binning(window_ps, bin_width_ps)?;
    let n_bins = ((window_ps.1 - window_ps.0) / bin_width_ps) as usize;
    let mut counts = vec![0u64; n_bins];
    let (ta, tb) = (a.timestamps(), b.timestamps());

    // For each t_a, partner range is t_b in (t_a - max, t_a - min], i.e.
    // [t_a - max + 1, t_a - min] in integers. Both ends advance
    // monotonically with t_a.
    let mut lo = 0usize;
    let mut hi = 0usize;
    let mut total = 0u64;
    for &t in ta {
        let b_min = t - window_ps.1 + 1;
        let b_max = t - window_ps.0;
        while lo < tb.len() && tb[lo] < b_min {
            lo += 1;
        }
        if hi < lo {
            hi = lo;
        }
        while hi < tb.len() && tb[hi] <= b_max {
            hi += 1;
        }
        for &u in &tb[lo..hi] {
            let dt = t - u;
            let bin = ((dt - window_ps.0) / bin_width_ps) as usize;
            counts[bin] += 1;
            total += 1;
        }
    }

    Ok(CorrelationHistogram {
        bin_width_ps,
        window_ps,
        counts,
        total_pairs: total,
        meta: HistogramMeta {
            channel_a: a.channel,
            channel_b: b.channel,
            duration_a_ps: a.duration_ps,
            duration_b_ps: b.duration_ps,
            rate_a_hz: a.rate_hz(),
            rate_b_hz: b.rate_hz(),
        },
    })
}

/// Minimum number of sideband bins accepted by [`normalize_g2`].
pub const MIN_SIDEBAND_BINS: usize = 10;

/// A histogram normalized to its accidental floor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedHistogram {
    pub g2: Vec<f64>,
    pub g2_err: Vec<f64>,
    /// Accidental floor estimate, counts per bin.
    pub floor_counts: f64,
    /// Standard error of the floor estimate.
    pub floor_err: f64,
    pub sideband_bins: usize,
    /// Set when the sideband mean exceeds the global median by more than
    /// five standard errors, which indicates the sideband overlaps the
    /// coincidence peak.
    pub peak_contamination: bool,
}

/// Normalize a histogram by the mean of the bins inside `sideband`
/// (a list of closed dt intervals in ps that must avoid the peak).
pub fn normalize_g2(
    h: &CorrelationHistogram,
    sideband: &[(i64, i64)],
) -> Result<NormalizedHistogram, CorrelationError> {
    let mut picked = Vec::new();
    for (i, &c) in h.counts().iter().enumerate() {
        let center = h.bin_center_ps(i);
        if sideband
            .iter()
            .any(|&(lo, hi)| center >= lo as f64 && center <= hi as f64)
        {
            picked.push(c);
        }
    }
    if picked.len() < MIN_SIDEBAND_BINS {
        return Err(CorrelationError::SidebandTooSmall {
            bins: picked.len(),
            min: MIN_SIDEBAND_BINS,
        });
    }
    let total: u64 = picked.iter().sum();
    if total == 0 {
        return Err(CorrelationError::InsufficientAccidentals);
    }
    let floor = total as f64 / picked.len() as f64;
    // Poisson bins: var(mean) = mean / n
    let floor_err = (floor / picked.len() as f64).sqrt();

    let mut sorted: Vec<u64> = h.counts().to_vec();
    sorted.sort_unstable();
    let median = sorted[sorted.len() / 2] as f64;
    let peak_contamination = floor - median > 5.0 * floor_err;

    let g2: Vec<f64> = h.counts().iter().map(|&c| c as f64 / floor).collect();
    let g2_err = h
        .counts()
        .iter()
        .map(|&c| {
            let c = c as f64;
            let stat = c.max(1.0).sqrt() / floor;
            let sys = c * floor_err / (floor * floor);
            (stat * stat + sys * sys).sqrt()
        })
        .collect();
    Ok(NormalizedHistogram {
        g2,
        g2_err,
        floor_counts: floor,
        floor_err,
        sideband_bins: picked.len(),
        peak_contamination,
    })
}

/// Default sideband for a window: the outer quarter on each side.
pub fn default_sideband(window_ps: (i64, i64)) -> Vec<(i64, i64)> {
    let span = window_ps.1 - window_ps.0;
    let quarter = span / 4;
    vec![
        (window_ps.0, window_ps.0 + quarter),
        (window_ps.1 - quarter, window_ps.1),
    ]
}

/// One oscilloscope trace: uniform sampling, voltages in millivolts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Waveform {
    pub sample_period_ps: f64,
    pub samples_mv: Vec<f64>,
    /// Time of the first sample relative to the trigger, ps.
    pub trigger_time_ps: f64,
}

impl Waveform {
    pub fn new(
        sample_period_ps: f64,
        samples_mv: Vec<f64>,
        trigger_time_ps: f64,
    ) -> Result<Self, CorrelationError> {
        if samples_mv.len() < 2 {
            return Err(CorrelationError::TooFewSamples(samples_mv.len()));
        }
        if !(sample_period_ps > 0.0) {
            return Err(CorrelationError::BadSamplePeriod(sample_period_ps));
        }
        Ok(Self {
            sample_period_ps,
            samples_mv,
            trigger_time_ps,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Edge {
    Rising,
    Falling,
}

/// Time at which the waveform first crosses `threshold_mv` on the given
/// edge, linearly interpolated between the bracketing samples.
pub fn threshold_crossing_time(
    w: &Waveform,
    threshold_mv: f64,
    edge: Edge,
) -> Result<f64, CorrelationError> {
    let v = &w.samples_mv;
    for i in 0..v.len() - 1 {
        let crossed = match edge {
            Edge::Rising => v[i] < threshold_mv && v[i + 1] >= threshold_mv,
            Edge::Falling => v[i] > threshold_mv && v[i + 1] <= threshold_mv,
        };
        if crossed {
            let frac = (threshold_mv - v[i]) / (v[i + 1] - v[i]);
            return Ok(w.trigger_time_ps + (i as f64 + frac) * w.sample_period_ps);
        }
    }
    Err(CorrelationError::ThresholdNeverCrossed { threshold_mv, edge })
}

/// Threshold-timing jitter contributed by voltage noise:
/// `sigma_t = sigma_V / |dV/dt|` at the threshold.
pub fn noise_jitter_estimate(
    sigma_v_mv: f64,
    slope_mv_per_ps: f64,
) -> Result<f64, CorrelationError> {
    if slope_mv_per_ps == 0.0 {
        return Err(CorrelationError::ZeroSlope);
    }
    Ok(sigma_v_mv / slope_mv_per_ps.abs())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stream(channel: u32, tags: &[i64], t: i64) -> TimeTagStream {
        TimeTagStream::new(channel, tags.to_vec(), Some(t)).unwrap()
    }

    #[test]
    fn stream_validation() {
        assert!(TimeTagStream::new(0, vec![0, 100, 250], None).is_ok());
        let s = TimeTagStream::new(0, vec![0, 100, 250], None).unwrap();
        assert_eq!(s.duration_ps, 250);

        assert!(matches!(
            TimeTagStream::new(0, vec![100, 50], None),
            Err(CorrelationError::Unsorted { index: 1, .. })
        ));
        assert!(TimeTagStream::from_unsorted(0, vec![100, 50], None).is_ok());
        assert!(matches!(
            TimeTagStream::new(0, vec![0, 100], Some(50)),
            Err(CorrelationError::OutOfWindow { .. })
        ));
        let empty = TimeTagStream::new(3, vec![], None).unwrap();
        assert!(empty.is_empty());
        assert_eq!(empty.rate_hz(), 0.0);
    }

    #[test]
    fn single_pair_lands_in_right_bin() {
        let a = stream(0, &[1000], 2000);
        let b = stream(1, &[900], 2000);
        let h = cross_correlation(&a, &b, (-500, 500), 10).unwrap();
        assert_eq!(h.total_pairs, 1);
        let idx = h.bin_index(100).unwrap();
        assert_eq!(h.counts()[idx], 1);
        assert_eq!(h.counts().iter().sum::<u64>(), 1);
    }

    #[test]
    fn swap_mirrors_histogram() {
        // even tags vs odd tags: every dt is odd, so no pair sits exactly
        // on a bin edge (edge dts mirror into the neighboring half-open bin)
        let a = stream(0, &[10, 58, 380, 1400, 1402], 2000);
        let b = stream(1, &[5, 61, 391, 1399], 2000);
        let hab = cross_correlation(&a, &b, (-400, 400), 4).unwrap();
        let hba = cross_correlation(&b, &a, (-400, 400), 4).unwrap();
        let n = hab.n_bins();
        for i in 0..n {
            assert_eq!(hab.counts()[i], hba.counts()[n - 1 - i], "bin {i}");
        }
    }

    #[test]
    fn shift_invariance() {
        let base: Vec<i64> = vec![3, 120, 433, 587, 901];
        let a = stream(0, &base, 1000);
        let shifted: Vec<i64> = base.iter().map(|t| t + 5000).collect();
        let a2 = TimeTagStream::new(0, shifted.clone(), Some(6000)).unwrap();
        let b = stream(1, &[100, 430, 610], 1000);
        let b2 = TimeTagStream::new(
            1,
            b.timestamps().iter().map(|t| t + 5000).collect(),
            Some(6000),
        )
        .unwrap();
        let h1 = cross_correlation(&a, &b, (-256, 256), 2).unwrap();
        let h2 = cross_correlation(&a2, &b2, (-256, 256), 2).unwrap();
        assert_eq!(h1.counts(), h2.counts());
    }

    #[test]
    fn counts_match_brute_force() {
        // deterministic pseudo-random small streams
        let mut x = 12345u64;
        let mut next = || {
            x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (x >> 33) as i64 % 100_000
        };
        let mut ta: Vec<i64> = (0..400).map(|_| next()).collect();
        let mut tb: Vec<i64> = (0..350).map(|_| next()).collect();
        ta.sort_unstable();
        tb.sort_unstable();
        let a = TimeTagStream::new(0, ta.clone(), Some(100_000)).unwrap();
        let b = TimeTagStream::new(1, tb.clone(), Some(100_000)).unwrap();
        let window = (-3000i64, 3000i64);
        let h = cross_correlation(&a, &b, window, 50).unwrap();

        let mut brute = vec![0u64; h.n_bins()];
        for &t in &ta {
            for &u in &tb {
                let dt = t - u;
                if dt >= window.0 && dt < window.1 {
                    brute[((dt - window.0) / 50) as usize] += 1;
                }
            }
        }
        assert_eq!(h.counts(), &brute[..]);
        assert_eq!(h.total_pairs, brute.iter().sum::<u64>());
    }

    #[test]
    fn binning_config_errors() {
        let a = stream(0, &[0], 10);
        assert!(cross_correlation(&a, &a, (-500, 500), 0).is_err());
        assert!(cross_correlation(&a, &a, (-500, 500), 300).is_err());
        assert!(cross_correlation(&a, &a, (500, -500), 10).is_err());
    }

    fn flat_histogram(per_bin: u64) -> CorrelationHistogram {
        let meta = HistogramMeta {
            channel_a: 0,
            channel_b: 1,
            duration_a_ps: 1,
            duration_b_ps: 1,
            rate_a_hz: 0.0,
            rate_b_hz: 0.0,
        };
        CorrelationHistogram::from_counts(10, (-500, 500), vec![per_bin; 100], meta).unwrap()
    }

    #[test]
    fn normalize_flat_histogram() {
        let h = flat_histogram(7);
        let n = normalize_g2(&h, &default_sideband(h.window_ps)).unwrap();
        assert_eq!(n.floor_counts, 7.0);
        assert!(n.g2.iter().all(|&g| g == 1.0));
        assert!(!n.peak_contamination);
    }

    #[test]
    fn normalize_peak_plus_floor() {
        // flat 100/bin plus a Gaussian peak of area 1e4
        let meta = flat_histogram(1).meta.clone();
        let (bw, window) = (2i64, (-1000i64, 1000i64));
        let sigma = 30.0;
        let counts: Vec<u64> = (0..1000)
            .map(|i| {
                let t = window.0 as f64 + (i as f64 + 0.5) * bw as f64;
                let peak = 1.0e4 * bw as f64 * crate::math::gaussian_density(sigma, t);
                100 + peak.round() as u64
            })
            .collect();
        let h = CorrelationHistogram::from_counts(bw, window, counts, meta).unwrap();
        let n = normalize_g2(&h, &default_sideband(window)).unwrap();
        let g2_max = n.g2.iter().cloned().fold(f64::MIN, f64::max);
        let expect = 1.0 + 1.0e4 * bw as f64 * crate::math::gaussian_density(sigma, 0.0) / 100.0;
        assert!(
            (g2_max - expect).abs() / expect < 0.02,
            "g2 max {g2_max}, expect {expect}"
        );
    }

    #[test]
    fn normalize_detects_contaminated_sideband() {
        // peak in the center; sideband chosen ON the peak (user error)
        let meta = flat_histogram(1).meta.clone();
        let counts: Vec<u64> = (0..100)
            .map(|i| if (40..60).contains(&i) { 500 } else { 3 })
            .collect();
        let h = CorrelationHistogram::from_counts(10, (-500, 500), counts, meta).unwrap();
        let n = normalize_g2(&h, &[(-100, 100)]).unwrap();
        assert!(n.peak_contamination);
        let good = normalize_g2(&h, &default_sideband(h.window_ps)).unwrap();
        assert!(!good.peak_contamination);
    }

    #[test]
    fn normalize_error_paths() {
        let h = flat_histogram(0);
        assert!(matches!(
            normalize_g2(&h, &default_sideband(h.window_ps)),
            Err(CorrelationError::InsufficientAccidentals)
        ));
        let h = flat_histogram(5);
        assert!(matches!(
            normalize_g2(&h, &[(-500, -460)]),
            Err(CorrelationError::SidebandTooSmall { .. })
        ));
    }

    #[test]
    fn threshold_interpolation() {
        let w = Waveform::new(100.0, vec![0.0, 10.0], 0.0).unwrap();
        assert_eq!(threshold_crossing_time(&w, 5.0, Edge::Rising).unwrap(), 50.0);
        assert_eq!(
            threshold_crossing_time(&w, 10.0, Edge::Rising).unwrap(),
            100.0
        );
        assert!(matches!(
            threshold_crossing_time(&w, 20.0, Edge::Rising),
            Err(CorrelationError::ThresholdNeverCrossed { .. })
        ));
        // first crossing wins
        let w = Waveform::new(1.0, vec![0.0, 8.0, 0.0, 8.0], -10.0).unwrap();
        let t = threshold_crossing_time(&w, 4.0, Edge::Rising).unwrap();
        assert_eq!(t, -10.0 + 0.5);
        let t = threshold_crossing_time(&w, 4.0, Edge::Falling).unwrap();
        assert_eq!(t, -10.0 + 1.5);
    }

    #[test]
    fn noise_jitter_formula() {
        assert_eq!(noise_jitter_estimate(0.0, 2.0).unwrap(), 0.0);
        assert_eq!(noise_jitter_estimate(1.0, 1.0).unwrap(), 1.0);
        assert_eq!(noise_jitter_estimate(3.0, -1.5).unwrap(), 2.0);
        assert!(matches!(
            noise_jitter_estimate(1.0, 0.0),
            Err(CorrelationError::ZeroSlope)
        ));
    }
}
