//! Monte Carlo generator of correlated photon-pair time-tag streams.
//!
//! Pairs are emitted simultaneously (the source correlation time is
//! orders of magnitude below any detector response here) at homogeneous
//! Poisson times; each photon is detected with its channel's efficiency
//! and smeared by a draw from that detector's response model. Dark counts
//! are an independent uniform Poisson background per channel. Every random
//! component draws from its own counter-seeded substream, so e.g. adding
//! dark counts to a configuration does not perturb the pair realization
//! under the same seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::correlation::TimeTagStream;
use crate::models::{ModelError, ResponseModel};

/// Refuse simulations whose expected tag count exceeds this.
pub const MAX_EXPECTED_TAGS: f64 = 1e8;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("expected tag count {expected:.3e} exceeds the resource guard {MAX_EXPECTED_TAGS:.0e}")]
    ResourceGuard { expected: f64 },
}

/// Per-detector simulation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorSim {
    pub response: ResponseModel,
    /// Detection probability per incident photon, in [0, 1].
    pub efficiency: f64,
    /// Dark count rate, counts/s.
    #[serde(default)]
    pub dark_rate_hz: f64,
    /// Fixed cable/electronic delay added to every tag, ps.
    #[serde(default)]
    pub delay_ps: f64,
    /// Non-paralyzable dead time, ps; 0 disables.
    #[serde(default)]
    pub dead_time_ps: i64,
}

/// Full simulation configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub pair_rate_hz: f64,
    pub duration_s: f64,
    pub seed: u64,
    pub detector_a: DetectorSim,
    pub detector_b: DetectorSim,
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.duration_s > 0.0) {
            return Err(SimError::InvalidConfig(format!(
                "duration must be positive, got {}",
                self.duration_s
            )));
        }
        if self.pair_rate_hz < 0.0 {
            return Err(SimError::InvalidConfig("pair rate must be >= 0".into()));
        }
        for (name, d) in [("a", &self.detector_a), ("b", &self.detector_b)] {
            if !(0.0..=1.0).contains(&d.efficiency) {
                return Err(SimError::InvalidConfig(format!(
                    "detector {name}: efficiency {} outside [0, 1]",
                    d.efficiency
                )));
            }
            if d.dark_rate_hz < 0.0 {
                return Err(SimError::InvalidConfig(format!(
                    "detector {name}: dark rate must be >= 0"
                )));
            }
            if d.dead_time_ps < 0 {
                return Err(SimError::InvalidConfig(format!(
                    "detector {name}: dead time must be >= 0"
                )));
            }
            d.response.validate()?;
        }
        let expected = self.expected_tag_count();
        if expected > MAX_EXPECTED_TAGS {
            return Err(SimError::ResourceGuard { expected });
        }
        Ok(())
    }

    /// Expected number of tags across both channels, before dead time.
    pub fn expected_tag_count(&self) -> f64 {
        let t = self.duration_s;
        let pairs = self.pair_rate_hz * t;
        pairs * (self.detector_a.efficiency + self.detector_b.efficiency)
            + (self.detector_a.dark_rate_hz + self.detector_b.dark_rate_hz) * t
    }
}

/// Ground-truth bookkeeping for one simulation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTruth {
    pub n_pairs_emitted: u64,
    pub n_pair_detections: [u64; 2],
    pub n_dark_counts: [u64; 2],
    pub n_dead_time_dropped: [u64; 2],
    /// Analytic singles rates (pair_rate * efficiency + dark_rate), Hz.
    pub singles_rate_hz: [f64; 2],
    pub config: SimConfig,
}

/// A simulated pair of tag streams plus the truth record.
#[derive(Debug, Clone, PartialEq)]
pub struct SimOutput {
    pub stream_a: TimeTagStream,
    pub stream_b: TimeTagStream,
    pub truth: SimTruth,
}

// Substream indices of the counter-based generator.
const STREAM_PAIRS: u64 = 0;
const STREAM_EFF: [u64; 2] = [1, 2];
const STREAM_RESPONSE: [u64; 2] = [3, 4];
const STREAM_DARK: [u64; 2] = [5, 6];

fn substream(seed: u64, stream: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn poisson_count(rng: &mut ChaCha12Rng, mean: f64) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).expect("positive mean").sample(rng) as u64
}

/// Expected accidental coincidences per histogram bin for the configured
/// singles rates: `r_a r_b T bin_width`, ignoring dead time and the
/// correlated peak contribution.
pub fn expected_accidentals(cfg: &SimConfig, bin_width_ps: i64) -> f64 {
    let ra = cfg.pair_rate_hz * cfg.detector_a.efficiency + cfg.detector_a.dark_rate_hz;
    let rb = cfg.pair_rate_hz * cfg.detector_b.efficiency + cfg.detector_b.dark_rate_hz;
    ra * rb * cfg.duration_s * (bin_width_ps as f64 * 1e-12)
}

struct ChannelOutcome {
    tags: Vec<i64>,
    n_pair_detections: u64,
    n_dark: u64,
    n_dead_dropped: u64,
}

fn build_channel(
    cfg: &SimConfig,
    det: &DetectorSim,
    index: usize,
    emissions_ps: &[f64],
) -> ChannelOutcome {
    let t_ps = (cfg.duration_s * 1e12).round() as i64;
    let mut rng_eff = substream(cfg.seed, STREAM_EFF[index]);
    let mut rng_resp = substream(cfg.seed, STREAM_RESPONSE[index]);
    let mut rng_dark = substream(cfg.seed, STREAM_DARK[index]);

    let mut tags: Vec<i64> = Vec::new();
    let mut n_pair_detections = 0;
    for &emission in emissions_ps {
        if rng_eff.gen::<f64>() < det.efficiency {
            let t = emission + det.delay_ps + det.response.sample(&mut rng_resp);
            let t = t.round() as i64;
            if (0..=t_ps).contains(&t) {
                tags.push(t);
                n_pair_detections += 1;
            }
        }
    }

    let n_dark = poisson_count(&mut rng_dark, det.dark_rate_hz * cfg.duration_s);
    for _ in 0..n_dark {
        let t = (rng_dark.gen::<f64>() * t_ps as f64).round() as i64;
        tags.push(t.clamp(0, t_ps));
    }

    tags.sort_unstable();

    let mut n_dead_dropped = 0;
    if det.dead_time_ps > 0 {
        let mut kept = Vec::with_capacity(tags.len());
        let mut last_accepted: Option<i64> = None;
        for t in tags {
            match last_accepted {
                Some(prev) if t - prev < det.dead_time_ps => n_dead_dropped += 1,
                _ => {
                    kept.push(t);
                    last_accepted = Some(t);
                }
            }
        }
        tags = kept;
    }

    ChannelOutcome {
        tags,
        n_pair_detections,
        n_dark,
        n_dead_dropped,
    }
}

/// Run one simulation. Fully reproducible from the seed.
pub fn simulate(cfg: &SimConfig) -> Result<SimOutput, SimError> {
    cfg.validate()?;
    let t_ps = (cfg.duration_s * 1e12).round() as i64;

    let mut rng_pairs = substream(cfg.seed, STREAM_PAIRS);
    let n_pairs = poisson_count(&mut rng_pairs, cfg.pair_rate_hz * cfg.duration_s);
    let mut emissions: Vec<f64> = (0..n_pairs)
        .map(|_| rng_pairs.gen::<f64>() * t_ps as f64)
        .collect();
    emissions.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());

    let a = build_channel(cfg, &cfg.detector_a, 0, &emissions);
    let b = build_channel(cfg, &cfg.detector_b, 1, &emissions);

    let truth = SimTruth {
        n_pairs_emitted: n_pairs,
        n_pair_detections: [a.n_pair_detections, b.n_pair_detections],
        n_dark_counts: [a.n_dark, b.n_dark],
        n_dead_time_dropped: [a.n_dead_dropped, b.n_dead_dropped],
        singles_rate_hz: [
            cfg.pair_rate_hz * cfg.detector_a.efficiency + cfg.detector_a.dark_rate_hz,
            cfg.pair_rate_hz * cfg.detector_b.efficiency + cfg.detector_b.dark_rate_hz,
        ],
        config: cfg.clone(),
    };

    let stream_a = TimeTagStream::new(0, a.tags, Some(t_ps)).expect("tags sorted and clamped");
    let stream_b = TimeTagStream::new(1, b.tags, Some(t_ps)).expect("tags sorted and clamped");
    Ok(SimOutput {
        stream_a,
        stream_b,
        truth,
    })
}
