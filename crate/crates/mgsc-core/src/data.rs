//! Synthetic monotonic transduction task: token sequences rendered as
//! variable-duration feature frames, plus additive noise at exact SNRs and
//! deterministic batching.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::Mat;

/// Deterministically derives an independent stream seed from a base seed.
/// SplitMix64 finalizer over the pair.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Parameters of the synthetic task.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskConfig {
    /// Number of content symbols (the model additionally reserves an end
    /// symbol on top of these).
    pub vocab: usize,
    /// Inclusive range of target lengths in tokens.
    pub len_range: (usize, usize),
    /// Inclusive range of per-token frame durations.
    pub dur_range: (usize, usize),
    pub feature_dim: usize,
    /// Number of samples to generate.
    pub count: usize,
    /// Within-token frame jitter relative to the unit embedding scale.
    pub jitter: f64,
}

impl Default for TaskConfig {
    fn default() -> Self {
        Self {
            vocab: 6,
            len_range: (3, 6),
            dur_range: (1, 3),
            feature_dim: 8,
            count: 64,
            jitter: 0.01,
        }
    }
}

impl TaskConfig {
    fn validate(&self) -> Result<()> {
        if self.vocab < 2 {
            return Err(Error::InvalidConfig(String::from(
                "task vocab must be at least 2",
            )));
        }
        if self.len_range.0 == 0 || self.len_range.0 > self.len_range.1 {
            return Err(Error::InvalidConfig(String::from("bad target length range")));
        }
        if self.dur_range.0 == 0 || self.dur_range.0 > self.dur_range.1 {
            return Err(Error::InvalidConfig(String::from("bad duration range")));
        }
        if self.feature_dim == 0 {
            return Err(Error::InvalidConfig(String::from("feature_dim must be > 0")));
        }
        Ok(())
    }
}

/// One (frames, labels) pair with its generating alignment.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSample {
    pub features: Mat,
    pub targets: Vec<usize>,
    /// Source token index of each frame; non-decreasing and onto.
    pub true_alignment: Vec<usize>,
}

/// Draws the dataset: a fixed per-seed token embedding table, then samples
/// of tokens rendered as `duration` jittered copies of their embedding.
/// Consecutive equal tokens are resampled away so every sample stays
/// CTC-feasible at duration 1.
pub fn generate_dataset(cfg: &TaskConfig, seed: u64) -> Result<Vec<SyntheticSample>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let embeddings = Mat::from_fn(cfg.vocab, cfg.feature_dim, |_, _| {
        rng.sample::<f64, _>(StandardNormal)
    });

    let mut samples = Vec::with_capacity(cfg.count);
    for _ in 0..cfg.count {
        let len = rng.random_range(cfg.len_range.0..=cfg.len_range.1);
        let mut targets = Vec::with_capacity(len);
        for i in 0..len {
            let mut tok = rng.random_range(0..cfg.vocab);
            while i > 0 && tok == targets[i - 1] {
                tok = rng.random_range(0..cfg.vocab);
            }
            targets.push(tok);
        }

        let mut rows: Vec<Vec<f64>> = Vec::new();
        let mut true_alignment = Vec::new();
        for (idx, &tok) in targets.iter().enumerate() {
            let dur = rng.random_range(cfg.dur_range.0..=cfg.dur_range.1);
            for _ in 0..dur {
                let frame = embeddings
                    .row(tok)
                    .iter()
                    .map(|&e| e + cfg.jitter * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                rows.push(frame);
                true_alignment.push(idx);
            }
        }

        samples.push(SyntheticSample {
            features: Mat::from_rows(&rows),
            targets,
            true_alignment,
        });
    }
    Ok(samples)
}

/// Test condition: pristine features or additive noise at a fixed SNR.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Condition {
    Clean,
    SnrDb(f64),
}

impl Condition {
    pub fn is_clean(&self) -> bool {
        matches!(self, Condition::Clean)
    }

    /// Accepts `clean` or a decibel number such as `0` or `2.5`.
    pub fn parse(s: &str) -> Result<Self> {
        let trimmed = s.trim();
        if trimmed.eq_ignore_ascii_case("clean") {
            return Ok(Condition::Clean);
        }
        let t = trimmed.strip_suffix("dB").or_else(|| trimmed.strip_suffix("db")).unwrap_or(trimmed);
        t.parse::<f64>()
            .map(Condition::SnrDb)
            .map_err(|_| Error::InvalidConfig(alloc::format!("bad condition '{s}'")))
    }
}

impl core::fmt::Display for Condition {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            Condition::Clean => write!(f, "clean"),
            Condition::SnrDb(db) => {
                if (db - libm::round(*db)).abs() < 1e-9 {
                    write!(f, "{}dB", *db as i64)
                } else {
                    write!(f, "{db}dB")
                }
            }
        }
    }
}

/// Noise request: the condition plus the stream seed to draw it from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseConfig {
    pub snr_db: Condition,
    pub seed: u64,
    /// Fraction of noise power in the stationary component, in [0, 1].
    pub stationary_share: f64,
}

impl NoiseConfig {
    pub fn new(snr_db: Condition, seed: u64) -> Self {
        Self {
            snr_db,
            seed,
            stationary_share: DEFAULT_STATIONARY_SHARE,
        }
    }

    pub fn with_stationary_share(mut self, share: f64) -> Self {
        self.stationary_share = share;
        self
    }
}

/// Default share of noise power carried by the stationary (common across
/// frames) component; the remainder is white per-entry noise. Real noise
/// corpora are temporally correlated, so a purely white proxy would be too
/// easy on utterance-level statistics.
pub const DEFAULT_STATIONARY_SHARE: f64 = 0.25;

/// Adds zero-mean Gaussian noise rescaled so the realized power ratio hits
/// the requested SNR exactly. The noise mixes a white per-entry part with
/// a stationary per-utterance offset. Clean passes the input through
/// unchanged.
pub fn inject_noise(features: &Mat, cfg: &NoiseConfig) -> Result<Mat> {
    let snr_db = match cfg.snr_db {
        Condition::Clean => return Ok(features.clone()),
        Condition::SnrDb(db) => db,
    };
    if features.rows() == 0 || features.cols() == 0 {
        return Err(Error::EmptySequence);
    }
    let n = features.data().len() as f64;
    let p_signal = features.data().iter().map(|&x| x * x).sum::<f64>() / n;
    if p_signal <= 0.0 {
        return Err(Error::ZeroPowerSignal);
    }

    if !(0.0..=1.0).contains(&cfg.stationary_share) {
        return Err(Error::InvalidConfig(alloc::format!(
            "stationary noise share {} outside [0, 1]",
            cfg.stationary_share
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let cols = features.cols();
    let common: Vec<f64> = (0..cols).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let w_white = libm::sqrt(1.0 - cfg.stationary_share);
    let w_common = libm::sqrt(cfg.stationary_share);
    let mut noise = Vec::with_capacity(features.data().len());
    for _ in 0..features.rows() {
        for c in &common {
            let white: f64 = rng.sample(StandardNormal);
            noise.push(w_white * white + w_common * c);
        }
    }
    let p_raw = noise.iter().map(|&x| x * x).sum::<f64>() / n;
    let p_target = p_signal / libm::pow(10.0, snr_db / 10.0);
    let scale = libm::sqrt(p_target / p_raw);

    let mut out = features.clone();
    for (o, nz) in out.data_mut().iter_mut().zip(&noise) {
        *o += scale * nz;
    }
    Ok(out)
}

/// Measured `10·log10(P_signal / P_noise)` between a clean matrix and its
/// noisy counterpart.
pub fn measured_snr_db(clean: &Mat, noisy: &Mat) -> f64 {
    let n = clean.data().len() as f64;
    let p_signal = clean.data().iter().map(|&x| x * x).sum::<f64>() / n;
    let p_noise = clean
        .data()
        .iter()
        .zip(noisy.data())
        .map(|(&c, &y)| (y - c) * (y - c))
        .sum::<f64>()
        / n;
    10.0 * libm::log10(p_signal / p_noise)
}

/// A shuffled slice of the dataset padded to shared lengths, with masks
/// marking real frames and tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    /// Per-sample feature matrices, each padded to `max_t_in` rows.
    pub features: Vec<Mat>,
    /// `frame_mask[b][t]` is true for real (unpadded) frames.
    pub frame_mask: Vec<Vec<bool>>,
    /// Per-sample targets padded with zeros to `max_targets`.
    pub targets: Vec<Vec<usize>>,
    /// `target_mask[b][i]` is true for real tokens.
    pub target_mask: Vec<Vec<bool>>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    /// Recovers the unpadded view of sample `b`. Losses consume this, so
    /// padding never reaches them.
    pub fn unpadded(&self, b: usize) -> (Mat, Vec<usize>) {
        let t_real = self.frame_mask[b].iter().filter(|&&m| m).count();
        let feats = Mat::from_fn(t_real, self.features[b].cols(), |r, c| {
            self.features[b][(r, c)]
        });
        let targets = self.targets[b]
            .iter()
            .zip(&self.target_mask[b])
            .filter(|(_, &m)| m)
            .map(|(&t, _)| t)
            .collect();
        (feats, targets)
    }
}

/// Deterministic per-seed shuffle, then fixed-size chunks padded to each
/// batch's own maximum lengths.
pub fn make_batches(samples: &[SyntheticSample], batch_size: usize, seed: u64) -> Vec<Batch> {
    assert!(batch_size >= 1, "batch_size must be at least 1");
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Fisher-Yates.
    for i in (1..order.len()).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }

    order
        .chunks(batch_size)
        .map(|chunk| {
            let max_t_in = chunk
                .iter()
                .map(|&i| samples[i].features.rows())
                .max()
                .unwrap_or(0);
            let max_tokens = chunk.iter().map(|&i| samples[i].targets.len()).max().unwrap_or(0);
            let mut batch = Batch {
                features: Vec::with_capacity(chunk.len()),
                frame_mask: Vec::with_capacity(chunk.len()),
                targets: Vec::with_capacity(chunk.len()),
                target_mask: Vec::with_capacity(chunk.len()),
            };
            for &i in chunk {
                let s = &samples[i];
                let t_real = s.features.rows();
                batch.features.push(Mat::from_fn(
                    max_t_in,
                    s.features.cols(),
                    |r, c| if r < t_real { s.features[(r, c)] } else { 0.0 },
                ));
                let mut fm = vec![true; t_real];
                fm.resize(max_t_in, false);
                batch.frame_mask.push(fm);
                let mut padded = s.targets.clone();
                padded.resize(max_tokens, 0);
                batch.targets.push(padded);
                let mut tm = vec![true; s.targets.len()];
                tm.resize(max_tokens, false);
                batch.target_mask.push(tm);
            }
            batch
        })
        .collect()
}
