//! Synthetic long-tail interaction data.
//!
//! Item popularity follows a Zipf law over a seeded permutation of ids. Each
//! item also carries a latent factor; the target of a pair is drawn from a
//! softmax over latent affinity reweighted by popularity, so there is real
//! structure to learn while the update frequencies stay heavily skewed.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::codec::{Reader, Writer};
use crate::error::{Error, FormatError, Result};
use crate::linalg::{dot, Matrix};

pub const LOG_MAGIC: [u8; 4] = *b"OCPL";
pub const LOG_VERSION: u32 = 1;

/// Id reserved for the out-of-vocabulary bucket after thresholding.
pub const OOV_ID: usize = 0;

/// Pairs held out from the end of a log for hit@k evaluation.
pub const DEFAULT_HOLDOUT: usize = 5_000;

const PERMUTATION_STREAM: u64 = 0;
const FACTOR_STREAM: u64 = 1;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ZipfConfig {
    pub v: usize,
    pub s: f64,
    pub seed: u64,
}

impl ZipfConfig {
    pub fn validate(&self) -> Result<()> {
        if self.v < 2 {
            return Err(Error::Config(format!(
                "vocabulary must have at least 2 items, got {}",
                self.v
            )));
        }
        if !(self.s > 0.0 && self.s.is_finite()) {
            return Err(Error::Config(format!(
                "Zipf exponent must be positive, got {}",
                self.s
            )));
        }
        Ok(())
    }
}

/// `p(rank i) ∝ i^(−s)`, with ranks assigned to ids by a seeded permutation.
/// Entry `j` of the result is the probability of item id `j`.
pub fn zipf_probabilities(config: &ZipfConfig) -> Result<Vec<f64>> {
    config.validate()?;
    let weights: Vec<f64> = (1..=config.v).map(|i| (i as f64).powf(-config.s)).collect();
    let total: f64 = weights.iter().sum();

    let mut ids: Vec<usize> = (0..config.v).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(PERMUTATION_STREAM);
    ids.shuffle(&mut rng);

    let mut probs = vec![0.0; config.v];
    for (rank, &id) in ids.iter().enumerate() {
        probs[id] = weights[rank] / total;
    }
    Ok(probs)
}

/// Latent item factors plus popularity: the process the log is drawn from.
#[derive(Clone, Debug)]
pub struct GroundTruth {
    z: Matrix,
    tau: f64,
    popularity: Vec<f64>,
}

impl GroundTruth {
    pub fn new(z: Matrix, tau: f64, popularity: Vec<f64>) -> Result<Self> {
        if popularity.len() != z.rows() || z.rows() < 2 {
            return Err(Error::Config(format!(
                "popularity has {} entries for {} latent rows",
                popularity.len(),
                z.rows()
            )));
        }
        if !(tau > 0.0) {
            return Err(Error::Config(format!(
                "temperature must be positive, got {tau}"
            )));
        }
        if popularity.iter().any(|&p| !(p > 0.0)) {
            return Err(Error::Config("popularity entries must be positive".into()));
        }
        let total: f64 = popularity.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!("popularity sums to {total}, not 1")));
        }
        Ok(GroundTruth { z, tau, popularity })
    }

    /// Zipf popularity and `N(0, 1/√rank)` latent factors, both from `config.seed`.
    /// The factor scale makes `z_i·z_j` roughly unit variance.
    pub fn generate(config: &ZipfConfig, rank: usize, tau: f64) -> Result<Self> {
        if rank == 0 {
            return Err(Error::Config("latent rank must be positive".into()));
        }
        let popularity = zipf_probabilities(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(FACTOR_STREAM);
        let scale = (rank as f64).powf(-0.25);
        let data = (0..config.v * rank)
            .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
            .collect();
        GroundTruth::new(Matrix::new(config.v, rank, data)?, tau, popularity)
    }

    pub fn vocab(&self) -> usize {
        self.z.rows()
    }

    pub fn rank(&self) -> usize {
        self.z.cols()
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn popularity(&self) -> &[f64] {
        &self.popularity
    }

    pub fn factors(&self) -> &Matrix {
        &self.z
    }

    /// Cumulative (unnormalized) target weights for `context`.
    fn target_cdf(&self, context: usize, log_pop: &[f64], buf: &mut Vec<f64>) {
        let zi = self.z.row(context);
        buf.clear();
        buf.extend((0..self.vocab()).map(|j| dot(zi, self.z.row(j)) / self.tau + log_pop[j]));
        let max = buf.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut acc = 0.0;
        for x in buf.iter_mut() {
            acc += (*x - max).exp();
            *x = acc;
        }
    }

    /// Exact target distribution for `context`, normalized.
    pub fn target_distribution(&self, context: usize) -> Vec<f64> {
        let log_pop: Vec<f64> = self.popularity.iter().map(|p| p.ln()).collect();
        let mut cdf = Vec::new();
        self.target_cdf(context, &log_pop, &mut cdf);
        let total = *cdf.last().unwrap();
        let mut prev = 0.0;
        cdf.iter()
            .map(|&c| {
                let p = (c - prev) / total;
                prev = c;
                p
            })
            .collect()
    }
}

fn cumulative(weights: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    weights
        .iter()
        .map(|w| {
            acc += w;
            acc
        })
        .collect()
}

fn sample_cdf<R: Rng + ?Sized>(cdf: &[f64], rng: &mut R) -> usize {
    let u = rng.random::<f64>() * cdf[cdf.len() - 1];
    cdf.partition_point(|&c| c <= u).min(cdf.len() - 1)
}

/// (context, target) pairs with per-item occurrence counts over both positions.
#[derive(Clone, Debug, PartialEq)]
pub struct InteractionLog {
    vocab: usize,
    pairs: Vec<(usize, usize)>,
    counts: Vec<u64>,
}

impl InteractionLog {
    pub fn new(vocab: usize, pairs: Vec<(usize, usize)>) -> Result<Self> {
        if let Some(&(c, t)) = pairs.iter().find(|&&(c, t)| c >= vocab || t >= vocab) {
            return Err(Error::IndexOutOfRange {
                index: c.max(t),
                vocab,
            });
        }
        let mut counts = vec![0u64; vocab];
        for &(c, t) in &pairs {
            counts[c] += 1;
            counts[t] += 1;
        }
        Ok(InteractionLog {
            vocab,
            pairs,
            counts,
        })
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::with_capacity(24 + 16 * self.pairs.len());
        w.bytes(&LOG_MAGIC);
        w.u32(LOG_VERSION);
        w.u64(self.vocab as u64);
        w.u64(self.pairs.len() as u64);
        for &(c, t) in &self.pairs {
            w.u64(c as u64);
            w.u64(t as u64);
        }
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, FormatError> {
        let mut r = Reader::new(bytes);
        r.magic(LOG_MAGIC)?;
        let version = r.u32("version")?;
        if version != LOG_VERSION {
            return Err(FormatError::UnsupportedVersion {
                found: version,
                supported: LOG_VERSION,
            });
        }
        let vocab = r.u64("vocabulary size")?;
        let n = r.u64("pair count")?;
        let start = r.offset();
        let flat = r.u64s(n.saturating_mul(2), "pairs")?;
        r.finish()?;
        if let Some(pos) = flat.iter().position(|&id| id >= vocab) {
            return Err(FormatError::Invalid {
                offset: start + 8 * pos as u64,
                reason: format!("item id {} out of range for vocabulary {vocab}", flat[pos]),
            });
        }
        let vocab = usize::try_from(vocab).map_err(|_| FormatError::Invalid {
            offset: 8,
            reason: "vocabulary size does not fit in memory".into(),
        })?;
        let pairs = flat
            .chunks_exact(2)
            .map(|p| (p[0] as usize, p[1] as usize))
            .collect();
        Ok(InteractionLog::new(vocab, pairs).expect("ids validated above"))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        InteractionLog::from_bytes(&bytes).map_err(|e| Error::format(path, e))
    }

    /// Splits off the last `min(n_eval, len/10)` pairs as a held-out set.
    pub fn split_holdout(&self, n_eval: usize) -> (InteractionLog, Vec<(usize, usize)>) {
        let n_eval = n_eval.min(self.len() / 10);
        let cut = self.len() - n_eval;
        let train = InteractionLog::new(self.vocab, self.pairs[..cut].to_vec())
            .expect("subset of a valid log");
        (train, self.pairs[cut..].to_vec())
    }
}

/// Draws `n` pairs. Contexts follow popularity; targets follow
/// `softmax(z_i·z_j/τ + log pop_j)` computed exactly over the whole vocabulary.
pub fn generate_log<R: Rng + ?Sized>(
    gt: &GroundTruth,
    n: usize,
    rng: &mut R,
) -> Result<InteractionLog> {
    if n == 0 {
        return Err(Error::Config("pair count must be at least 1".into()));
    }
    let v = gt.vocab();
    let pop_cdf = cumulative(&gt.popularity);
    let contexts: Vec<usize> = (0..n).map(|_| sample_cdf(&pop_cdf, rng)).collect();
    let target_seed = rng.next_u64();

    // Bucket positions by context so each context's target CDF is built once.
    let mut starts = vec![0usize; v + 1];
    for &c in &contexts {
        starts[c + 1] += 1;
    }
    for i in 0..v {
        starts[i + 1] += starts[i];
    }
    let mut fill = starts.clone();
    let mut positions = vec![0usize; n];
    for (pos, &c) in contexts.iter().enumerate() {
        positions[fill[c]] = pos;
        fill[c] += 1;
    }

    let log_pop: Vec<f64> = gt.popularity.iter().map(|p| p.ln()).collect();
    let mut targets = vec![0usize; n];
    let mut cdf = Vec::with_capacity(v);
    for context in 0..v {
        let slots = &positions[starts[context]..starts[context + 1]];
        if slots.is_empty() {
            continue;
        }
        gt.target_cdf(context, &log_pop, &mut cdf);
        let mut ctx_rng = ChaCha8Rng::seed_from_u64(target_seed);
        ctx_rng.set_stream(context as u64);
        for &pos in slots {
            targets[pos] = sample_cdf(&cdf, &mut ctx_rng);
        }
    }

    InteractionLog::new(v, contexts.into_iter().zip(targets).collect())
}

const LOG_STREAM: u64 = 2;

/// Everything needed to regenerate a synthetic log from scratch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DatasetSpec {
    pub zipf: ZipfConfig,
    pub rank: usize,
    pub tau: f64,
    pub pairs: usize,
}

impl DatasetSpec {
    /// The desk-scale default: V = 20,000, s = 1.2, rank 16, τ = 1, 2M pairs.
    pub fn desk(seed: u64) -> Self {
        DatasetSpec {
            zipf: ZipfConfig {
                v: 20_000,
                s: 1.2,
                seed,
            },
            rank: 16,
            tau: 1.0,
            pairs: 2_000_000,
        }
    }

    pub fn generate(&self) -> Result<InteractionLog> {
        let gt = GroundTruth::generate(&self.zipf, self.rank, self.tau)?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.zipf.seed);
        rng.set_stream(LOG_STREAM);
        generate_log(&gt, self.pairs, &mut rng)
    }
}

/// Old-id → new-id map produced by an access threshold.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VocabMap {
    old_to_new: Vec<usize>,
    size: usize,
}

impl VocabMap {
    /// Items seen fewer than `threshold` times go to [`OOV_ID`]; survivors are
    /// renumbered densely from 1 in ascending original-id order.
    pub fn from_counts(counts: &[u64], threshold: u64) -> Self {
        let mut next = OOV_ID + 1;
        let old_to_new = counts
            .iter()
            .map(|&c| {
                if c >= threshold {
                    next += 1;
                    next - 1
                } else {
                    OOV_ID
                }
            })
            .collect();
        VocabMap {
            old_to_new,
            size: next,
        }
    }

    /// Effective vocabulary: survivors plus the OOV bucket.
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn source_vocab(&self) -> usize {
        self.old_to_new.len()
    }

    pub fn map(&self, old: usize) -> usize {
        self.old_to_new[old]
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.old_to_new
    }

    pub fn remap(&self, log: &InteractionLog) -> Result<InteractionLog> {
        if log.vocab() != self.source_vocab() {
            return Err(Error::Config(format!(
                "log vocabulary {} does not match vocabulary map source {}",
                log.vocab(),
                self.source_vocab()
            )));
        }
        InteractionLog::new(
            self.size,
            log.pairs()
                .iter()
                .map(|&(c, t)| (self.map(c), self.map(t)))
                .collect(),
        )
    }
}

/// Collapses items with fewer than `threshold` occurrences into the OOV id.
/// The OOV id is reserved even at threshold 0, so the effective vocabulary is
/// always survivors + 1.
pub fn apply_access_threshold(log: &InteractionLog, threshold: u64) -> (InteractionLog, VocabMap) {
    let map = VocabMap::from_counts(log.counts(), threshold);
    let remapped = map.remap(log).expect("map built from this log");
    (remapped, map)
}
