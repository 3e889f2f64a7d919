//! Sampled-softmax next-item training over projected embeddings.
//!
//! Both projection modes draw the same initialization, the same batch order and
//! the same negatives for a given seed; only the projection update differs.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::codec::{Reader, Writer};
use crate::embedding::{
    backward_embedding, backward_projection, forward, sparse_sgd_update, EmbeddingTable,
    ProjectionLayer, ProjectionMode,
};
use crate::error::{Error, FormatError, Result};
use crate::linalg::{dot, Matrix};
use crate::manifold::{ocp_update, orthonormality_defect, random_orthonormal, STIEFEL_TOLERANCE};
use crate::synth::{apply_access_threshold, InteractionLog, VocabMap};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"OCPC";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Steps per loss-curve point.
pub const LOG_WINDOW: u64 = 100;

const TABLE_STREAM: u64 = 10;
const PROJECTION_STREAM: u64 = 11;
const NEGATIVE_STREAM: u64 = 12;
const DATA_STREAM_BASE: u64 = 1 << 32;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Vocabulary of the raw log, before any access threshold.
    pub v: usize,
    pub d: usize,
    pub d_prime: usize,
    pub mode: ProjectionMode,
    pub lr_e: f64,
    pub lr_p: f64,
    pub batch_size: usize,
    pub negatives: usize,
    pub steps: u64,
    pub seed: u64,
    pub access_threshold: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            v: 20_000,
            d: 64,
            d_prime: 32,
            mode: ProjectionMode::Ocp,
            lr_e: 0.5,
            lr_p: 0.05,
            batch_size: 64,
            negatives: 4,
            steps: 20_000,
            seed: 0,
            access_threshold: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.v < 2 {
            return fail(format!("v must be at least 2, got {}", self.v));
        }
        if self.d_prime < 2 || self.d < self.d_prime {
            return fail(format!(
                "need d >= d_prime >= 2, got d={} d_prime={}",
                self.d, self.d_prime
            ));
        }
        if self.batch_size == 0 || self.negatives == 0 {
            return fail("batch_size and negatives must be at least 1".into());
        }
        if !(self.lr_e > 0.0 && self.lr_e.is_finite() && self.lr_p > 0.0 && self.lr_p.is_finite()) {
            return fail(format!(
                "learning rates must be positive, got lr_e={} lr_p={}",
                self.lr_e, self.lr_p
            ));
        }
        Ok(())
    }
}

/// Generator state for negatives and batch order.
///
/// Batches walk a per-epoch permutation of the training pairs; the permutation
/// is a pure function of `(data_seed, epoch)` so only the cursor needs saving.
#[derive(Clone, Debug)]
pub struct TrainRng {
    negatives: ChaCha8Rng,
    data_seed: u64,
    epoch: u64,
    cursor: u64,
    order: Option<(usize, Vec<usize>)>,
}

const RNG_STATE_LEN: usize = 32 + 8 + 16 + 8 + 8 + 8;

impl TrainRng {
    pub fn new(seed: u64) -> Self {
        let mut negatives = ChaCha8Rng::seed_from_u64(seed);
        negatives.set_stream(NEGATIVE_STREAM);
        TrainRng {
            negatives,
            data_seed: seed,
            epoch: 0,
            cursor: 0,
            order: None,
        }
    }

    /// `k` ids per target, uniform over `[0, vocab)`, redrawn on collision with the target.
    pub fn sample_negatives(&mut self, targets: &[usize], k: usize, vocab: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(targets.len() * k);
        for &t in targets {
            for _ in 0..k {
                let n = loop {
                    let n = self.negatives.random_range(0..vocab);
                    if n != t {
                        break n;
                    }
                };
                out.push(n);
            }
        }
        out
    }

    fn epoch_order(&self, n_pairs: usize) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.data_seed);
        rng.set_stream(DATA_STREAM_BASE + self.epoch);
        let mut order: Vec<usize> = (0..n_pairs).collect();
        order.shuffle(&mut rng);
        order
    }

    /// Next `batch` pair positions out of `n_pairs`, wrapping into a fresh epoch.
    pub fn next_batch(&mut self, batch: usize, n_pairs: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(batch);
        while out.len() < batch {
            let stale = !matches!(&self.order, Some((n, _)) if *n == n_pairs);
            if stale {
                self.order = Some((n_pairs, self.epoch_order(n_pairs)));
            }
            let order = &self.order.as_ref().unwrap().1;
            let take = (batch - out.len()).min(n_pairs - self.cursor as usize);
            let start = self.cursor as usize;
            out.extend_from_slice(&order[start..start + take]);
            self.cursor += take as u64;
            if self.cursor as usize == n_pairs {
                self.epoch += 1;
                self.cursor = 0;
                self.order = None;
            }
        }
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::with_capacity(RNG_STATE_LEN);
        w.bytes(&self.negatives.get_seed());
        w.u64(self.negatives.get_stream());
        w.bytes(&self.negatives.get_word_pos().to_le_bytes());
        w.u64(self.data_seed);
        w.u64(self.epoch);
        w.u64(self.cursor);
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Option<Self> {
        if bytes.len() != RNG_STATE_LEN {
            return None;
        }
        let seed: [u8; 32] = bytes[..32].try_into().unwrap();
        let stream = u64::from_le_bytes(bytes[32..40].try_into().unwrap());
        let word_pos = u128::from_le_bytes(bytes[40..56].try_into().unwrap());
        let mut negatives = ChaCha8Rng::from_seed(seed);
        negatives.set_stream(stream);
        negatives.set_word_pos(word_pos);
        let read = |i: usize| u64::from_le_bytes(bytes[i..i + 8].try_into().unwrap());
        Some(TrainRng {
            negatives,
            data_seed: read(56),
            epoch: read(64),
            cursor: read(72),
            order: None,
        })
    }
}

impl PartialEq for TrainRng {
    fn eq(&self, other: &Self) -> bool {
        self.to_bytes() == other.to_bytes()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub table: EmbeddingTable,
    pub layer: ProjectionLayer,
    pub step: u64,
    pub rng: TrainRng,
    /// Per-item occurrence counts of the (thresholded) training log.
    pub counts: Vec<u64>,
}

impl TrainState {
    /// Table ~ N(0, 1/D); projection is a random orthonormal D×D′ for both
    /// modes, so equal seeds give equal starting points.
    pub fn init(config: &TrainConfig, vocab: usize, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != vocab {
            return Err(Error::Config(format!(
                "{} counts for vocabulary of {vocab}",
                counts.len()
            )));
        }
        let mut table_rng = ChaCha8Rng::seed_from_u64(config.seed);
        table_rng.set_stream(TABLE_STREAM);
        let table = EmbeddingTable::random(vocab, config.d, &mut table_rng)?;

        let mut proj_rng = ChaCha8Rng::seed_from_u64(config.seed);
        proj_rng.set_stream(PROJECTION_STREAM);
        let p = random_orthonormal(config.d, config.d_prime, &mut proj_rng)?;
        let layer = match config.mode {
            ProjectionMode::Ocp => ProjectionLayer::ocp(p),
            ProjectionMode::Baseline => ProjectionLayer::baseline(p.into_matrix()),
        };
        Ok(TrainState {
            table,
            layer,
            step: 0,
            rng: TrainRng::new(config.seed),
            counts,
        })
    }

    pub fn vocab(&self) -> usize {
        self.table.vocab()
    }

    pub fn projection_defect(&self) -> f64 {
        orthonormality_defect(self.layer.matrix())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let (v, d) = self.table.matrix().shape();
        let d_prime = self.layer.output_dim();
        let rng = self.rng.to_bytes();
        let mut w = Writer::with_capacity(40 + 8 * (v * d + d * d_prime + v) + rng.len());
        w.bytes(&CHECKPOINT_MAGIC);
        w.u32(CHECKPOINT_VERSION);
        w.u8(self.layer.mode().to_byte());
        w.u64(v as u64);
        w.u32(d as u32);
        w.u32(d_prime as u32);
        w.u64(self.step);
        w.f64s(self.table.matrix().as_slice());
        w.f64s(self.layer.matrix().as_slice());
        for &c in &self.counts {
            w.u64(c);
        }
        w.u64(rng.len() as u64);
        w.bytes(&rng);
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, FormatError> {
        let mut r = Reader::new(bytes);
        r.magic(CHECKPOINT_MAGIC)?;
        let version = r.u32("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(FormatError::UnsupportedVersion {
                found: version,
                supported: CHECKPOINT_VERSION,
            });
        }
        let mode_offset = r.offset();
        let mode = ProjectionMode::from_byte(r.u8("mode")?).ok_or(FormatError::Invalid {
            offset: mode_offset,
            reason: "mode byte must be 0 or 1".into(),
        })?;
        let header_offset = r.offset();
        let v = r.u64("vocabulary size")?;
        let d = r.u32("embedding dimension")? as u64;
        let d_prime = r.u32("projection dimension")? as u64;
        let step = r.u64("step")?;
        if v < 2 || d < 2 || d_prime < 1 || d < d_prime {
            return Err(FormatError::Invalid {
                offset: header_offset,
                reason: format!("bad dimensions V={v} D={d} D'={d_prime}"),
            });
        }
        let table_offset = r.offset();
        let table = r.f64s(v.saturating_mul(d), "embedding table")?;
        let proj_offset = r.offset();
        let proj = r.f64s(d * d_prime, "projection")?;
        let counts = r.u64s(v, "counts")?;
        let rng_len = r.u64("rng state length")?;
        let rng_offset = r.offset();
        let rng_bytes = r.take(r.expect(rng_len, 1, "rng state")?, "rng state")?;
        r.finish()?;

        let (v, d, d_prime) = (v as usize, d as usize, d_prime as usize);
        let table = Matrix::new(v, d, table)
            .ok()
            .and_then(|m| EmbeddingTable::new(m).ok())
            .ok_or(FormatError::Invalid {
                offset: table_offset,
                reason: "invalid embedding table".into(),
            })?;
        let layer = Matrix::new(d, d_prime, proj)
            .ok()
            .and_then(|p| ProjectionLayer::with_mode(mode, p).ok())
            .ok_or(FormatError::Invalid {
                offset: proj_offset,
                reason: "projection is not orthonormal in OCP mode".into(),
            })?;
        let rng = TrainRng::from_bytes(rng_bytes).ok_or(FormatError::Invalid {
            offset: rng_offset,
            reason: format!("rng state has {rng_len} bytes, expected {RNG_STATE_LEN}"),
        })?;
        Ok(TrainState {
            table,
            layer,
            step,
            rng,
            counts,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        TrainState::from_bytes(&bytes).map_err(|e| Error::format(path, e))
    }
}

pub fn save_checkpoint(state: &TrainState, path: &Path) -> Result<()> {
    state.save(path)
}

pub fn load_checkpoint(path: &Path) -> Result<TrainState> {
    TrainState::load(path)
}

/// Mean loss and its gradients with respect to all three inputs.
#[derive(Clone, Debug)]
pub struct SoftmaxLoss {
    pub loss: f64,
    pub grad_context: Matrix,
    pub grad_targets: Matrix,
    /// Row `b*K + k` is the gradient for negative `k` of example `b`.
    pub grad_negatives: Matrix,
}

/// Per example: `−log(exp(s⁺) / (exp(s⁺) + Σ_k exp(s⁻_k)))` with `s` the dot
/// product of the context row with the target or negative row; averaged over
/// the batch. `h_negatives` holds `K` consecutive rows per example.
pub fn sampled_softmax_loss(
    h_context: &Matrix,
    h_targets: &Matrix,
    h_negatives: &Matrix,
    k: usize,
) -> Result<SoftmaxLoss> {
    let (b, dim) = h_context.shape();
    if h_targets.shape() != (b, dim) {
        return Err(Error::Shape {
            op: "sampled_softmax_loss(targets)",
            expected: (b, dim),
            actual: h_targets.shape(),
        });
    }
    if k == 0 || h_negatives.shape() != (b * k, dim) {
        return Err(Error::Shape {
            op: "sampled_softmax_loss(negatives)",
            expected: (b * k, dim),
            actual: h_negatives.shape(),
        });
    }

    let inv_b = 1.0 / b as f64;
    let mut loss = 0.0;
    let mut gc = vec![0.0; b * dim];
    let mut gt = vec![0.0; b * dim];
    let mut gn = vec![0.0; b * k * dim];
    let mut scores = vec![0.0; k + 1];
    for i in 0..b {
        let hc = h_context.row(i);
        let ht = h_targets.row(i);
        scores[0] = dot(hc, ht);
        for j in 0..k {
            scores[j + 1] = dot(hc, h_negatives.row(i * k + j));
        }
        let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = scores.iter().map(|s| (s - max).exp()).sum();
        let lse = max + sum.ln();
        loss += lse - scores[0];

        // dℓ/ds_j = softmax_j − [j = positive], scaled by 1/B.
        let weights: Vec<f64> = scores
            .iter()
            .enumerate()
            .map(|(j, s)| ((s - lse).exp() - if j == 0 { 1.0 } else { 0.0 }) * inv_b)
            .collect();

        let gc_row = &mut gc[i * dim..(i + 1) * dim];
        for (g, &t) in gc_row.iter_mut().zip(ht) {
            *g += weights[0] * t;
        }
        for (x, &c) in gt[i * dim..(i + 1) * dim].iter_mut().zip(hc) {
            *x = weights[0] * c;
        }
        for j in 0..k {
            let w = weights[j + 1];
            let hn = h_negatives.row(i * k + j);
            for (g, &n) in gc_row.iter_mut().zip(hn) {
                *g += w * n;
            }
            let row = i * k + j;
            for (x, &c) in gn[row * dim..(row + 1) * dim].iter_mut().zip(hc) {
                *x = w * c;
            }
        }
    }
    Ok(SoftmaxLoss {
        loss: loss * inv_b,
        grad_context: Matrix::new(b, dim, gc)?,
        grad_targets: Matrix::new(b, dim, gt)?,
        grad_negatives: Matrix::new(b * k, dim, gn)?,
    })
}

/// Samples negatives from the state's generator, then applies [`apply_step`].
pub fn train_step(
    state: &mut TrainState,
    batch: &[(usize, usize)],
    config: &TrainConfig,
) -> Result<f64> {
    let targets: Vec<usize> = batch.iter().map(|&(_, t)| t).collect();
    let negatives = state
        .rng
        .sample_negatives(&targets, config.negatives, state.vocab());
    apply_step(state, batch, &negatives, config)
}

/// One SGD step with explicit negatives (`K` per pair, consecutive).
///
/// Contexts, targets and negatives share the table and the projection; the
/// projection gradient is the sum over all three roles.
pub fn apply_step(
    state: &mut TrainState,
    batch: &[(usize, usize)],
    negatives: &[usize],
    config: &TrainConfig,
) -> Result<f64> {
    let b = batch.len();
    let k = config.negatives;
    if b == 0 || negatives.len() != b * k {
        return Err(Error::Shape {
            op: "apply_step",
            expected: (b, k),
            actual: (b, negatives.len() / b.max(1)),
        });
    }
    if state.layer.mode() != config.mode {
        return Err(Error::Config(format!(
            "state is in {} mode but config asks for {}",
            state.layer.mode(),
            config.mode
        )));
    }
    let mut indices = Vec::with_capacity(b * (2 + k));
    indices.extend(batch.iter().map(|&(c, _)| c));
    indices.extend(batch.iter().map(|&(_, t)| t));
    indices.extend_from_slice(negatives);

    let (h, cache) = forward(&state.table, &state.layer, &indices)?;
    let sl = sampled_softmax_loss(
        &h.row_block(0, b),
        &h.row_block(b, 2 * b),
        &h.row_block(2 * b, indices.len()),
        k,
    )?;
    if !sl.loss.is_finite() {
        return Err(Error::NonFiniteLoss {
            step: state.step,
            loss: sl.loss,
        });
    }
    let grad_h = Matrix::vstack(&[&sl.grad_context, &sl.grad_targets, &sl.grad_negatives])?;
    let grad_e = backward_embedding(&grad_h, &state.layer)?;
    let grad_p = backward_projection(&cache, &grad_h)?;

    sparse_sgd_update(&mut state.table, &indices, &grad_e, config.lr_e)?;
    let p = match state.layer.stiefel() {
        Some(p) => ocp_update(&p, &grad_p, config.lr_p)?.into_matrix(),
        None => state.layer.matrix().sub_scaled(&grad_p, config.lr_p)?,
    };
    state.layer.replace(p);
    state.step += 1;
    Ok(sl.loss)
}

/// `(step, mean loss over the preceding window)` points.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossCurve {
    pub points: Vec<(u64, f64)>,
}

impl LossCurve {
    /// Mean loss of the last logged window.
    pub fn final_loss(&self) -> Option<f64> {
        self.points.last().map(|&(_, l)| l)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,loss\n");
        for (step, loss) in &self.points {
            out.push_str(&format!("{step},{loss}\n"));
        }
        out
    }
}

/// Result of [`train`].
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub state: TrainState,
    pub curve: LossCurve,
    pub vocab_map: VocabMap,
    /// SHA-256 over every batch's pair positions and negatives, in order.
    pub data_order_digest: String,
}

/// Thresholds the log, initializes, and runs `config.steps` steps over shuffled
/// batches, logging the mean loss every [`LOG_WINDOW`] steps.
pub fn train(config: &TrainConfig, log: &InteractionLog) -> Result<TrainOutcome> {
    config.validate()?;
    if log.vocab() != config.v {
        return Err(Error::Config(format!(
            "log vocabulary {} does not match configured v = {}",
            log.vocab(),
            config.v
        )));
    }
    if log.is_empty() {
        return Err(Error::Config("training log is empty".into()));
    }
    let (log, vocab_map) = apply_access_threshold(log, config.access_threshold);
    if vocab_map.size() < 2 {
        return Err(Error::Config(format!(
            "access threshold {} leaves an effective vocabulary of {}",
            config.access_threshold,
            vocab_map.size()
        )));
    }
    let mut state = TrainState::init(config, vocab_map.size(), log.counts().to_vec())?;
    let mut curve = LossCurve::default();
    let mut hasher = Sha256::new();
    let mut window_sum = 0.0;
    let mut window_len = 0u64;
    let pairs = log.pairs();

    while state.step < config.steps {
        let step = state.step;
        let positions = state.rng.next_batch(config.batch_size, pairs.len());
        let batch: Vec<(usize, usize)> = positions.iter().map(|&i| pairs[i]).collect();
        let targets: Vec<usize> = batch.iter().map(|&(_, t)| t).collect();
        let negatives = state
            .rng
            .sample_negatives(&targets, config.negatives, state.vocab());
        for &x in positions.iter().chain(&negatives) {
            hasher.update((x as u64).to_le_bytes());
        }

        let loss = apply_step(&mut state, &batch, &negatives, config).map_err(|e| match e {
            e @ Error::NonFiniteLoss { .. } => e,
            e => Error::Training {
                step,
                source: Box::new(e),
            },
        })?;
        if config.mode == ProjectionMode::Ocp {
            let defect = state.projection_defect();
            if !(defect < STIEFEL_TOLERANCE) {
                return Err(Error::Training {
                    step,
                    source: Box::new(Error::Domain(format!(
                        "projection left the manifold (defect {defect:e})"
                    ))),
                });
            }
        }
        window_sum += loss;
        window_len += 1;
        if state.step % LOG_WINDOW == 0 || state.step == config.steps {
            curve
                .points
                .push((state.step, window_sum / window_len as f64));
            window_sum = 0.0;
            window_len = 0;
        }
    }

    let digest = hasher.finalize();
    Ok(TrainOutcome {
        state,
        curve,
        vocab_map,
        data_order_digest: digest.iter().map(|b| format!("{b:02x}")).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::StiefelPoint;

    fn tiny_config(mode: ProjectionMode) -> TrainConfig {
        TrainConfig {
            v: 6,
            d: 4,
            d_prime: 2,
            mode,
            batch_size: 3,
            negatives: 2,
            steps: 5,
            seed: 3,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn symmetric_two_way_softmax_is_ln2() {
        let h = Matrix::from_rows(&[[1.0, 0.5]]).unwrap();
        let sl = sampled_softmax_loss(&h, &h, &h, 1).unwrap();
        assert!((sl.loss - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn saturated_softmax_has_negligible_loss() {
        let hc = Matrix::from_rows(&[[30f64.sqrt(), 0.0]]).unwrap();
        let hn = Matrix::from_rows(&[[0.0, 1.0]]).unwrap();
        let sl = sampled_softmax_loss(&hc, &hc, &hn, 1).unwrap();
        assert!(sl.loss < 1e-12);
    }

    #[test]
    fn softmax_shape_errors() {
        let a = Matrix::zeros(2, 3);
        assert!(sampled_softmax_loss(&a, &Matrix::zeros(2, 2), &Matrix::zeros(4, 3), 2).is_err());
        assert!(sampled_softmax_loss(&a, &a, &Matrix::zeros(3, 3), 2).is_err());
    }

    #[test]
    fn negatives_never_hit_the_target() {
        let mut rng = TrainRng::new(1);
        let negs = rng.sample_negatives(&[0, 1, 0], 50, 2);
        for (i, &n) in negs.iter().enumerate() {
            let target = [0, 1, 0][i / 50];
            assert_ne!(n, target);
        }
    }

    #[test]
    fn batches_cover_an_epoch_without_repeats() {
        let mut rng = TrainRng::new(5);
        let mut seen = rng.next_batch(4, 10);
        seen.extend(rng.next_batch(6, 10));
        seen.sort();
        assert_eq!(seen, (0..10).collect::<Vec<_>>());
        assert_eq!(rng.epoch, 1);
        assert_eq!(rng.next_batch(3, 10).len(), 3);
    }

    #[test]
    fn rng_state_roundtrip_resumes_the_same_stream() {
        let mut a = TrainRng::new(9);
        a.next_batch(7, 20);
        a.sample_negatives(&[1, 2], 3, 10);
        let mut b = TrainRng::from_bytes(&a.to_bytes()).unwrap();
        assert_eq!(a.next_batch(30, 20), b.next_batch(30, 20));
        assert_eq!(
            a.sample_negatives(&[4], 8, 10),
            b.sample_negatives(&[4], 8, 10)
        );
    }

    #[test]
    fn saturated_step_changes_nothing() {
        for mode in [ProjectionMode::Ocp, ProjectionMode::Baseline] {
            let config = TrainConfig {
                v: 2,
                d: 2,
                d_prime: 2,
                mode,
                batch_size: 1,
                negatives: 1,
                ..TrainConfig::default()
            };
            let mut state = TrainState::init(&config, 2, vec![1, 1]).unwrap();
            state.table =
                EmbeddingTable::new(Matrix::from_rows(&[[30f64.sqrt(), 0.0], [0.0, 1.0]]).unwrap())
                    .unwrap();
            let identity = Matrix::identity(2);
            state.layer = ProjectionLayer::with_mode(mode, identity.clone()).unwrap();
            let before = state.clone();
            let loss = train_step(&mut state, &[(0, 0)], &config).unwrap();
            assert!(loss < 1e-12);
            assert!(state.table.matrix().max_abs_diff(before.table.matrix()) < 1e-12);
            assert!(state.layer.matrix().max_abs_diff(&identity) < 1e-12);
            assert_eq!(state.step, 1);
        }
    }

    #[test]
    fn ocp_step_keeps_projection_orthonormal() {
        let config = tiny_config(ProjectionMode::Ocp);
        let mut state = TrainState::init(&config, 6, vec![1; 6]).unwrap();
        for _ in 0..10 {
            train_step(&mut state, &[(0, 1), (2, 3), (4, 5)], &config).unwrap();
            assert!(state.projection_defect() < 1e-8);
        }
    }

    #[test]
    fn mode_mismatch_is_rejected() {
        let config = tiny_config(ProjectionMode::Ocp);
        let mut state = TrainState::init(&config, 6, vec![1; 6]).unwrap();
        let other = tiny_config(ProjectionMode::Baseline);
        assert!(matches!(
            train_step(&mut state, &[(0, 1)], &other),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn both_modes_share_initialization() {
        let ocp = TrainState::init(&tiny_config(ProjectionMode::Ocp), 6, vec![0; 6]).unwrap();
        let base = TrainState::init(&tiny_config(ProjectionMode::Baseline), 6, vec![0; 6]).unwrap();
        assert_eq!(ocp.table, base.table);
        assert_eq!(ocp.layer.matrix(), base.layer.matrix());
        assert!(StiefelPoint::new(base.layer.matrix().clone()).is_ok());
    }

    #[test]
    fn train_validates_inputs() {
        let log = InteractionLog::new(6, vec![(0, 1), (1, 2)]).unwrap();
        let mut config = tiny_config(ProjectionMode::Ocp);
        config.v = 7;
        assert!(matches!(train(&config, &log), Err(Error::Config(_))));

        let mut config = tiny_config(ProjectionMode::Ocp);
        config.access_threshold = 1_000;
        assert!(matches!(train(&config, &log), Err(Error::Config(_))));

        let mut config = tiny_config(ProjectionMode::Ocp);
        config.d_prime = 5;
        assert!(matches!(train(&config, &log), Err(Error::Config(_))));
    }

    #[test]
    fn loss_curve_logs_windows_and_tail() {
        let log =
            InteractionLog::new(6, (0..40).map(|i| (i % 6, (i * 5 + 1) % 6)).collect()).unwrap();
        let mut config = tiny_config(ProjectionMode::Baseline);
        config.steps = 250;
        let out = train(&config, &log).unwrap();
        let steps: Vec<u64> = out.curve.points.iter().map(|p| p.0).collect();
        assert_eq!(steps, vec![100, 200, 250]);
        assert_eq!(out.state.step, 250);
        assert!(out.curve.to_csv().starts_with("step,loss\n100,"));
    }
}
