//! Orthogonal constrained projection (OCP) for item-embedding training.
//!
//! An item embedding table `E` (V×D) is read through a projection `P` (D×D′).
//! In OCP mode `P` is kept column-orthonormal by a QR retraction after every
//! gradient step; in baseline mode it is an ordinary dense weight. The
//! [`diagnostics`] module measures the resulting spectral health of `E`.
//!
//! Module map:
//! - [`linalg`]: dense matrices, Householder thin QR, Jacobi singular values.
//! - [`manifold`]: Stiefel points, QR retraction, the OCP update.
//! - [`embedding`]: forward/backward through the table and projection.
//! - [`synth`]: Zipf-skewed synthetic interaction logs and access thresholds.
//! - [`trainer`]: sampled-softmax training loop and checkpoints.
//! - [`diagnostics`]: singular entropy, stratified spectra, hit@k.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` also rejects NaN

mod codec;
pub mod diagnostics;
pub mod embedding;
pub mod error;
pub mod linalg;
pub mod manifold;
pub mod synth;
pub mod trainer;

pub use diagnostics::{
    hit_at_k, singular_entropy, spectrum_report, stratified_se, HitAtKReport, SpectrumReport,
    StratifiedSEReport,
};
pub use embedding::{EmbeddingTable, ForwardCache, ProjectionLayer, ProjectionMode};
pub use error::{Error, FormatError, Result};
pub use linalg::{LinalgError, Matrix, QrFactors, SingularValues};
pub use manifold::StiefelPoint;
pub use synth::{GroundTruth, InteractionLog, VocabMap, ZipfConfig};
pub use trainer::{LossCurve, TrainConfig, TrainOutcome, TrainState};
