//! The item embedding table `E` (V×D) followed by the projection `P` (D×D′).
//!
//! Only the rows touched by a batch are ever gathered, and only those rows
//! receive gradients: the full V×D gradient is never formed.

use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::linalg::{matmul, matmul_nt, matmul_tn, Matrix};
use crate::manifold::{orthonormality_defect, StiefelPoint, STIEFEL_TOLERANCE};

/// How the projection is updated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ProjectionMode {
    /// Unconstrained `P`, plain gradient step.
    Baseline,
    /// `P` kept on the Stiefel manifold by QR retraction.
    Ocp,
}

impl ProjectionMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ProjectionMode::Baseline => "baseline",
            ProjectionMode::Ocp => "ocp",
        }
    }

    pub(crate) fn to_byte(self) -> u8 {
        match self {
            ProjectionMode::Baseline => 0,
            ProjectionMode::Ocp => 1,
        }
    }

    pub(crate) fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(ProjectionMode::Baseline),
            1 => Some(ProjectionMode::Ocp),
            _ => None,
        }
    }
}

impl fmt::Display for ProjectionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ProjectionMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ocp" => Ok(ProjectionMode::Ocp),
            "baseline" => Ok(ProjectionMode::Baseline),
            other => Err(format!("unknown mode {other:?} (expected ocp or baseline)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    e: Matrix,
}

impl EmbeddingTable {
    pub fn new(e: Matrix) -> Result<Self> {
        if e.rows() < 2 || e.cols() < 2 {
            return Err(Error::Config(format!(
                "embedding table must be at least 2x2, got {:?}",
                e.shape()
            )));
        }
        Ok(EmbeddingTable { e })
    }

    /// I.i.d. normal entries with standard deviation `1/√D`.
    pub fn random<R: Rng + ?Sized>(v: usize, d: usize, rng: &mut R) -> Result<Self> {
        if v < 2 || d < 2 {
            return Err(Error::Config(format!(
                "embedding table must be at least 2x2, got ({v}, {d})"
            )));
        }
        let normal = Normal::new(0.0, 1.0 / (d as f64).sqrt()).expect("positive std");
        let data = (0..v * d).map(|_| normal.sample(rng)).collect();
        EmbeddingTable::new(Matrix::new(v, d, data)?)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.e
    }

    pub fn vocab(&self) -> usize {
        self.e.rows()
    }

    pub fn dim(&self) -> usize {
        self.e.cols()
    }

    fn check_indices(&self, indices: &[usize]) -> Result<()> {
        match indices.iter().find(|&&i| i >= self.vocab()) {
            Some(&index) => Err(Error::IndexOutOfRange {
                index,
                vocab: self.vocab(),
            }),
            None => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionLayer {
    mode: ProjectionMode,
    p: Matrix,
}

impl ProjectionLayer {
    pub fn ocp(p: StiefelPoint) -> Self {
        ProjectionLayer {
            mode: ProjectionMode::Ocp,
            p: p.into_matrix(),
        }
    }

    pub fn baseline(p: Matrix) -> Self {
        ProjectionLayer {
            mode: ProjectionMode::Baseline,
            p,
        }
    }

    /// Validates the orthonormality invariant when `mode` is OCP.
    pub fn with_mode(mode: ProjectionMode, p: Matrix) -> Result<Self> {
        match mode {
            ProjectionMode::Ocp => Ok(ProjectionLayer::ocp(StiefelPoint::new(p)?)),
            ProjectionMode::Baseline => Ok(ProjectionLayer::baseline(p)),
        }
    }

    pub fn mode(&self) -> ProjectionMode {
        self.mode
    }

    pub fn matrix(&self) -> &Matrix {
        &self.p
    }

    pub fn input_dim(&self) -> usize {
        self.p.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.p.cols()
    }

    /// The projection as a manifold point, if it is one.
    pub fn stiefel(&self) -> Option<StiefelPoint> {
        match self.mode {
            ProjectionMode::Ocp => {
                Some(StiefelPoint::new(self.p.clone()).expect("OCP layers stay on the manifold"))
            }
            ProjectionMode::Baseline => None,
        }
    }

    pub(crate) fn replace(&mut self, p: Matrix) {
        debug_assert!(
            self.mode == ProjectionMode::Baseline || orthonormality_defect(&p) < STIEFEL_TOLERANCE
        );
        self.p = p;
    }
}

/// Everything the backward pass needs from a forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardCache {
    pub indices: Vec<usize>,
    pub e_rows: Matrix,
    pub h_rows: Matrix,
}

impl ForwardCache {
    pub fn batch_size(&self) -> usize {
        self.indices.len()
    }
}

/// `h[b] = E[indices[b]] · P`.
pub fn forward(
    table: &EmbeddingTable,
    layer: &ProjectionLayer,
    indices: &[usize],
) -> Result<(Matrix, ForwardCache)> {
    if indices.is_empty() {
        return Err(Error::Domain("empty batch".into()));
    }
    table.check_indices(indices)?;
    if layer.input_dim() != table.dim() {
        return Err(Error::Shape {
            op: "forward",
            expected: (table.dim(), layer.output_dim()),
            actual: layer.p.shape(),
        });
    }
    let e_rows = table.e.select_rows(indices)?;
    let h_rows = matmul(&e_rows, &layer.p)?;
    let cache = ForwardCache {
        indices: indices.to_vec(),
        e_rows,
        h_rows: h_rows.clone(),
    };
    Ok((h_rows, cache))
}

/// Gradient for the gathered rows: `∇H · Pᵀ`.
pub fn backward_embedding(grad_h: &Matrix, layer: &ProjectionLayer) -> Result<Matrix> {
    if grad_h.cols() != layer.output_dim() {
        return Err(Error::Shape {
            op: "backward_embedding",
            expected: (grad_h.rows(), layer.output_dim()),
            actual: grad_h.shape(),
        });
    }
    Ok(matmul_nt(grad_h, &layer.p)?)
}

/// `∇P = E_batchᵀ · ∇H`; repeated indices contribute once per occurrence.
pub fn backward_projection(cache: &ForwardCache, grad_h: &Matrix) -> Result<Matrix> {
    if grad_h.shape() != cache.h_rows.shape() {
        return Err(Error::Shape {
            op: "backward_projection",
            expected: cache.h_rows.shape(),
            actual: grad_h.shape(),
        });
    }
    Ok(matmul_tn(&cache.e_rows, grad_h)?)
}

/// Row-wise SGD. Repeated indices are applied in batch order, which for plain
/// SGD equals one step with the summed gradient.
pub fn sparse_sgd_update(
    table: &mut EmbeddingTable,
    indices: &[usize],
    grad_e_rows: &Matrix,
    lr: f64,
) -> Result<()> {
    if !(lr > 0.0) {
        return Err(Error::Config(format!(
            "embedding learning rate must be positive, got {lr}"
        )));
    }
    if grad_e_rows.rows() != indices.len() || grad_e_rows.cols() != table.dim() {
        return Err(Error::Shape {
            op: "sparse_sgd_update",
            expected: (indices.len(), table.dim()),
            actual: grad_e_rows.shape(),
        });
    }
    table.check_indices(indices)?;
    // Validate before touching the table so a failure leaves it intact.
    for (b, &idx) in indices.iter().enumerate() {
        let row = table.e.row(idx);
        if row
            .iter()
            .zip(grad_e_rows.row(b))
            .any(|(x, g)| !(x - lr * g).is_finite())
        {
            return Err(Error::Domain(format!(
                "non-finite embedding row {idx} after update"
            )));
        }
    }
    for (b, &idx) in indices.iter().enumerate() {
        for (x, g) in table.e.row_mut(idx).iter_mut().zip(grad_e_rows.row(b)) {
            *x -= lr * g;
        }
    }
    Ok(())
}
