//! Points on the Stiefel manifold `{P ∈ R^{D×D′} : PᵀP = I}` and the QR
//! retraction used to update the projection layer.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{frobenius_norm, matmul_tn, thin_qr, LinalgError, Matrix};

/// Largest orthonormality defect a [`StiefelPoint`] may carry.
pub const STIEFEL_TOLERANCE: f64 = 1e-8;

/// Inputs this close to orthonormal are already their own Q factor (their R
/// is the identity to working precision) and are returned untouched.
pub const RETRACTION_FIXED_POINT: f64 = 1e-12;

/// A D×D′ matrix with orthonormal columns.
#[derive(Clone, Debug, PartialEq)]
pub struct StiefelPoint(Matrix);

impl StiefelPoint {
    /// Wraps `p` after checking `‖pᵀp − I‖_F < STIEFEL_TOLERANCE`.
    pub fn new(p: Matrix) -> Result<Self> {
        if p.rows() < p.cols() {
            return Err(LinalgError::Shape {
                op: "StiefelPoint::new",
                shape: p.shape(),
                reason: "needs rows >= cols",
            }
            .into());
        }
        let defect = orthonormality_defect(&p);
        if !(defect < STIEFEL_TOLERANCE) {
            return Err(Error::Domain(format!(
                "matrix is not column-orthonormal (defect {defect:e})"
            )));
        }
        Ok(StiefelPoint(p))
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }

    pub fn ambient_dim(&self) -> usize {
        self.0.rows()
    }

    pub fn dim(&self) -> usize {
        self.0.cols()
    }
}

impl AsRef<Matrix> for StiefelPoint {
    fn as_ref(&self) -> &Matrix {
        &self.0
    }
}

/// `‖pᵀp − I‖_F`.
pub fn orthonormality_defect(p: &Matrix) -> f64 {
    let gram = matmul_tn(p, p).expect("pᵀp is always well-shaped");
    let n = gram.cols();
    let mut sum = 0.0;
    for i in 0..n {
        for j in 0..n {
            let target = if i == j { 1.0 } else { 0.0 };
            let d = gram.get(i, j) - target;
            sum += d * d;
        }
    }
    sum.sqrt()
}

/// Q factor of a d×d′ standard-normal draw: uniform on the manifold up to the
/// QR sign convention.
pub fn random_orthonormal<R: Rng + ?Sized>(
    d: usize,
    d_prime: usize,
    rng: &mut R,
) -> Result<StiefelPoint> {
    if d_prime == 0 || d < d_prime {
        return Err(LinalgError::Shape {
            op: "random_orthonormal",
            shape: (d, d_prime),
            reason: "needs d >= d_prime >= 1",
        }
        .into());
    }
    let draws = (0..d * d_prime)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    let gaussian = Matrix::new(d, d_prime, draws)?;
    qr_retraction(&gaussian)
}

/// Maps `m` back onto the manifold via the Q factor of its thin QR.
pub fn qr_retraction(m: &Matrix) -> Result<StiefelPoint> {
    if m.rows() >= m.cols() && orthonormality_defect(m) <= RETRACTION_FIXED_POINT {
        return Ok(StiefelPoint(m.clone()));
    }
    let qr = thin_qr(m)?;
    StiefelPoint::new(qr.q)
}

/// `P ← QR(P − η·∇P)` with the raw Euclidean gradient.
pub fn ocp_update(p: &StiefelPoint, grad_p: &Matrix, eta: f64) -> Result<StiefelPoint> {
    if !(eta > 0.0) {
        return Err(Error::Config(format!(
            "projection learning rate must be positive, got {eta}"
        )));
    }
    if grad_p.shape() != p.0.shape() {
        return Err(Error::Shape {
            op: "ocp_update",
            expected: p.0.shape(),
            actual: grad_p.shape(),
        });
    }
    qr_retraction(&p.0.sub_scaled(grad_p, eta)?)
}

/// Distance `‖a − b‖_F` between two same-shaped matrices.
pub fn frobenius_distance(a: &Matrix, b: &Matrix) -> f64 {
    frobenius_norm(&a.sub(b).expect("same shape"))
}
