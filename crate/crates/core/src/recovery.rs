//! Rank-one rounding of a lifted charge matrix.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{check_dim, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RecoveredCharges {
    pub charges: DVector<f64>,
    pub dominant_eigenvalue: f64,
    /// `lambda_max / Tr(Q)`; 1 for an exactly rank-one input, 0 for `Q = 0`.
    pub rank_ratio: f64,
    pub saturated: bool,
}

/// Frobenius-nearest rank-one factor `sqrt(lambda_max) v_max` of `q_star`.
///
/// The eigenvector sign is chosen to be closest to `previous`; without a
/// usable previous vector the largest-magnitude component is made
/// nonnegative.
pub fn recover(q_star: &DMatrix<f64>, previous: Option<&DVector<f64>>) -> Result<RecoveredCharges> {
    let n = q_star.nrows();
    check_dim("lifted matrix", n, q_star.ncols())?;
    if let Some(p) = previous {
        check_dim("previous charges", n, p.len())?;
    }
    if q_star.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("lifted matrix"));
    }
    let sym = (q_star + q_star.transpose()) * 0.5;
    let eig = SymmetricEigen::try_new(sym, f64::EPSILON, 10_000)
        .ok_or(Error::NonFinite("eigendecomposition"))?;
    let (k, &lambda) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty matrix");
    let lambda = lambda.max(0.0);
    let trace: f64 = eig.eigenvalues.iter().map(|l| l.max(0.0)).sum();
    let rank_ratio = if trace > 0.0 { (lambda / trace).clamp(0.0, 1.0) } else { 0.0 };

    let mut q = eig.eigenvectors.column(k).into_owned() * lambda.sqrt();
    if flip_sign(&q, previous) {
        q.neg_mut();
    }
    Ok(RecoveredCharges {
        charges: q,
        dominant_eigenvalue: lambda,
        rank_ratio,
        saturated: false,
    })
}

fn flip_sign(q: &DVector<f64>, previous: Option<&DVector<f64>>) -> bool {
    if let Some(p) = previous {
        let plus = (q - p).norm_squared();
        let minus = (q + p).norm_squared();
        let tol = 1e-14 * (q.norm_squared() + p.norm_squared());
        if (plus - minus).abs() > tol {
            return minus < plus;
        }
    }
    let lead = q.iter().copied().max_by(|a, b| a.abs().total_cmp(&b.abs()));
    lead.is_some_and(|v| v < 0.0)
}

/// Clamps every charge to `[-limit, limit]`. Returns the clamped vector and
/// whether any entry was clipped.
pub fn saturate(charges: &DVector<f64>, limit: f64) -> (DVector<f64>, bool) {
    let mut clipped = false;
    let out = charges.map(|q| {
        let c = q.clamp(-limit, limit);
        clipped |= c != q;
        c
    });
    (out, clipped)
}

impl RecoveredCharges {
    pub fn saturated(mut self, limit: f64) -> Self {
        let (c, clipped) = saturate(&self.charges, limit);
        self.charges = c;
        self.saturated = clipped;
        self
    }
}
