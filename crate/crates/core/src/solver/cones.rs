//! Cone bookkeeping and Euclidean projections.
//!
//! A stacked slack vector is laid out as `[zero | nonnegative | psd_1 | ..]`.
//! PSD blocks use the scaled lower-triangular vectorization: column-major
//! lower triangle with off-diagonal entries multiplied by `sqrt(2)`, so that
//! `svec(X) . svec(Y) = Tr(X Y)`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{check_dim, Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ConeSpec {
    pub zero: usize,
    pub nonneg: usize,
    /// Side lengths of the PSD blocks.
    pub psd: Vec<usize>,
}

impl ConeSpec {
    pub fn dim(&self) -> usize {
        self.zero + self.nonneg + self.psd.iter().map(|&n| svec_len(n)).sum::<usize>()
    }

    /// Offsets of each PSD block in the stacked vector.
    pub fn psd_offsets(&self) -> Vec<usize> {
        let mut off = self.zero + self.nonneg;
        self.psd
            .iter()
            .map(|&n| {
                let o = off;
                off += svec_len(n);
                o
            })
            .collect()
    }
}

pub fn svec_len(n: usize) -> usize {
    n * (n + 1) / 2
}

/// Position of entry `(i, j)`, `i >= j`, inside `svec` of an `n x n` matrix.
pub fn svec_index(n: usize, i: usize, j: usize) -> usize {
    let (i, j) = if i >= j { (i, j) } else { (j, i) };
    // columns before j hold n + (n-1) + .. + (n-j+1) entries
    j * (2 * n - j + 1) / 2 + (i - j)
}

pub fn svec(m: &DMatrix<f64>) -> DVector<f64> {
    let n = m.nrows();
    let mut v = DVector::zeros(svec_len(n));
    write_svec(m, v.as_mut_slice());
    v
}

pub fn smat(v: &[f64], n: usize) -> DMatrix<f64> {
    debug_assert_eq!(v.len(), svec_len(n));
    let mut m = DMatrix::zeros(n, n);
    let mut k = 0;
    for j in 0..n {
        for i in j..n {
            if i == j {
                m[(i, j)] = v[k];
            } else {
                let x = v[k] / std::f64::consts::SQRT_2;
                m[(i, j)] = x;
                m[(j, i)] = x;
            }
            k += 1;
        }
    }
    m
}

fn write_svec(m: &DMatrix<f64>, out: &mut [f64]) {
    let n = m.nrows();
    let mut k = 0;
    for j in 0..n {
        for i in j..n {
            out[k] = if i == j {
                m[(i, j)]
            } else {
                0.5 * (m[(i, j)] + m[(j, i)]) * std::f64::consts::SQRT_2
            };
            k += 1;
        }
    }
}

fn eigen(m: DMatrix<f64>) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    SymmetricEigen::try_new(m, f64::EPSILON, 10_000).ok_or(Error::NonFinite("eigendecomposition"))
}

/// Nearest positive semidefinite matrix in Frobenius norm.
pub fn project_psd(s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if s.nrows() != s.ncols() {
        return Err(Error::Dimension {
            context: "psd projection",
            expected: s.nrows(),
            actual: s.ncols(),
        });
    }
    if s.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("psd projection input"));
    }
    let sym = (s + s.transpose()) * 0.5;
    let eig = eigen(sym)?;
    let clamped = eig.eigenvalues.map(|l| l.max(0.0));
    let out = &eig.eigenvectors * DMatrix::from_diagonal(&clamped) * eig.eigenvectors.transpose();
    Ok((&out + out.transpose()) * 0.5)
}

fn project_psd_svec(v: &mut [f64], n: usize) -> Result<()> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("psd block"));
    }
    let eig = eigen(smat(v, n))?;
    if eig.eigenvalues.iter().all(|&l| l >= 0.0) {
        return Ok(());
    }
    let mut out = DMatrix::zeros(n, n);
    for (k, &l) in eig.eigenvalues.iter().enumerate() {
        if l > 0.0 {
            let col = eig.eigenvectors.column(k);
            out += col * col.transpose() * l;
        }
    }
    write_svec(&out, v);
    Ok(())
}

/// Projects a stacked vector onto the product cone, in place.
pub(crate) fn project_cone_in_place(v: &mut [f64], cones: &ConeSpec) -> Result<()> {
    let (z, rest) = v.split_at_mut(cones.zero);
    z.iter_mut().for_each(|x| *x = 0.0);
    let (nn, mut rest) = rest.split_at_mut(cones.nonneg);
    nn.iter_mut().for_each(|x| *x = x.max(0.0));
    for &n in &cones.psd {
        let (block, tail) = rest.split_at_mut(svec_len(n));
        project_psd_svec(block, n)?;
        rest = tail;
    }
    Ok(())
}

/// Blockwise Euclidean projection onto `{0} x R+ x S+ x ..`.
pub fn project_cone(s: &DVector<f64>, cones: &ConeSpec) -> Result<DVector<f64>> {
    check_dim("cone projection", cones.dim(), s.len())?;
    let mut out = s.clone();
    project_cone_in_place(out.as_mut_slice(), cones)?;
    Ok(out)
}

/// Largest violation of cone membership: `|zero block|`, negative parts of the
/// nonnegative block and negative eigenvalues of PSD blocks.
pub fn cone_violation(s: &DVector<f64>, cones: &ConeSpec) -> Result<f64> {
    check_dim("cone membership", cones.dim(), s.len())?;
    let v = s.as_slice();
    let mut worst = v[..cones.zero].iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    worst = v[cones.zero..cones.zero + cones.nonneg]
        .iter()
        .fold(worst, |m, x| m.max(-x));
    for (&n, off) in cones.psd.iter().zip(cones.psd_offsets()) {
        let eig = eigen(smat(&v[off..off + svec_len(n)], n))?;
        worst = worst.max(-eig.eigenvalues.min());
    }
    Ok(worst)
}
