//! Compressed-sparse-column matrices and an up-looking sparse Cholesky
//! factorization with a reusable symbolic phase.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CscMatrix {
    nrows: usize,
    ncols: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CscMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            col_ptr: vec![0; ncols + 1],
            row_idx: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Assembles from `(row, col, value)` triplets. Duplicates are summed and
    /// explicit zeros are kept, so the pattern depends only on the triplet
    /// positions.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut order: Vec<usize> = (0..triplets.len()).collect();
        order.sort_by_key(|&t| (triplets[t].1, triplets[t].0));
        let mut col_ptr = vec![0; ncols + 1];
        let mut row_idx = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for t in order {
            let (r, c, v) = triplets[t];
            assert!(r < nrows && c < ncols, "triplet ({r}, {c}) out of bounds");
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                row_idx.push(r);
                values.push(v);
                col_ptr[c + 1] += 1;
                last = Some((r, c));
            }
        }
        for c in 0..ncols {
            col_ptr[c + 1] += col_ptr[c];
        }
        Self {
            nrows,
            ncols,
            col_ptr,
            row_idx,
            values,
        }
    }

    pub fn from_dense(m: &DMatrix<f64>) -> Self {
        let mut t = Vec::new();
        for c in 0..m.ncols() {
            for r in 0..m.nrows() {
                if m[(r, c)] != 0.0 {
                    t.push((r, c, m[(r, c)]));
                }
            }
        }
        Self::from_triplets(m.nrows(), m.ncols(), &t)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.nrows, self.ncols);
        for (r, c, v) in self.iter() {
            m[(r, c)] += v;
        }
        m
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn col_ptr(&self) -> &[usize] {
        &self.col_ptr
    }

    pub fn row_idx(&self) -> &[usize] {
        &self.row_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.ncols).flat_map(move |c| {
            (self.col_ptr[c]..self.col_ptr[c + 1]).map(move |p| (self.row_idx[p], c, self.values[p]))
        })
    }

    pub fn same_pattern(&self, other: &Self) -> bool {
        self.nrows == other.nrows
            && self.ncols == other.ncols
            && self.col_ptr == other.col_ptr
            && self.row_idx == other.row_idx
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// `y = A x`.
    pub fn mul_vec(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.ncols);
        debug_assert_eq!(y.len(), self.nrows);
        y.iter_mut().for_each(|v| *v = 0.0);
        for c in 0..self.ncols {
            let xc = x[c];
            if xc == 0.0 {
                continue;
            }
            for p in self.col_ptr[c]..self.col_ptr[c + 1] {
                y[self.row_idx[p]] += self.values[p] * xc;
            }
        }
    }

    /// `y = A^T x`.
    pub fn tr_mul_vec(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.nrows);
        debug_assert_eq!(y.len(), self.ncols);
        for c in 0..self.ncols {
            let mut acc = 0.0;
            for p in self.col_ptr[c]..self.col_ptr[c + 1] {
                acc += self.values[p] * x[self.row_idx[p]];
            }
            y[c] = acc;
        }
    }

    pub fn transpose(&self) -> Self {
        let t: Vec<_> = self.iter().map(|(r, c, v)| (c, r, v)).collect();
        Self::from_triplets(self.ncols, self.nrows, &t)
    }

    /// Replaces `A` by `diag(left) A diag(right)`.
    pub fn scale(&mut self, left: &[f64], right: &[f64]) {
        for c in 0..self.ncols {
            for p in self.col_ptr[c]..self.col_ptr[c + 1] {
                self.values[p] *= left[self.row_idx[p]] * right[c];
            }
        }
    }

    pub fn scale_values(&mut self, k: f64) {
        self.values.iter_mut().for_each(|v| *v *= k);
    }

    pub fn col_inf_norms(&self) -> Vec<f64> {
        (0..self.ncols)
            .map(|c| {
                self.values[self.col_ptr[c]..self.col_ptr[c + 1]]
                    .iter()
                    .fold(0.0_f64, |m, v| m.max(v.abs()))
            })
            .collect()
    }

    pub fn row_inf_norms(&self) -> Vec<f64> {
        let mut out = vec![0.0_f64; self.nrows];
        for (r, _, v) in self.iter() {
            out[r] = out[r].max(v.abs());
        }
        out
    }
}

/// Sparse `L L^T` factorization of a symmetric positive definite matrix given
/// by its upper triangle in CSC form.
#[derive(Debug, Clone)]
pub struct SparseCholesky {
    n: usize,
    parent: Vec<usize>,
    pattern_ptr: Vec<usize>,
    pattern_idx: Vec<usize>,
    l_ptr: Vec<usize>,
    l_idx: Vec<usize>,
    l_val: Vec<f64>,
}

const NONE: usize = usize::MAX;

impl SparseCholesky {
    /// Symbolic analysis followed by numeric factorization.
    pub fn factor(upper: &CscMatrix) -> Result<Self> {
        assert_eq!(upper.nrows(), upper.ncols(), "Cholesky needs a square matrix");
        let n = upper.ncols();
        let parent = elimination_tree(upper);

        // column counts of L from the row patterns
        let mut counts = vec![1usize; n];
        let mut stack = vec![0usize; n];
        let mut flag = vec![NONE; n];
        for k in 0..n {
            let top = ereach(upper, k, &parent, &mut stack, &mut flag);
            for &j in &stack[top..] {
                counts[j] += 1;
            }
        }
        let mut l_ptr = vec![0usize; n + 1];
        for k in 0..n {
            l_ptr[k + 1] = l_ptr[k] + counts[k];
        }
        let nnz = l_ptr[n];
        let mut chol = Self {
            n,
            parent,
            pattern_ptr: upper.col_ptr().to_vec(),
            pattern_idx: upper.row_idx().to_vec(),
            l_ptr,
            l_idx: vec![0; nnz],
            l_val: vec![0.0; nnz],
        };
        chol.numeric(upper)?;
        Ok(chol)
    }

    /// Numeric refactorization, reusing the symbolic analysis when the
    /// pattern is unchanged.
    pub fn refactor(&mut self, upper: &CscMatrix) -> Result<()> {
        if upper.ncols() == self.n
            && upper.col_ptr() == self.pattern_ptr.as_slice()
            && upper.row_idx() == self.pattern_idx.as_slice()
        {
            self.numeric(upper)
        } else {
            *self = Self::factor(upper)?;
            Ok(())
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn factor_nnz(&self) -> usize {
        self.l_val.len()
    }

    fn numeric(&mut self, upper: &CscMatrix) -> Result<()> {
        let n = self.n;
        let mut next = self.l_ptr[..n].to_vec();
        let mut x = vec![0.0; n];
        let mut stack = vec![0usize; n];
        let mut flag = vec![NONE; n];
        let (ap, ai, ax) = (upper.col_ptr(), upper.row_idx(), upper.values());
        for k in 0..n {
            let top = ereach(upper, k, &self.parent, &mut stack, &mut flag);
            x[k] = 0.0;
            for p in ap[k]..ap[k + 1] {
                if ai[p] <= k {
                    x[ai[p]] += ax[p];
                }
            }
            let mut d = x[k];
            x[k] = 0.0;
            for &j in &stack[top..] {
                let lkj = x[j] / self.l_val[self.l_ptr[j]];
                x[j] = 0.0;
                for p in self.l_ptr[j] + 1..next[j] {
                    x[self.l_idx[p]] -= self.l_val[p] * lkj;
                }
                d -= lkj * lkj;
                let p = next[j];
                next[j] += 1;
                self.l_idx[p] = k;
                self.l_val[p] = lkj;
            }
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::NotPositiveDefinite { pivot: k, value: d });
            }
            let p = next[k];
            next[k] += 1;
            self.l_idx[p] = k;
            self.l_val[p] = d.sqrt();
        }
        Ok(())
    }

    /// Solves `L L^T x = b` in place.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        debug_assert_eq!(b.len(), self.n);
        for j in 0..self.n {
            b[j] /= self.l_val[self.l_ptr[j]];
            let bj = b[j];
            for p in self.l_ptr[j] + 1..self.l_ptr[j + 1] {
                b[self.l_idx[p]] -= self.l_val[p] * bj;
            }
        }
        for j in (0..self.n).rev() {
            let mut acc = b[j];
            for p in self.l_ptr[j] + 1..self.l_ptr[j + 1] {
                acc -= self.l_val[p] * b[self.l_idx[p]];
            }
            b[j] = acc / self.l_val[self.l_ptr[j]];
        }
    }
}

fn elimination_tree(upper: &CscMatrix) -> Vec<usize> {
    let n = upper.ncols();
    let mut parent = vec![NONE; n];
    let mut ancestor = vec![NONE; n];
    let (ap, ai) = (upper.col_ptr(), upper.row_idx());
    for k in 0..n {
        for &row in &ai[ap[k]..ap[k + 1]] {
            let mut i = row;
            while i != NONE && i < k {
                let inext = ancestor[i];
                ancestor[i] = k;
                if inext == NONE {
                    parent[i] = k;
                }
                i = inext;
            }
        }
    }
    parent
}

/// Nonzero pattern of row `k` of `L`, written to `stack[top..]` in
/// topological order. Returns `top`.
fn ereach(
    upper: &CscMatrix,
    k: usize,
    parent: &[usize],
    stack: &mut [usize],
    flag: &mut [usize],
) -> usize {
    let n = upper.ncols();
    let mut top = n;
    flag[k] = k;
    let (ap, ai) = (upper.col_ptr(), upper.row_idx());
    let mut path = Vec::new();
    for &row in &ai[ap[k]..ap[k + 1]] {
        if row >= k {
            continue;
        }
        let mut i = row;
        path.clear();
        while flag[i] != k {
            path.push(i);
            flag[i] = k;
            i = parent[i];
        }
        while let Some(j) = path.pop() {
            top -= 1;
            stack[top] = j;
        }
    }
    top
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;
    use proptest::prelude::*;

    fn upper_of(m: &DMatrix<f64>) -> CscMatrix {
        let mut t = Vec::new();
        for c in 0..m.ncols() {
            for r in 0..=c {
                if m[(r, c)] != 0.0 || r == c {
                    t.push((r, c, m[(r, c)]));
                }
            }
        }
        CscMatrix::from_triplets(m.nrows(), m.ncols(), &t)
    }

    #[test]
    fn triplets_sum_duplicates_and_keep_zeros() {
        let m = CscMatrix::from_triplets(2, 3, &[(1, 2, 1.0), (0, 0, 2.0), (1, 2, 3.0), (0, 1, 0.0)]);
        assert_eq!(m.nnz(), 3);
        assert_eq!(m.to_dense(), DMatrix::from_row_slice(2, 3, &[2.0, 0.0, 0.0, 0.0, 0.0, 4.0]));
        let x = [1.0, 2.0, 3.0];
        let mut y = [0.0; 2];
        m.mul_vec(&x, &mut y);
        assert_eq!(y, [2.0, 12.0]);
        let mut z = [0.0; 3];
        m.tr_mul_vec(&[1.0, 1.0], &mut z);
        assert_eq!(z, [2.0, 0.0, 4.0]);
        assert_eq!(m.transpose().to_dense(), m.to_dense().transpose());
    }

    #[test]
    fn rejects_indefinite() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(
            SparseCholesky::factor(&upper_of(&m)),
            Err(Error::NotPositiveDefinite { pivot: 1, .. })
        ));
    }

    #[test]
    fn tridiagonal_solve() {
        let n = 6;
        let m = DMatrix::from_fn(n, n, |i, j| match i.abs_diff(j) {
            0 => 4.0,
            1 => -1.0,
            _ => 0.0,
        });
        let chol = SparseCholesky::factor(&upper_of(&m)).unwrap();
        assert_eq!(chol.factor_nnz(), 2 * n - 1);
        let b = DVector::from_fn(n, |i, _| i as f64 - 2.0);
        let mut x = b.as_slice().to_vec();
        chol.solve_in_place(&mut x);
        assert!((&m * DVector::from_vec(x) - b).amax() < 1e-12);
    }

    proptest! {
        #[test]
        fn matches_dense_solve(
            n in 2usize..12,
            entries in proptest::collection::vec((0usize..12, 0usize..12, -1.0f64..1.0), 0..30),
            rhs in proptest::collection::vec(-5.0f64..5.0, 12),
        ) {
            let mut m = DMatrix::<f64>::identity(n, n) * 0.5;
            for (i, j, v) in entries {
                let (i, j) = (i % n, j % n);
                let e = DMatrix::from_fn(n, 1, |r, _| if r == i { v } else if r == j { 1.0 } else { 0.0 });
                m += &e * e.transpose();
            }
            let upper = upper_of(&m);
            let mut chol = SparseCholesky::factor(&upper).unwrap();
            let b = DVector::from_column_slice(&rhs[..n]);
            let mut x = b.as_slice().to_vec();
            chol.solve_in_place(&mut x);
            let want = m.clone().cholesky().unwrap().solve(&b);
            for k in 0..n {
                prop_assert!((x[k] - want[k]).abs() < 1e-9 * (1.0 + want[k].abs()));
            }
            // same pattern, different values
            let m2 = &m + DMatrix::<f64>::identity(n, n);
            let mut upper2 = upper_of(&m2);
            if !upper2.same_pattern(&upper) {
                upper2 = upper.clone();
                for (p, (r, c, _)) in upper.iter().enumerate() {
                    upper2.values[p] = m2[(r, c)];
                }
            }
            chol.refactor(&upper2).unwrap();
            let mut x2 = b.as_slice().to_vec();
            chol.solve_in_place(&mut x2);
            let want2 = m2.cholesky().unwrap().solve(&b);
            for k in 0..n {
                prop_assert!((x2[k] - want2[k]).abs() < 1e-9 * (1.0 + want2[k].abs()));
            }
        }
    }
}
