//! Up-looking sparse LDLᵀ factorization for quasi-definite matrices.
//!
//! The input is the upper triangle of a symmetric matrix in CSC form. No
//! pivoting is done, so the matrix must be quasi-definite (or definite) in
//! the given ordering.

use crate::sparse::CscMatrix;

const NONE: usize = usize::MAX;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LdlError {
    #[error("input is not upper triangular (entry ({row}, {col}))")]
    NotUpper { row: usize, col: usize },
    #[error("zero pivot at column {0}")]
    ZeroPivot(usize),
}

/// `A = L D Lᵀ` with unit lower-triangular `L` stored by columns.
#[derive(Debug, Clone)]
pub struct LdlFactor {
    n: usize,
    lp: Vec<usize>,
    li: Vec<usize>,
    lx: Vec<f64>,
    d: Vec<f64>,
    dinv: Vec<f64>,
}

/// Elimination tree and per-column nonzero counts of `L`.
fn etree(a: &CscMatrix) -> Result<(Vec<usize>, Vec<usize>), LdlError> {
    let n = a.ncols;
    let mut work = vec![NONE; n];
    let mut lnz = vec![0usize; n];
    let mut parent = vec![NONE; n];
    for j in 0..n {
        work[j] = j;
        for p in a.colptr[j]..a.colptr[j + 1] {
            let mut i = a.rowind[p];
            if i > j {
                return Err(LdlError::NotUpper { row: i, col: j });
            }
            while work[i] != j {
                if parent[i] == NONE {
                    parent[i] = j;
                }
                lnz[i] += 1;
                work[i] = j;
                i = parent[i];
            }
        }
    }
    Ok((parent, lnz))
}

impl LdlFactor {
    pub fn factor(a: &CscMatrix) -> Result<Self, LdlError> {
        assert_eq!(a.nrows, a.ncols, "LDL of a non-square matrix");
        let n = a.ncols;
        let (parent, lnz) = etree(a)?;
        let mut lp = vec![0usize; n + 1];
        for i in 0..n {
            lp[i + 1] = lp[i] + lnz[i];
        }
        let total = lp[n];
        let mut li = vec![0usize; total];
        let mut lx = vec![0.0; total];
        let mut d = vec![0.0; n];
        let mut dinv = vec![0.0; n];

        let mut used = vec![false; n];
        let mut y_idx = vec![0usize; n];
        let mut elim = vec![0usize; n];
        let mut next_space: Vec<usize> = lp[..n].to_vec();
        let mut y_vals = vec![0.0; n];

        for k in 0..n {
            let mut nnz_y = 0;
            d[k] = 0.0;
            for p in a.colptr[k]..a.colptr[k + 1] {
                let b = a.rowind[p];
                if b == k {
                    d[k] = a.values[p];
                    continue;
                }
                y_vals[b] = a.values[p];
                if used[b] {
                    continue;
                }
                // Walk up the elimination tree to find the pattern of row k.
                used[b] = true;
                elim[0] = b;
                let mut ne = 1;
                let mut next = parent[b];
                while next != NONE && next < k {
                    if used[next] {
                        break;
                    }
                    used[next] = true;
                    elim[ne] = next;
                    ne += 1;
                    next = parent[next];
                }
                while ne > 0 {
                    ne -= 1;
                    y_idx[nnz_y] = elim[ne];
                    nnz_y += 1;
                }
            }
            for i in (0..nnz_y).rev() {
                let c = y_idx[i];
                let slot = next_space[c];
                let yc = y_vals[c];
                for j in lp[c]..slot {
                    y_vals[li[j]] -= lx[j] * yc;
                }
                li[slot] = k;
                lx[slot] = yc * dinv[c];
                d[k] -= yc * lx[slot];
                next_space[c] += 1;
                y_vals[c] = 0.0;
                used[c] = false;
            }
            if d[k] == 0.0 || !d[k].is_finite() {
                return Err(LdlError::ZeroPivot(k));
            }
            dinv[k] = 1.0 / d[k];
        }
        Ok(Self { n, lp, li, lx, d, dinv })
    }

    /// Solves `A x = b` in place.
    pub fn solve_in_place(&self, x: &mut [f64]) {
        assert_eq!(x.len(), self.n);
        for i in 0..self.n {
            let xi = x[i];
            for j in self.lp[i]..self.lp[i + 1] {
                x[self.li[j]] -= self.lx[j] * xi;
            }
        }
        for (xi, di) in x.iter_mut().zip(&self.dinv) {
            *xi *= di;
        }
        for i in (0..self.n).rev() {
            let mut acc = x[i];
            for j in self.lp[i]..self.lp[i + 1] {
                acc -= self.lx[j] * x[self.li[j]];
            }
            x[i] = acc;
        }
    }

    pub fn diag(&self) -> &[f64] {
        &self.d
    }

    pub fn nnz(&self) -> usize {
        self.lx.len()
    }
}
