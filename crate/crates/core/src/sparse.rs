//! Compressed sparse column matrices.
//!
//! Only what the incidence algebra and the QP solver need: triplet assembly,
//! products with dense vectors, transposition and a few structural helpers.

/// A sparse matrix in compressed sparse column (CSC) form.
///
/// Row indices within each column are sorted and unique.
#[derive(Debug, Clone, PartialEq)]
pub struct CscMatrix {
    pub nrows: usize,
    pub ncols: usize,
    pub colptr: Vec<usize>,
    pub rowind: Vec<usize>,
    pub values: Vec<f64>,
}

impl CscMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            colptr: vec![0; ncols + 1],
            rowind: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::diagonal(&vec![1.0; n])
    }

    pub fn diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        Self {
            nrows: n,
            ncols: n,
            colptr: (0..=n).collect(),
            rowind: (0..n).collect(),
            values: diag.to_vec(),
        }
    }

    /// Builds a matrix from `(row, col, value)` triplets. Duplicate entries
    /// are summed; explicit zeros produced by the summation are kept out.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut sorted: Vec<(usize, usize, f64)> = triplets.to_vec();
        sorted.sort_by_key(|t| (t.1, t.0));

        let mut colptr = vec![0usize; ncols + 1];
        let mut rowind = Vec::with_capacity(sorted.len());
        let mut values: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        for &(r, c, v) in &sorted {
            assert!(r < nrows && c < ncols, "triplet ({r}, {c}) out of bounds");
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                rowind.push(r);
                values.push(v);
                colptr[c + 1] += 1;
                last = Some((r, c));
            }
        }
        for c in 0..ncols {
            colptr[c + 1] += colptr[c];
        }
        let mut m = Self {
            nrows,
            ncols,
            colptr,
            rowind,
            values,
        };
        m.drop_zeros();
        m
    }

    pub fn from_dense(rows: &[Vec<f64>]) -> Self {
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, Vec::len);
        let mut trip = Vec::new();
        for (i, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), ncols, "ragged dense matrix");
            for (j, &v) in row.iter().enumerate() {
                if v != 0.0 {
                    trip.push((i, j, v));
                }
            }
        }
        Self::from_triplets(nrows, ncols, &trip)
    }

    fn drop_zeros(&mut self) {
        let mut write = 0;
        let mut start = 0;
        for c in 0..self.ncols {
            let end = self.colptr[c + 1];
            for k in start..end {
                if self.values[k] != 0.0 {
                    self.rowind[write] = self.rowind[k];
                    self.values[write] = self.values[k];
                    write += 1;
                }
            }
            start = end;
            self.colptr[c + 1] = write;
        }
        self.rowind.truncate(write);
        self.values.truncate(write);
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Iterates the `(row, value)` pairs stored in column `c`.
    pub fn col(&self, c: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.colptr[c]..self.colptr[c + 1];
        self.rowind[range.clone()].iter().copied().zip(self.values[range].iter().copied())
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let range = self.colptr[c]..self.colptr[c + 1];
        match self.rowind[range.clone()].binary_search(&r) {
            Ok(k) => self.values[range.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.ncols).flat_map(move |c| self.col(c).map(move |(r, v)| (r, c, v)))
    }

    /// `y = A x`
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.ncols, "dimension mismatch in A*x");
        let mut y = vec![0.0; self.nrows];
        for (c, &xc) in x.iter().enumerate() {
            if xc == 0.0 {
                continue;
            }
            for (r, v) in self.col(c) {
                y[r] += v * xc;
            }
        }
        y
    }

    /// `y = Aᵀ x`
    pub fn tr_mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.nrows, "dimension mismatch in A'*x");
        (0..self.ncols).map(|c| self.col(c).map(|(r, v)| v * x[r]).sum()).collect()
    }

    pub fn transpose(&self) -> Self {
        let trip: Vec<_> = self.triplets().map(|(r, c, v)| (c, r, v)).collect();
        Self::from_triplets(self.ncols, self.nrows, &trip)
    }

    /// Sparse product `self * other`.
    pub fn mul(&self, other: &CscMatrix) -> Self {
        assert_eq!(self.ncols, other.nrows, "dimension mismatch in A*B");
        let mut trip = Vec::new();
        let mut acc = vec![0.0; self.nrows];
        let mut mark = vec![usize::MAX; self.nrows];
        let mut touched = Vec::new();
        for c in 0..other.ncols {
            touched.clear();
            for (k, bkc) in other.col(c) {
                for (r, a) in self.col(k) {
                    if mark[r] != c {
                        mark[r] = c;
                        acc[r] = 0.0;
                        touched.push(r);
                    }
                    acc[r] += a * bkc;
                }
            }
            for &r in &touched {
                trip.push((r, c, acc[r]));
            }
        }
        Self::from_triplets(self.nrows, other.ncols, &trip)
    }

    /// `alpha * self + beta * other`
    pub fn add_scaled(&self, alpha: f64, other: &CscMatrix, beta: f64) -> Self {
        assert_eq!((self.nrows, self.ncols), (other.nrows, other.ncols));
        let trip: Vec<_> = self
            .triplets()
            .map(|(r, c, v)| (r, c, alpha * v))
            .chain(other.triplets().map(|(r, c, v)| (r, c, beta * v)))
            .collect();
        Self::from_triplets(self.nrows, self.ncols, &trip)
    }

    pub fn scale(&self, alpha: f64) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= alpha);
        out.drop_zeros();
        out
    }

    /// `D_left * self * D_right` for diagonal scalings given as vectors.
    pub fn scale_rows_cols(&mut self, left: &[f64], right: &[f64]) {
        for c in 0..self.ncols {
            for k in self.colptr[c]..self.colptr[c + 1] {
                self.values[k] *= left[self.rowind[k]] * right[c];
            }
        }
    }

    /// Vertical concatenation `[self; other]`.
    pub fn vstack(&self, other: &CscMatrix) -> Self {
        assert_eq!(self.ncols, other.ncols, "vstack column mismatch");
        let trip: Vec<_> = self
            .triplets()
            .chain(other.triplets().map(|(r, c, v)| (r + self.nrows, c, v)))
            .collect();
        Self::from_triplets(self.nrows + other.nrows, self.ncols, &trip)
    }

    /// Upper triangle including the diagonal.
    pub fn upper_triangle(&self) -> Self {
        let trip: Vec<_> = self.triplets().filter(|&(r, c, _)| r <= c).collect();
        Self::from_triplets(self.nrows, self.ncols, &trip)
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        self.nrows == self.ncols && self.triplets().all(|(r, c, v)| (self.get(c, r) - v).abs() <= tol)
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.ncols]; self.nrows];
        for (r, c, v) in self.triplets() {
            d[r][c] = v;
        }
        d
    }

    /// Per-column infinity norms.
    pub fn col_inf_norms(&self) -> Vec<f64> {
        (0..self.ncols)
            .map(|c| self.col(c).fold(0.0_f64, |m, (_, v)| m.max(v.abs())))
            .collect()
    }

    /// Per-row infinity norms.
    pub fn row_inf_norms(&self) -> Vec<f64> {
        let mut out = vec![0.0_f64; self.nrows];
        for (r, _, v) in self.triplets() {
            out[r] = out[r].max(v.abs());
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triplets_sum_duplicates_and_drop_cancellations() {
        let m = CscMatrix::from_triplets(2, 2, &[(0, 0, 1.0), (0, 0, 2.0), (1, 1, 1.0), (1, 1, -1.0)]);
        assert_eq!(m.nnz(), 1);
        assert_eq!(m.get(0, 0), 3.0);
        assert_eq!(m.get(1, 1), 0.0);
    }

    #[test]
    fn products_match_dense() {
        let a = CscMatrix::from_dense(&[vec![1.0, 0.0, 2.0], vec![0.0, 3.0, 0.0]]);
        let b = CscMatrix::from_dense(&[vec![1.0, 1.0], vec![0.0, 2.0], vec![4.0, 0.0]]);
        assert_eq!(a.mul_vec(&[1.0, 2.0, 3.0]), vec![7.0, 6.0]);
        assert_eq!(a.tr_mul_vec(&[1.0, 2.0]), vec![1.0, 6.0, 2.0]);
        assert_eq!(a.mul(&b).to_dense(), vec![vec![9.0, 1.0], vec![0.0, 6.0]]);
        assert_eq!(a.transpose().transpose(), a);
    }

    #[test]
    fn vstack_offsets_rows() {
        let i = CscMatrix::identity(2);
        let s = i.vstack(&i.scale(2.0));
        assert_eq!(s.nrows, 4);
        assert_eq!(s.get(3, 1), 2.0);
    }
}
