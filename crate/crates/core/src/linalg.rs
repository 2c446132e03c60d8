//! Compressed sparse row storage and a direct sparse LU solve.
//!
//! Factorizations are delegated to faer's supernodal LU (COLAMD column
//! ordering, partial row pivoting) run sequentially, so repeated solves of the
//! same system are bit-identical.

use std::sync::Arc;

use faer::dyn_stack::{MemBuffer, MemStack};
use faer::linalg::lu::partial_pivoting::factor::PartialPivLuParams;
use faer::Spec;
use faer::sparse::linalg::lu::{self, LuSymbolicParams, NumericLu, SymbolicLu};
use faer::sparse::{SparseColMatRef, SymbolicSparseColMatRef};
use faer::{Conj, MatMut, Par};
use thiserror::Error;

/// Relative pivot threshold below which a factorization is reported singular.
pub const PIVOT_THRESHOLD: f64 = 1e-14;

/// Backward error bound required of every solve.
pub const RESIDUAL_BOUND: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("entry ({row}, {col}) outside a {nrows}x{ncols} matrix")]
    IndexOutOfRange {
        row: usize,
        col: usize,
        nrows: usize,
        ncols: usize,
    },
    #[error("matrix must be square, got {nrows}x{ncols}")]
    NotSquare { nrows: usize, ncols: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("matrix is numerically singular at pivot {pivot}")]
    Singular { pivot: usize },
    #[error("factorization failed: {0}")]
    Factorization(String),
}

/// Row-compressed sparsity structure: sorted, duplicate-free columns per row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pattern {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
}

impl Pattern {
    /// Builds a pattern from per-row column lists (unsorted, duplicates allowed).
    pub fn from_rows(ncols: usize, rows: Vec<Vec<usize>>) -> Self {
        let nrows = rows.len();
        let mut row_ptr = Vec::with_capacity(nrows + 1);
        let mut col_idx = Vec::new();
        row_ptr.push(0);
        for mut r in rows {
            r.sort_unstable();
            r.dedup();
            debug_assert!(r.last().is_none_or(|&c| c < ncols));
            col_idx.extend_from_slice(&r);
            row_ptr.push(col_idx.len());
        }
        Self {
            nrows,
            ncols,
            row_ptr,
            col_idx,
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn row(&self, r: usize) -> &[usize] {
        &self.col_idx[self.row_ptr[r]..self.row_ptr[r + 1]]
    }

    /// Storage position of `(row, col)`, if structurally present.
    pub fn position(&self, row: usize, col: usize) -> Option<usize> {
        let start = self.row_ptr[row];
        self.row(row).binary_search(&col).ok().map(|k| start + k)
    }
}

/// Real sparse matrix in CSR form. Matrices built on the same `Arc<Pattern>`
/// can be combined entrywise without index lookups.
#[derive(Debug, Clone)]
pub struct SparseMatrix {
    pattern: Arc<Pattern>,
    values: Vec<f64>,
}

impl PartialEq for SparseMatrix {
    fn eq(&self, other: &Self) -> bool {
        *self.pattern == *other.pattern && self.values == other.values
    }
}

impl SparseMatrix {
    /// Square matrix from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(dim: usize, entries: &[(usize, usize, f64)]) -> Result<Self, LinalgError> {
        Self::from_triplets_rect(dim, dim, entries)
    }

    pub fn from_triplets_rect(
        nrows: usize,
        ncols: usize,
        entries: &[(usize, usize, f64)],
    ) -> Result<Self, LinalgError> {
        let mut counts = vec![0usize; nrows + 1];
        for &(r, c, _) in entries {
            if r >= nrows || c >= ncols {
                return Err(LinalgError::IndexOutOfRange {
                    row: r,
                    col: c,
                    nrows,
                    ncols,
                });
            }
            counts[r + 1] += 1;
        }
        for r in 0..nrows {
            counts[r + 1] += counts[r];
        }
        // bucket by row, keeping insertion order so sums are reproducible
        let mut next = counts.clone();
        let mut bucket = vec![(0usize, 0.0f64); entries.len()];
        for &(r, c, v) in entries {
            bucket[next[r]] = (c, v);
            next[r] += 1;
        }
        let mut row_ptr = Vec::with_capacity(nrows + 1);
        let mut col_idx = Vec::with_capacity(entries.len());
        let mut values = Vec::with_capacity(entries.len());
        row_ptr.push(0);
        for r in 0..nrows {
            let row = &mut bucket[counts[r]..counts[r + 1]];
            row.sort_by_key(|&(c, _)| c);
            for &(c, v) in row.iter() {
                if col_idx.len() > row_ptr[r] && *col_idx.last().unwrap() == c {
                    *values.last_mut().unwrap() += v;
                } else {
                    col_idx.push(c);
                    values.push(v);
                }
            }
            row_ptr.push(col_idx.len());
        }
        Ok(Self {
            pattern: Arc::new(Pattern {
                nrows,
                ncols,
                row_ptr,
                col_idx,
            }),
            values,
        })
    }

    pub fn zeros(pattern: Arc<Pattern>) -> Self {
        let values = vec![0.0; pattern.nnz()];
        Self { pattern, values }
    }

    pub fn from_parts(pattern: Arc<Pattern>, values: Vec<f64>) -> Result<Self, LinalgError> {
        if values.len() != pattern.nnz() {
            return Err(LinalgError::DimensionMismatch {
                expected: pattern.nnz(),
                got: values.len(),
            });
        }
        Ok(Self { pattern, values })
    }

    pub fn identity(dim: usize) -> Self {
        let entries: Vec<_> = (0..dim).map(|i| (i, i, 1.0)).collect();
        Self::from_triplets(dim, &entries).expect("in range")
    }

    pub fn pattern(&self) -> &Arc<Pattern> {
        &self.pattern
    }

    pub fn nrows(&self) -> usize {
        self.pattern.nrows
    }

    pub fn ncols(&self) -> usize {
        self.pattern.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.pattern.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.pattern.col_idx
    }

    /// Entries of row `r` as `(column, value)` pairs.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.pattern.row_ptr[r]..self.pattern.row_ptr[r + 1];
        self.pattern.col_idx[range.clone()]
            .iter()
            .copied()
            .zip(self.values[range].iter().copied())
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pattern.position(row, col).map_or(0.0, |k| self.values[k])
    }

    /// `self += other` for matrices sharing a pattern.
    pub fn add_assign(&mut self, other: &SparseMatrix) -> Result<(), LinalgError> {
        if !Arc::ptr_eq(&self.pattern, &other.pattern) && *self.pattern != *other.pattern {
            return Err(LinalgError::DimensionMismatch {
                expected: self.nnz(),
                got: other.nnz(),
            });
        }
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale(&mut self, s: f64) {
        self.values.iter_mut().for_each(|v| *v *= s);
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.ncols());
        (0..self.nrows())
            .map(|r| self.row(r).map(|(c, v)| v * x[c]).sum())
            .collect()
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.ncols()]; self.nrows()];
        for (r, row) in d.iter_mut().enumerate() {
            for (c, v) in self.row(r) {
                row[c] += v;
            }
        }
        d
    }

    pub fn transpose(&self) -> SparseMatrix {
        let mut entries = Vec::with_capacity(self.nnz());
        for r in 0..self.nrows() {
            entries.extend(self.row(r).map(|(c, v)| (c, r, v)));
        }
        Self::from_triplets_rect(self.ncols(), self.nrows(), &entries).expect("in range")
    }

    /// Largest absolute row sum.
    pub fn norm_inf(&self) -> f64 {
        (0..self.nrows())
            .map(|r| self.row(r).map(|(_, v)| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Column-compressed copy of a CSR pattern together with the permutation that
/// gathers CSR values into CSC order.
#[derive(Debug)]
struct CscLayout {
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    gather: Vec<usize>,
}

impl CscLayout {
    fn new(p: &Pattern) -> Self {
        let mut col_ptr = vec![0usize; p.ncols + 1];
        for &c in &p.col_idx {
            col_ptr[c + 1] += 1;
        }
        for c in 0..p.ncols {
            col_ptr[c + 1] += col_ptr[c];
        }
        let mut next = col_ptr.clone();
        let mut row_idx = vec![0; p.nnz()];
        let mut gather = vec![0; p.nnz()];
        for r in 0..p.nrows {
            for k in p.row_ptr[r]..p.row_ptr[r + 1] {
                let c = p.col_idx[k];
                row_idx[next[c]] = r;
                gather[next[c]] = k;
                next[c] += 1;
            }
        }
        Self {
            col_ptr,
            row_idx,
            gather,
        }
    }
}

/// Symbolic analysis of one sparsity pattern, reusable for every matrix that
/// shares it.
pub struct SymbolicFactorization {
    pattern: Arc<Pattern>,
    layout: CscLayout,
    symbolic: SymbolicLu<usize>,
}

impl std::fmt::Debug for SymbolicFactorization {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SymbolicFactorization")
            .field("dim", &self.pattern.nrows)
            .field("nnz", &self.pattern.nnz())
            .finish()
    }
}

impl SymbolicFactorization {
    pub fn new(pattern: Arc<Pattern>) -> Result<Self, LinalgError> {
        if pattern.nrows != pattern.ncols {
            return Err(LinalgError::NotSquare {
                nrows: pattern.nrows,
                ncols: pattern.ncols,
            });
        }
        let layout = CscLayout::new(&pattern);
        let n = pattern.nrows;
        let sym = SymbolicSparseColMatRef::new_checked(n, n, &layout.col_ptr, None, &layout.row_idx);
        let symbolic = lu::factorize_symbolic_lu(sym, LuSymbolicParams::default())
            .map_err(|e| LinalgError::Factorization(format!("{e:?}")))?;
        Ok(Self {
            pattern,
            layout,
            symbolic,
        })
    }

    pub fn matches(&self, m: &SparseMatrix) -> bool {
        Arc::ptr_eq(&self.pattern, &m.pattern) || *self.pattern == *m.pattern
    }
}

/// Numeric LU factors of one matrix.
pub struct Factorization {
    symbolic: Arc<SymbolicFactorization>,
    numeric: NumericLu<usize, f64>,
    matrix: SparseMatrix,
    norm_inf: f64,
}

impl std::fmt::Debug for Factorization {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Factorization")
            .field("dim", &self.matrix.nrows())
            .finish()
    }
}

impl Factorization {
    pub fn new(matrix: &SparseMatrix) -> Result<Self, LinalgError> {
        let symbolic = Arc::new(SymbolicFactorization::new(matrix.pattern.clone())?);
        Self::with_symbolic(symbolic, matrix)
    }

    /// Numeric factorization reusing a symbolic analysis of the same pattern.
    pub fn with_symbolic(
        symbolic: Arc<SymbolicFactorization>,
        matrix: &SparseMatrix,
    ) -> Result<Self, LinalgError> {
        if !symbolic.matches(matrix) {
            return Err(LinalgError::Factorization(
                "matrix pattern differs from the symbolic analysis".into(),
            ));
        }
        let n = matrix.nrows();
        check_column_pivots(matrix)?;
        let csc_values: Vec<f64> = symbolic
            .layout
            .gather
            .iter()
            .map(|&k| matrix.values[k])
            .collect();
        let sym = SymbolicSparseColMatRef::new_checked(
            n,
            n,
            &symbolic.layout.col_ptr,
            None,
            &symbolic.layout.row_idx,
        );
        let a = SparseColMatRef::new(sym, &csc_values);
        let par = Par::Seq;
        let params: Spec<PartialPivLuParams, f64> = Default::default();
        let mut numeric = NumericLu::new();
        let mut buf = MemBuffer::try_new(symbolic.symbolic.factorize_numeric_lu_scratch::<f64>(par, params))
            .map_err(|e| LinalgError::Factorization(format!("{e:?}")))?;
        symbolic
            .symbolic
            .factorize_numeric_lu(&mut numeric, a, par, MemStack::new(&mut buf), params)
            .map_err(|e| match e {
                faer::sparse::linalg::LuError::SymbolicSingular { index } => {
                    LinalgError::Singular { pivot: index }
                }
                other => LinalgError::Factorization(format!("{other:?}")),
            })?;
        Ok(Self {
            symbolic,
            numeric,
            norm_inf: matrix.norm_inf(),
            matrix: matrix.clone(),
        })
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// Solves `A x = b`, verifying the backward error bound
    /// `‖Ax − b‖∞ ≤ 1e-9 (‖A‖∞ ‖x‖∞ + ‖b‖∞)`.
    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>, LinalgError> {
        let n = self.dim();
        if rhs.len() != n {
            return Err(LinalgError::DimensionMismatch {
                expected: n,
                got: rhs.len(),
            });
        }
        let mut x = rhs.to_vec();
        let par = Par::Seq;
        let lu_ref = lu::LuRef::new_unchecked(&self.symbolic.symbolic, &self.numeric);
        let mut buf = MemBuffer::new(self.symbolic.symbolic.solve_in_place_scratch::<f64>(1, par));
        lu_ref.solve_in_place_with_conj(
            Conj::No,
            MatMut::from_column_major_slice_mut(&mut x, n, 1),
            par,
            MemStack::new(&mut buf),
        );
        if let Some(i) = x.iter().position(|v| !v.is_finite()) {
            return Err(LinalgError::Singular { pivot: i });
        }
        let ax = self.matrix.mul_vec(&x);
        let (worst, resid) = ax
            .iter()
            .zip(rhs)
            .map(|(a, b)| (a - b).abs())
            .enumerate()
            .fold((0, 0.0), |acc, (i, r)| if r > acc.1 { (i, r) } else { acc });
        let x_inf = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let b_inf = rhs.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if resid > RESIDUAL_BOUND * (self.norm_inf * x_inf + b_inf) {
            return Err(LinalgError::Singular { pivot: worst });
        }
        Ok(x)
    }
}

/// Rejects matrices with a column whose largest entry is below the pivot
/// threshold relative to the largest entry of the matrix.
fn check_column_pivots(m: &SparseMatrix) -> Result<(), LinalgError> {
    let scale = m.max_abs();
    if scale == 0.0 {
        return Err(LinalgError::Singular { pivot: 0 });
    }
    let mut col_max = vec![0.0f64; m.ncols()];
    for (&c, &v) in m.col_idx().iter().zip(m.values()) {
        col_max[c] = col_max[c].max(v.abs());
    }
    match col_max.iter().position(|&v| v <= PIVOT_THRESHOLD * scale) {
        Some(pivot) => Err(LinalgError::Singular { pivot }),
        None => Ok(()),
    }
}

/// Factor-and-solve in one call.
pub fn lu_solve(matrix: &SparseMatrix, rhs: &[f64]) -> Result<Vec<f64>, LinalgError> {
    if matrix.nrows() != matrix.ncols() {
        return Err(LinalgError::NotSquare {
            nrows: matrix.nrows(),
            ncols: matrix.ncols(),
        });
    }
    Factorization::new(matrix)?.solve(rhs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn duplicates_are_summed() {
        let m = SparseMatrix::from_triplets(2, &[(0, 0, 1.0), (0, 0, 2.0)]).unwrap();
        assert_eq!(m.nnz(), 1);
        assert_eq!(m.get(0, 0), 3.0);
    }

    #[test]
    fn empty_is_zero() {
        let m = SparseMatrix::from_triplets(3, &[]).unwrap();
        assert_eq!(m.nnz(), 0);
        assert_eq!(m.row_ptr(), &[0, 0, 0, 0]);
        assert_eq!(m.mul_vec(&[1.0, 2.0, 3.0]), vec![0.0; 3]);
    }

    #[test]
    fn out_of_range_rejected() {
        let err = SparseMatrix::from_triplets(2, &[(2, 0, 1.0)]).unwrap_err();
        assert!(matches!(err, LinalgError::IndexOutOfRange { row: 2, .. }));
    }

    #[test]
    fn random_triplets_match_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let entries: Vec<_> = (0..600)
            .map(|_| (rng.gen_range(0..50), rng.gen_range(0..50), rng.gen_range(-1.0..1.0)))
            .collect();
        let m = SparseMatrix::from_triplets(50, &entries).unwrap();
        let mut dense = vec![vec![0.0; 50]; 50];
        for &(r, c, v) in &entries {
            dense[r][c] += v;
        }
        assert_eq!(m.to_dense(), dense);
        for r in 0..50 {
            let cols: Vec<_> = m.row(r).map(|(c, _)| c).collect();
            assert!(cols.windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn identity_solve_is_exact() {
        let m = SparseMatrix::identity(5);
        let b = [1.5, -2.0, 3.25, 0.0, 7.0];
        assert_eq!(lu_solve(&m, &b).unwrap(), b.to_vec());
    }

    #[test]
    fn two_by_two() {
        let m = SparseMatrix::from_triplets(2, &[(0, 0, 2.0), (0, 1, 1.0), (1, 0, 1.0), (1, 1, 2.0)]).unwrap();
        let x = lu_solve(&m, &[3.0, 3.0]).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-15 && (x[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn zero_diagonal_needs_pivoting() {
        // saddle-point shaped: [[0, 1], [1, 0]]
        let m = SparseMatrix::from_triplets(2, &[(0, 1, 1.0), (1, 0, 1.0), (0, 0, 0.0)]).unwrap();
        assert_eq!(lu_solve(&m, &[2.0, 5.0]).unwrap(), vec![5.0, 2.0]);
    }

    #[test]
    fn singular_is_reported() {
        let m = SparseMatrix::from_triplets(3, &[(0, 0, 1.0), (1, 1, 1.0), (2, 1, 1.0), (1, 2, 0.0)]).unwrap();
        let err = lu_solve(&m, &[1.0, 1.0, 1.0]).unwrap_err();
        assert_eq!(err, LinalgError::Singular { pivot: 2 });

        let rank_one = SparseMatrix::from_triplets(2, &[(0, 0, 1.0), (0, 1, 1.0), (1, 0, 1.0), (1, 1, 1.0)]).unwrap();
        assert!(matches!(lu_solve(&rank_one, &[1.0, 2.0]), Err(LinalgError::Singular { .. })));
    }

    #[test]
    fn factor_reuse_is_bitwise_stable() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 40;
        let mut entries: Vec<_> = (0..n).map(|i| (i, i, 4.0 + rng.gen::<f64>())).collect();
        for _ in 0..150 {
            entries.push((rng.gen_range(0..n), rng.gen_range(0..n), rng.gen_range(-1.0..1.0)));
        }
        let m = SparseMatrix::from_triplets(n, &entries).unwrap();
        let b1: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let b2: Vec<f64> = (0..n).map(|i| (i as f64).cos()).collect();
        let f = Factorization::new(&m).unwrap();
        let x1 = f.solve(&b1).unwrap();
        let x2 = f.solve(&b2).unwrap();
        assert_eq!(x1, lu_solve(&m, &b1).unwrap());
        assert_eq!(x2, lu_solve(&m, &b2).unwrap());
        assert_eq!(x1, f.solve(&b1).unwrap());
    }

    proptest! {
        #[test]
        fn diagonally_dominant_solves_to_residual(seed in 0u64..1000, n in 2usize..30) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut entries = Vec::new();
            for i in 0..n {
                entries.push((i, i, 2.0 * n as f64));
                for _ in 0..3 {
                    entries.push((i, rng.gen_range(0..n), rng.gen_range(-1.0..1.0)));
                }
            }
            let m = SparseMatrix::from_triplets(n, &entries).unwrap();
            let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let x = lu_solve(&m, &b).unwrap();
            let r = m.mul_vec(&x);
            let resid = r.iter().zip(&b).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            prop_assert!(resid <= 1e-12 * (m.norm_inf() + 1.0));
        }
    }
}
