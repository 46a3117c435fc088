//! Symmetric sparse matrices and their factorizations.

use std::sync::Once;

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::{Llt, Lu};
use faer::sparse::{SparseColMat, Triplet};
use faer::{Mat, Par, Side};

use crate::error::{Error, Result};

static SEQUENTIAL: Once = Once::new();

/// Factorizations run single-threaded so results are bit-identical across
/// runs and thread counts.
fn force_sequential() {
    SEQUENTIAL.call_once(|| faer::set_global_parallelism(Par::Seq));
}

/// Square sparse matrix in compressed-column storage.
#[derive(Debug, Clone)]
pub struct CscMatrix {
    inner: SparseColMat<usize, f64>,
}

impl CscMatrix {
    /// Duplicate entries are summed.
    pub fn from_triplets(n: usize, entries: &[(usize, usize, f64)]) -> Result<Self> {
        let trips: Vec<Triplet<usize, usize, f64>> = entries
            .iter()
            .map(|&(i, j, v)| Triplet::new(i, j, v))
            .collect();
        let inner = SparseColMat::try_new_from_triplets(n, n, &trips)
            .map_err(|e| Error::InvalidInput(format!("sparse matrix assembly: {e:?}")))?;
        Ok(Self { inner })
    }

    pub fn diagonal_matrix(diag: &[f64]) -> Self {
        let entries: Vec<(usize, usize, f64)> =
            diag.iter().enumerate().map(|(i, &d)| (i, i, d)).collect();
        Self::from_triplets(diag.len(), &entries).expect("diagonal entries are in range")
    }

    pub fn n(&self) -> usize {
        self.inner.nrows()
    }

    pub fn nnz(&self) -> usize {
        self.inner.val().len()
    }

    pub fn as_faer(&self) -> &SparseColMat<usize, f64> {
        &self.inner
    }

    /// Iterates `(row, col, value)` over stored entries, column by column.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        let sym = self.inner.symbolic();
        let col_ptr = sym.col_ptr();
        let row_idx = sym.row_idx();
        let val = self.inner.val();
        (0..self.n()).flat_map(move |j| {
            (col_ptr[j]..col_ptr[j + 1]).map(move |p| (row_idx[p], j, val[p]))
        })
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.inner.get(i, j).copied().unwrap_or(0.0)
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n());
        let mut y = vec![0.0; self.n()];
        for (i, j, v) in self.entries() {
            y[i] += v * x[j];
        }
        y
    }

    /// `x^T A y`.
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        let mut s = 0.0;
        for (i, j, v) in self.entries() {
            s += x[i] * v * y[j];
        }
        s
    }

    pub fn quadratic(&self, x: &[f64]) -> f64 {
        self.bilinear(x, x)
    }

    /// `a A + b B`.
    pub fn combine(a: f64, lhs: &CscMatrix, b: f64, rhs: &CscMatrix) -> Result<CscMatrix> {
        if lhs.n() != rhs.n() {
            return Err(Error::GeometryMismatch);
        }
        let entries: Vec<(usize, usize, f64)> = lhs
            .entries()
            .map(|(i, j, v)| (i, j, a * v))
            .chain(rhs.entries().map(|(i, j, v)| (i, j, b * v)))
            .collect();
        CscMatrix::from_triplets(lhs.n(), &entries)
    }

    /// Largest `|A - A^T|` entry relative to the largest `|A|` entry.
    pub fn asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        let mut scale: f64 = 0.0;
        for (i, j, v) in self.entries() {
            scale = scale.max(v.abs());
            worst = worst.max((v - self.get(j, i)).abs());
        }
        if scale == 0.0 {
            0.0
        } else {
            worst / scale
        }
    }
}

enum Factor {
    Cholesky(Llt<usize, f64>),
    Lu(Lu<usize, f64>),
}

/// Factorized symmetric matrix: Cholesky when positive definite, LU with
/// partial pivoting otherwise.
pub struct SparseSolver {
    factor: Factor,
    n: usize,
}

impl std::fmt::Debug for SparseSolver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let kind = match self.factor {
            Factor::Cholesky(_) => "cholesky",
            Factor::Lu(_) => "lu",
        };
        f.debug_struct("SparseSolver")
            .field("kind", &kind)
            .field("n", &self.n)
            .finish()
    }
}

impl SparseSolver {
    pub fn new(matrix: &CscMatrix) -> Result<Self> {
        force_sequential();
        let n = matrix.n();
        let factor = match matrix.inner.sp_cholesky(Side::Lower) {
            Ok(llt) => Factor::Cholesky(llt),
            Err(_) => Factor::Lu(
                matrix
                    .inner
                    .sp_lu()
                    .map_err(|e| Error::Factorization(format!("{e:?}")))?,
            ),
        };
        let solver = Self { factor, n };
        // LU of a numerically singular matrix succeeds with garbage pivots;
        // reject non-finite solutions up front.
        if n > 0 {
            let probe = solver.solve(&vec![1.0; n]);
            if probe.iter().any(|v| !v.is_finite()) {
                return Err(Error::Factorization("matrix is singular".into()));
            }
        }
        Ok(solver)
    }

    pub fn is_cholesky(&self) -> bool {
        matches!(self.factor, Factor::Cholesky(_))
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        assert_eq!(rhs.len(), self.n);
        let mut b = Mat::from_fn(self.n, 1, |i, _| rhs[i]);
        self.solve_in_place(&mut b);
        (0..self.n).map(|i| b[(i, 0)]).collect()
    }

    /// Solves for every column of `rhs`.
    pub fn solve_in_place(&self, rhs: &mut Mat<f64>) {
        match &self.factor {
            Factor::Cholesky(f) => f.solve_in_place(rhs.as_mut()),
            Factor::Lu(f) => f.solve_in_place(rhs.as_mut()),
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
