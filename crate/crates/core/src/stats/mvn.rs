//! Dense Cholesky factorization and correlated normal sampling.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{RngStream, StatsError};

/// Row-major square matrix, just enough for the small correlation matrices
/// that appear here (dimension k - 1).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SquareMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl SquareMatrix {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            data: vec![0.0; dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, StatsError> {
        let dim = rows.len();
        if rows.iter().any(|r| r.len() != dim) {
            return Err(StatsError::Shape("matrix rows must all have length equal to the row count".into()));
        }
        Ok(Self {
            dim,
            data: rows.iter().flatten().copied().collect(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.dim.max(1)).map(|r| r.to_vec()).collect()
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        (0..self.dim).all(|i| (0..i).all(|j| (self[(i, j)] - self[(j, i)]).abs() <= tol))
    }

    /// `self · selfᵀ`.
    pub fn times_transpose(&self) -> Self {
        let n = self.dim;
        let mut out = Self::zeros(n);
        for i in 0..n {
            for j in 0..n {
                out[(i, j)] = (0..n).map(|k| self[(i, k)] * self[(j, k)]).sum();
            }
        }
        out
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl std::ops::Index<(usize, usize)> for SquareMatrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.dim + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for SquareMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.dim + j]
    }
}

/// Lower-triangular `L` with `L Lᵀ = matrix`.
///
/// Fails with [`StatsError::NotPositiveDefinite`] at the first non-positive
/// pivot; callers that can tolerate it go through [`factor_with_repair`].
pub fn cholesky(matrix: &SquareMatrix) -> Result<SquareMatrix, StatsError> {
    if !matrix.is_symmetric(1e-12 * (1.0 + matrix.data.iter().fold(0.0f64, |m, v| m.max(v.abs())))) {
        return Err(StatsError::Shape("cholesky input is not symmetric".into()));
    }
    let n = matrix.dim;
    let mut l = SquareMatrix::zeros(n);
    for j in 0..n {
        let mut diag = matrix[(j, j)];
        for k in 0..j {
            diag -= l[(j, k)] * l[(j, k)];
        }
        if !(diag > 0.0) || !diag.is_finite() {
            return Err(StatsError::NotPositiveDefinite { pivot: j });
        }
        let d = diag.sqrt();
        l[(j, j)] = d;
        for i in (j + 1)..n {
            let mut s = matrix[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / d;
        }
    }
    Ok(l)
}

/// Cholesky with diagonal jitter: tries the matrix as given, then adds
/// `1e-10·I`, escalating ×10 up to three times. Returns the factor and the
/// jitter that was finally used.
pub fn factor_with_repair(matrix: &SquareMatrix) -> Result<(SquareMatrix, f64), StatsError> {
    match cholesky(matrix) {
        Ok(l) => return Ok((l, 0.0)),
        Err(StatsError::NotPositiveDefinite { .. }) => {}
        Err(e) => return Err(e),
    }
    let mut jitter = 1e-10;
    let mut last = StatsError::NotPositiveDefinite { pivot: 0 };
    for _ in 0..=3 {
        let mut m = matrix.clone();
        for i in 0..m.dim {
            m[(i, i)] += jitter;
        }
        match cholesky(&m) {
            Ok(l) => return Ok((l, jitter)),
            Err(e) => last = e,
        }
        jitter *= 10.0;
    }
    Err(last)
}

/// Symmetric matrix with unit diagonal and entries in [-1, 1].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    matrix: SquareMatrix,
}

impl CorrelationMatrix {
    pub fn new(matrix: SquareMatrix) -> Result<Self, StatsError> {
        const TOL: f64 = 1e-12;
        if !matrix.is_symmetric(TOL) {
            return Err(StatsError::Shape("correlation matrix must be symmetric".into()));
        }
        for i in 0..matrix.dim {
            if (matrix[(i, i)] - 1.0).abs() > TOL {
                return Err(StatsError::Shape(format!("correlation diagonal entry {i} is not 1")));
            }
            for j in 0..matrix.dim {
                let v = matrix[(i, j)];
                if !v.is_finite() || v.abs() > 1.0 + TOL {
                    return Err(StatsError::Shape(format!("correlation entry ({i},{j}) = {v} outside [-1, 1]")));
                }
            }
        }
        Ok(Self { matrix })
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            matrix: SquareMatrix::identity(dim),
        }
    }

    /// Equicorrelation matrix with the given off-diagonal value.
    pub fn constant(dim: usize, rho: f64) -> Result<Self, StatsError> {
        let mut m = SquareMatrix::identity(dim);
        for i in 0..dim {
            for j in 0..dim {
                if i != j {
                    m[(i, j)] = rho;
                }
            }
        }
        Self::new(m)
    }

    pub fn dim(&self) -> usize {
        self.matrix.dim
    }

    pub fn matrix(&self) -> &SquareMatrix {
        &self.matrix
    }
}

/// `count` i.i.d. draws from `N(0, corr)`, stored row-major.
#[derive(Clone, Debug)]
pub struct NormalSamples {
    dim: usize,
    data: Vec<f64>,
    jitter: f64,
}

impl NormalSamples {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.data.len() / self.dim
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Diagonal jitter that was needed to factor the correlation matrix.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.dim.max(1))
    }

    pub fn column(&self, c: usize) -> impl Iterator<Item = f64> + '_ {
        self.rows().map(move |r| r[c])
    }
}

pub fn sample_mvn(corr: &CorrelationMatrix, count: usize, rng: &mut RngStream) -> Result<NormalSamples, StatsError> {
    let (l, jitter) = factor_with_repair(corr.matrix())?;
    let d = corr.dim();
    let mut data = vec![0.0; count * d];
    let mut z = vec![0.0; d];
    for row in data.chunks_exact_mut(d.max(1)).take(count) {
        for zi in z.iter_mut() {
            *zi = StandardNormal.sample(rng);
        }
        for (i, out) in row.iter_mut().enumerate() {
            let mut s = 0.0;
            for (k, zk) in z.iter().enumerate().take(i + 1) {
                s += l[(i, k)] * zk;
            }
            *out = s;
        }
    }
    Ok(NormalSamples { dim: d, data, jitter })
}
