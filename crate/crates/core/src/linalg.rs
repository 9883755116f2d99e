//! Dense symmetric matrix kernels: eigendecomposition, spectral matrix
//! functions and jittered positive semi-definite solves.
//!
//! Every closed-form dynamics formula in this crate is a scalar function
//! evaluated on the spectrum of a kernel matrix, so [`EigenDecomposition`] is
//! the workhorse. Decompositions are delegated to `nalgebra`.

use nalgebra::DMatrix;
use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::{Error, Result};

/// Relative jitter tried first when a factorization fails, in units of the
/// mean diagonal.
pub const DEFAULT_JITTER: f64 = 1e-12;

/// Number of ×10 jitter escalations attempted before giving up.
const JITTER_ESCALATIONS: i32 = 3;

/// Square matrix that is symmetric by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    data: Array2<f64>,
}

impl SymMatrix {
    /// Symmetrizes `data` as `(S + Sᵀ)/2`.
    pub fn new(data: Array2<f64>) -> Result<Self> {
        let (r, c) = data.dim();
        if r != c {
            return Err(Error::Shape(format!(
                "symmetric matrix must be square, got {r}x{c}"
            )));
        }
        if r == 0 {
            return Err(Error::Shape("symmetric matrix must have dim >= 1".into()));
        }
        Ok(Self {
            data: symmetrize(data),
        })
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            data: Array2::eye(dim),
        }
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        Self {
            data: Array2::from_diag(&Array1::from(diag.to_vec())),
        }
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.data.view()
    }

    pub fn into_array(self) -> Array2<f64> {
        self.data
    }

    pub fn trace(&self) -> f64 {
        self.data.diag().sum()
    }
}

/// Returns `(S + Sᵀ)/2`.
pub fn symmetrize(mut s: Array2<f64>) -> Array2<f64> {
    let n = s.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let m = 0.5 * (s[[i, j]] + s[[j, i]]);
            s[[i, j]] = m;
            s[[j, i]] = m;
        }
    }
    s
}

/// Eigenpairs of a symmetric matrix: eigenvalues ascending, eigenvectors as
/// orthonormal columns in matching order.
#[derive(Debug, Clone)]
pub struct EigenDecomposition {
    pub values: Array1<f64>,
    pub vectors: Array2<f64>,
}

impl EigenDecomposition {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn min(&self) -> f64 {
        self.values[0]
    }

    pub fn max(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    /// Evaluates `f` on every eigenvalue, failing if any value is non-finite.
    pub fn spectrum_map(&self, f: impl Fn(f64) -> f64) -> Result<Array1<f64>> {
        let mut out = Array1::zeros(self.dim());
        for (o, &lam) in out.iter_mut().zip(self.values.iter()) {
            let v = f(lam);
            if !v.is_finite() {
                return Err(Error::SpectrumDomain { eigenvalue: lam });
            }
            *o = v;
        }
        Ok(out)
    }

    /// `V f(Λ) Vᵀ`, symmetrized.
    pub fn apply(&self, f: impl Fn(f64) -> f64) -> Result<SymMatrix> {
        let fl = self.spectrum_map(f)?;
        let scaled = &self.vectors * &fl.view().insert_axis(Axis(0));
        Ok(SymMatrix {
            data: symmetrize(scaled.dot(&self.vectors.t())),
        })
    }

    /// `V f(Λ) Vᵀ B` without forming the dense matrix function.
    pub fn apply_to(&self, f: impl Fn(f64) -> f64, b: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if b.nrows() != self.dim() {
            return Err(Error::Shape(format!(
                "right-hand side has {} rows, expected {}",
                b.nrows(),
                self.dim()
            )));
        }
        let fl = self.spectrum_map(f)?;
        let mut proj = self.vectors.t().dot(&b);
        proj *= &fl.view().insert_axis(Axis(1));
        Ok(self.vectors.dot(&proj))
    }

    pub fn reconstruct(&self) -> Array2<f64> {
        let scaled = &self.vectors * &self.values.view().insert_axis(Axis(0));
        scaled.dot(&self.vectors.t())
    }
}

fn to_nalgebra(a: ArrayView2<'_, f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

fn from_nalgebra(m: &DMatrix<f64>) -> Array2<f64> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)])
}

/// Eigendecomposition with ascending eigenvalues.
pub fn sym_eig(s: &SymMatrix) -> Result<EigenDecomposition> {
    if s.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidMatrix("non-finite entry".into()));
    }
    let eig = nalgebra::SymmetricEigen::new(to_nalgebra(s.view()));
    let n = s.dim();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = Array1::from_iter(order.iter().map(|&i| eig.eigenvalues[i]));
    let vectors = Array2::from_shape_fn((n, n), |(r, c)| eig.eigenvectors[(r, order[c])]);
    Ok(EigenDecomposition { values, vectors })
}

/// `V f(Λ) Vᵀ` for the eigendecomposition of `s`.
pub fn apply_scalar_fn(s: &SymMatrix, f: impl Fn(f64) -> f64) -> Result<SymMatrix> {
    sym_eig(s)?.apply(f)
}

/// Solves `(K + j·tr(K)/dim·I) X = B` by Cholesky factorization.
///
/// `jitter` is tried first. On failure the relative jitter is escalated by
/// decades, starting from `max(jitter, DEFAULT_JITTER)`, three times.
pub fn psd_solve(k: &SymMatrix, b: ArrayView2<'_, f64>, jitter: f64) -> Result<Array2<f64>> {
    if !(jitter >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "jitter must be >= 0, got {jitter}"
        )));
    }
    let n = k.dim();
    if b.nrows() != n {
        return Err(Error::Shape(format!(
            "right-hand side has {} rows, expected {n}",
            b.nrows()
        )));
    }
    if k.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidMatrix("non-finite entry".into()));
    }
    let mean_diag = k.trace() / n as f64;
    let scale = if mean_diag > 0.0 { mean_diag } else { 1.0 };

    let mut schedule = vec![jitter];
    let base = jitter.max(DEFAULT_JITTER);
    let first = if jitter < DEFAULT_JITTER { 0 } else { 1 };
    for e in first..=JITTER_ESCALATIONS {
        schedule.push(base * 10f64.powi(e));
    }

    let kn = to_nalgebra(k.view());
    let bn = to_nalgebra(b);
    for &j in &schedule {
        let mut m = kn.clone();
        for i in 0..n {
            m[(i, i)] += j * scale;
        }
        if let Some(chol) = nalgebra::Cholesky::new(m) {
            let x = chol.solve(&bn);
            if x.iter().all(|v| v.is_finite()) {
                return Ok(from_nalgebra(&x));
            }
        }
    }
    Err(Error::NotPsd {
        max_jitter: *schedule.last().unwrap(),
    })
}

/// Frobenius norm.
pub fn frobenius(a: ArrayView2<'_, f64>) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Kronecker product `a ⊗ I_k`.
pub fn kron_identity(a: ArrayView2<'_, f64>, k: usize) -> Array2<f64> {
    let (r, c) = a.dim();
    let mut out = Array2::zeros((r * k, c * k));
    for i in 0..r {
        for j in 0..c {
            for q in 0..k {
                out[[i * k + q, j * k + q]] = a[[i, j]];
            }
        }
    }
    out
}
