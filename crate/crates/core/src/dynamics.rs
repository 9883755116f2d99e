//! Closed-form dynamics of linearized networks under squared loss, and the
//! Gaussian-process moments of the output ensemble.
//!
//! Every matrix function of the train kernel is a scalar function applied in
//! its eigenbasis. With `λ` an eigenvalue and `t` the time (or step count in
//! discrete mode):
//!
//! ```text
//! decay(λ) = e^{−ηλt}              or (1 − ηλ)^t
//! φ(λ)     = (1 − decay(λ)) / λ    with φ(0) = ηt
//! ```
//!
//! `t = f64::INFINITY` selects the limit: `decay = 0` and `φ = 1/λ` on the
//! range of the kernel, `decay = 1` and `φ = 0` on eigenvalues below
//! `PINV_CUTOFF · λ_max`.
//!
//! Kernels act on the example axis and are broadcast over the output columns.
//! A kernel over flattened outputs (`k|X|` square, multiplicity 1) is also
//! accepted; outputs are then flattened example-major.

use std::sync::OnceLock;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::analytic_kernels::KernelMatrix;
use crate::linalg::{psd_solve, sym_eig, symmetrize, EigenDecomposition, SymMatrix};
use crate::network::JacobianMatrix;
use crate::{Error, Result};

/// Relative eigenvalue cutoff of the pseudo-inverse used at `t = ∞`.
pub const PINV_CUTOFF: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimeMode {
    /// Gradient flow, `t` is continuous time.
    Continuous,
    /// Gradient descent, `t` is a nonnegative integer step count.
    Discrete,
}

/// `2 / (λ_min + λ_max)` of a self-kernel.
pub fn eta_critical(theta: &KernelMatrix) -> Result<f64> {
    let eig = sym_eig(&theta.to_sym()?)?;
    let s = eig.min() + eig.max();
    if !(s > 0.0) {
        return Err(Error::DegenerateKernel(s));
    }
    Ok(2.0 / s)
}

/// Scalar maps of the train kernel at one time.
#[derive(Debug, Clone, Copy)]
struct Spectral {
    eta: f64,
    t: f64,
    mode: TimeMode,
    cutoff: f64,
}

impl Spectral {
    fn null(&self, lambda: f64) -> bool {
        lambda.abs() < self.cutoff
    }

    fn decay(&self, lambda: f64) -> f64 {
        if self.t.is_infinite() {
            return if self.null(lambda) { 1.0 } else { 0.0 };
        }
        let x = self.eta * lambda;
        match self.mode {
            TimeMode::Continuous => (-x * self.t).exp(),
            TimeMode::Discrete => (1.0 - x).powi(self.t as i32),
        }
    }

    /// `(1 − decay(λ))/λ`
    fn phi(&self, lambda: f64) -> f64 {
        if self.t.is_infinite() {
            return if self.null(lambda) { 0.0 } else { 1.0 / lambda };
        }
        if lambda == 0.0 {
            return self.eta * self.t;
        }
        let x = self.eta * lambda;
        match self.mode {
            TimeMode::Continuous => -(-x * self.t).exp_m1() / lambda,
            TimeMode::Discrete => {
                if x < 1.0 {
                    -(self.t * (-x).ln_1p()).exp_m1() / lambda
                } else {
                    (1.0 - (1.0 - x).powi(self.t as i32)) / lambda
                }
            }
        }
    }

    /// `(1 − decay(λ)²)/λ`, continuous time only.
    fn psi(&self, lambda: f64) -> f64 {
        if self.t.is_infinite() {
            return if self.null(lambda) { 0.0 } else { 1.0 / lambda };
        }
        if lambda == 0.0 {
            return 2.0 * self.eta * self.t;
        }
        -(-2.0 * self.eta * lambda * self.t).exp_m1() / lambda
    }
}

fn check_times(times: &[f64], mode: TimeMode) -> Result<()> {
    for &t in times {
        let ok = t == f64::INFINITY
            || (t >= 0.0 && t.is_finite() && (mode == TimeMode::Continuous || t.fract() == 0.0));
        if !ok {
            return Err(Error::InvalidArgument(format!(
                "invalid time {t} for {mode:?} dynamics"
            )));
        }
        if mode == TimeMode::Discrete && t.is_finite() && t > i32::MAX as f64 {
            return Err(Error::InvalidArgument(format!("step count {t} too large")));
        }
    }
    Ok(())
}

/// Kernels, labels and initial outputs of one linearized regression problem.
#[derive(Debug, Clone)]
pub struct DynamicsProblem {
    pub ntk_train: KernelMatrix,
    /// `Θ(X_T, X)`
    pub ntk_cross: Option<KernelMatrix>,
    pub nngp_train: Option<KernelMatrix>,
    /// `K(X_T, X)`
    pub nngp_cross: Option<KernelMatrix>,
    pub nngp_test: Option<KernelMatrix>,
    /// `|X| × k`
    pub labels: Array2<f64>,
    pub f0_train: Option<Array2<f64>>,
    pub f0_test: Option<Array2<f64>>,
    pub eta: f64,
    pub time_mode: TimeMode,
    eig: OnceLock<EigenDecomposition>,
}

impl DynamicsProblem {
    pub fn new(
        ntk_train: KernelMatrix,
        labels: Array2<f64>,
        eta: f64,
        time_mode: TimeMode,
    ) -> Result<Self> {
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be positive, got {eta}"
            )));
        }
        let n = ntk_train.base.nrows();
        if ntk_train.base.ncols() != n {
            return Err(Error::Shape("train kernel must be square".into()));
        }
        if labels.nrows() != n && labels.len() != n {
            return Err(Error::Shape(format!(
                "labels {:?} do not match a {n}×{n} kernel",
                labels.dim()
            )));
        }
        Ok(Self {
            ntk_train,
            ntk_cross: None,
            nngp_train: None,
            nngp_cross: None,
            nngp_test: None,
            labels,
            f0_train: None,
            f0_test: None,
            eta,
            time_mode,
            eig: OnceLock::new(),
        })
    }

    pub fn with_test(mut self, ntk_cross: KernelMatrix) -> Result<Self> {
        if ntk_cross.base.ncols() != self.dim() {
            return Err(Error::Shape(
                "cross kernel columns must index training points".into(),
            ));
        }
        self.ntk_cross = Some(ntk_cross);
        Ok(self)
    }

    pub fn with_nngp(
        mut self,
        train: KernelMatrix,
        cross: KernelMatrix,
        test: KernelMatrix,
    ) -> Result<Self> {
        let n = self.dim();
        let m = cross.base.nrows();
        if train.base.dim() != (n, n) || cross.base.ncols() != n || test.base.dim() != (m, m) {
            return Err(Error::Shape("NNGP kernel blocks are inconsistent".into()));
        }
        self.nngp_train = Some(train);
        self.nngp_cross = Some(cross);
        self.nngp_test = Some(test);
        Ok(self)
    }

    pub fn with_initial(
        mut self,
        f0_train: Array2<f64>,
        f0_test: Option<Array2<f64>>,
    ) -> Result<Self> {
        if f0_train.dim() != self.labels.dim() {
            return Err(Error::Shape(
                "initial train outputs must match the labels".into(),
            ));
        }
        self.f0_train = Some(f0_train);
        self.f0_test = f0_test;
        Ok(self)
    }

    fn dim(&self) -> usize {
        self.ntk_train.base.nrows()
    }

    /// Eigendecomposition of the train kernel, computed on first use.
    pub fn eigen(&self) -> Result<&EigenDecomposition> {
        if let Some(e) = self.eig.get() {
            return Ok(e);
        }
        let e = sym_eig(&self.ntk_train.to_sym()?)?;
        Ok(self.eig.get_or_init(|| e))
    }

    fn spectral(&self, t: f64) -> Result<Spectral> {
        let cutoff = PINV_CUTOFF * self.eigen()?.max().abs();
        Ok(Spectral {
            eta: self.eta,
            t,
            mode: self.time_mode,
            cutoff,
        })
    }
}

/// Reshapes output matrices to the kernel's row layout and back.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Layout {
    pub(crate) cols: usize,
    pub(crate) flattened: bool,
}

impl Layout {
    pub(crate) fn new(kernel_dim: usize, outputs: ArrayView2<'_, f64>) -> Result<Self> {
        let (rows, cols) = outputs.dim();
        if rows == kernel_dim {
            Ok(Self {
                cols,
                flattened: false,
            })
        } else if rows * cols == kernel_dim {
            Ok(Self {
                cols,
                flattened: true,
            })
        } else {
            Err(Error::Shape(format!(
                "outputs {rows}×{cols} do not match kernel dimension {kernel_dim}"
            )))
        }
    }

    pub(crate) fn to_kernel(&self, m: ArrayView2<'_, f64>) -> Array2<f64> {
        if self.flattened {
            m.as_standard_layout()
                .into_owned()
                .into_shape_with_order((m.len(), 1))
                .expect("contiguous")
        } else {
            m.to_owned()
        }
    }

    pub(crate) fn from_kernel(&self, m: Array2<f64>, rows: usize) -> Array2<f64> {
        if self.flattened {
            m.into_shape_with_order((rows, self.cols))
                .expect("contiguous")
        } else {
            m
        }
    }
}

/// Linearized outputs (and optionally parameter displacement) at one time.
#[derive(Debug, Clone)]
pub struct LinearizedState {
    pub t: f64,
    pub train: Array2<f64>,
    pub test: Option<Array2<f64>>,
    /// `ω_t = θ_t − θ₀`, when a Jacobian was supplied.
    pub omega: Option<ndarray::Array1<f64>>,
}

/// Per-realization linearized MSE dynamics.
///
/// ```text
/// f_t(X)   = Y + decay(Θ)(f₀(X) − Y)
/// f_t(X_T) = f₀(X_T) − Θ(X_T, X) φ(Θ)(f₀(X) − Y)
/// ω_t      = −J₀ᵀ φ(Θ)(f₀(X) − Y)
/// ```
pub fn lin_mse_dynamics(
    p: &DynamicsProblem,
    times: &[f64],
    jacobian: Option<&JacobianMatrix>,
) -> Result<Vec<LinearizedState>> {
    let f0 = p.f0_train.as_ref().ok_or(Error::MissingInitialState)?;
    check_times(times, p.time_mode)?;
    let layout = Layout::new(p.dim(), f0.view())?;
    let residual = layout.to_kernel((f0 - &p.labels).view());
    let y = &p.labels;
    if let Some(j) = jacobian {
        if j.data.nrows() != f0.len() {
            return Err(Error::Shape(
                "Jacobian rows must match the flattened train outputs".into(),
            ));
        }
    }
    if p.f0_test.is_some() && p.ntk_cross.is_none() {
        return Err(Error::Shape("test outputs need a cross kernel".into()));
    }
    let eig = p.eigen()?;
    let mut out = Vec::with_capacity(times.len());
    for &t in times {
        let s = p.spectral(t)?;
        let decayed = eig.apply_to(|l| s.decay(l), residual.view())?;
        let train = y + &layout.from_kernel(decayed, y.nrows());
        let needs_phi = p.f0_test.is_some() || jacobian.is_some();
        let phi_r = if needs_phi {
            Some(eig.apply_to(|l| s.phi(l), residual.view())?)
        } else {
            None
        };
        let test = match (&p.f0_test, &p.ntk_cross, &phi_r) {
            (Some(f0t), Some(cross), Some(pr)) => {
                let delta = cross.base.dot(pr);
                Some(f0t - &layout.from_kernel(delta, f0t.nrows()))
            }
            _ => None,
        };
        let omega = match (jacobian, &phi_r) {
            (Some(j), Some(pr)) => {
                let flat = pr
                    .as_standard_layout()
                    .iter()
                    .copied()
                    .collect::<ndarray::Array1<f64>>();
                Some(-j.data.t().dot(&flat))
            }
            _ => None,
        };
        out.push(LinearizedState {
            t,
            train,
            test,
            omega,
        });
    }
    Ok(out)
}

/// Predictive mean and covariance at one time. The covariance is shared by
/// every output channel.
#[derive(Debug, Clone)]
pub struct GPMoments {
    pub t: f64,
    /// `|X_T| × k`
    pub mean: Array2<f64>,
    pub covariance: SymMatrix,
}

impl GPMoments {
    /// Marginal standard deviations, clamped at zero variance.
    pub fn std(&self) -> ndarray::Array1<f64> {
        self.covariance
            .as_array()
            .diag()
            .mapv(|v| v.max(0.0).sqrt())
    }
}

/// Moments of the linearized ensemble under the analytic kernels.
///
/// ```text
/// μ = Θ(X_T,X) A Y,          A = φ(Θ)
/// Σ = K(X_T,X_T) + Θ(X_T,X) A K A Θ(X_T,X)ᵀ − (Θ(X_T,X) A K(X_T,X)ᵀ + transpose)
/// ```
pub fn ntk_gp_moments(p: &DynamicsProblem, times: &[f64]) -> Result<Vec<GPMoments>> {
    check_times(times, p.time_mode)?;
    let cross = p
        .ntk_cross
        .as_ref()
        .ok_or_else(|| Error::Shape("moments need the cross tangent kernel".into()))?;
    let (k_train, k_cross, k_test) = match (&p.nngp_train, &p.nngp_cross, &p.nngp_test) {
        (Some(a), Some(b), Some(c)) => (a, b, c),
        _ => return Err(Error::Shape("moments need all NNGP kernel blocks".into())),
    };
    if p.labels.nrows() != p.dim() {
        return Err(Error::Shape(
            "moments need labels with one row per training point".into(),
        ));
    }
    let eig = p.eigen()?;
    let mut out = Vec::with_capacity(times.len());
    for &t in times {
        let s = p.spectral(t)?;
        // B = A Θ(X_T,X)ᵀ, so that Θ(X_T,X) A = Bᵀ
        let b = eig.apply_to(|l| s.phi(l), cross.base.t())?;
        let mean = b.t().dot(&p.labels);
        let middle = b.t().dot(&k_train.base).dot(&b);
        let coupling = b.t().dot(&k_cross.base.t());
        let cov = &k_test.base + &middle - &coupling - coupling.t();
        out.push(GPMoments {
            t,
            mean,
            covariance: SymMatrix::new(cov)?,
        });
    }
    Ok(out)
}

/// Direct evaluation of the `t → ∞` moments with Cholesky solves instead of
/// the eigenbasis:
///
/// ```text
/// μ = Θ(X_T,X) Θ⁻¹ Y
/// Σ = K(X_T,X_T) + Θ(X_T,X) Θ⁻¹ K Θ⁻¹ Θ(X,X_T) − (Θ(X_T,X) Θ⁻¹ K(X,X_T) + transpose)
/// ```
pub fn ntk_gp_limit(
    theta_train: &KernelMatrix,
    theta_cross: &KernelMatrix,
    k_train: &KernelMatrix,
    k_cross: &KernelMatrix,
    k_test: &KernelMatrix,
    labels: ArrayView2<'_, f64>,
) -> Result<GPMoments> {
    let theta = theta_train.to_sym()?;
    let b = psd_solve(&theta, theta_cross.base.t(), 0.0)?;
    let mean = b.t().dot(&labels);
    let middle = b.t().dot(&k_train.base).dot(&b);
    let coupling = b.t().dot(&k_cross.base.t());
    let cov = &k_test.base + &middle - &coupling - coupling.t();
    Ok(GPMoments {
        t: f64::INFINITY,
        mean,
        covariance: SymMatrix::new(cov)?,
    })
}

/// Exact NNGP posterior `μ = K_x K⁻¹ Y`, `Σ = K_xx − K_x K⁻¹ K_xᵀ`.
pub fn nngp_posterior(
    k_train: &KernelMatrix,
    k_cross: &KernelMatrix,
    k_test: &KernelMatrix,
    labels: ArrayView2<'_, f64>,
    jitter: f64,
) -> Result<GPMoments> {
    let k = k_train.to_sym()?;
    let n = k.dim();
    if k_cross.base.ncols() != n
        || labels.nrows() != n
        || k_test.base.dim() != (k_cross.base.nrows(), k_cross.base.nrows())
    {
        return Err(Error::Shape(
            "posterior kernel blocks are inconsistent".into(),
        ));
    }
    let rhs = ndarray::concatenate![ndarray::Axis(1), labels, k_cross.base.t()];
    let sol = psd_solve(&k, rhs.view(), jitter)?;
    let k_out = labels.ncols();
    let alpha = sol.slice(ndarray::s![.., ..k_out]);
    let beta = sol.slice(ndarray::s![.., k_out..]);
    let mean = k_cross.base.dot(&alpha);
    let cov = &k_test.base - &k_cross.base.dot(&beta);
    Ok(GPMoments {
        t: f64::INFINITY,
        mean,
        covariance: SymMatrix::new(symmetrize(cov))?,
    })
}

/// Ensemble moments when only the readout layer is trained by gradient flow:
///
/// ```text
/// μ = K_x φ(K) Y
/// Σ = K_xx − K_x ψ(K) K_xᵀ,      ψ(λ) = (1 − e^{−2ηλt})/λ
/// ```
pub fn readout_gp_moments(
    k_train: &KernelMatrix,
    k_cross: &KernelMatrix,
    k_test: &KernelMatrix,
    labels: ArrayView2<'_, f64>,
    eta: f64,
    times: &[f64],
) -> Result<Vec<GPMoments>> {
    check_times(times, TimeMode::Continuous)?;
    if !(eta > 0.0) {
        return Err(Error::InvalidArgument(
            "learning rate must be positive".into(),
        ));
    }
    let n = k_train.base.nrows();
    if k_cross.base.ncols() != n || labels.nrows() != n {
        return Err(Error::Shape(
            "readout kernel blocks are inconsistent".into(),
        ));
    }
    let eig = sym_eig(&k_train.to_sym()?)?;
    let cutoff = PINV_CUTOFF * eig.max().abs();
    let mut out = Vec::with_capacity(times.len());
    for &t in times {
        let s = Spectral {
            eta,
            t,
            mode: TimeMode::Continuous,
            cutoff,
        };
        let a = eig.apply_to(|l| s.phi(l), k_cross.base.t())?;
        let mean = a.t().dot(&labels);
        let c = eig.apply_to(|l| s.psi(l), k_cross.base.t())?;
        let cov = &k_test.base - &k_cross.base.dot(&c);
        out.push(GPMoments {
            t,
            mean,
            covariance: SymMatrix::new(cov)?,
        });
    }
    Ok(out)
}

/// One realization of readout-only training:
/// `f_t(x) = f₀(x) − K_x φ(K)(f₀(X) − Y)`.
pub fn readout_realization(
    k_train: &KernelMatrix,
    k_cross: &KernelMatrix,
    labels: ArrayView2<'_, f64>,
    f0_train: ArrayView2<'_, f64>,
    f0_test: ArrayView2<'_, f64>,
    eta: f64,
    times: &[f64],
) -> Result<Vec<Array2<f64>>> {
    check_times(times, TimeMode::Continuous)?;
    let eig = sym_eig(&k_train.to_sym()?)?;
    let cutoff = PINV_CUTOFF * eig.max().abs();
    let residual = &f0_train - &labels;
    times
        .iter()
        .map(|&t| {
            let s = Spectral {
                eta,
                t,
                mode: TimeMode::Continuous,
                cutoff,
            };
            let r = eig.apply_to(|l| s.phi(l), residual.view())?;
            Ok(&f0_test - &k_cross.base.dot(&r))
        })
        .collect()
}
