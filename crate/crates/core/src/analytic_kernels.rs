//! Infinite-width NNGP and NTK recursions for fully-connected networks.
//!
//! With `Σ^l` the 2×2 moment of the layer-`l` pre-activations at `(x, x′)`:
//!
//! ```text
//! K¹     = σ_w² ⟨x, x′⟩/n₀ + σ_b²                Θ¹ = K¹
//! K^{l+1} = σ_w² T(Σ^l) + σ_b²                   Θ^{l+1} = K^{l+1} + σ_w² Θ^l Ṫ(Σ^l)
//! ```
//!
//! with `T(Σ) = E[φ(u)φ(v)]` and `Ṫ(Σ) = E[φ′(u)φ′(v)]` for `(u, v) ~ N(0, Σ)`.
//! All kernels are for the NTK parameterization and are scalar per input pair;
//! the full kernel over `k` outputs is `base ⊗ I_k`.

use std::f64::consts::PI;
use std::sync::OnceLock;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rayon::prelude::*;

use crate::linalg::{kron_identity, SymMatrix};
use crate::network::{Activation, Architecture};
use crate::{Error, Result};

/// Gauss–Hermite order used for tanh.
pub const TANH_QUADRATURE_ORDER: usize = 64;

const CORRELATION_FLOOR: f64 = 1e-30;

/// Covariance `[[k_xx, k_xy], [k_xy, k_yy]]` of a centred bivariate Gaussian.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BivariateGaussianMoment {
    pub k_xx: f64,
    pub k_xy: f64,
    pub k_yy: f64,
}

impl BivariateGaussianMoment {
    pub fn new(k_xx: f64, k_xy: f64, k_yy: f64) -> Result<Self> {
        if !(k_xx >= 0.0 && k_yy >= 0.0)
            || !k_xy.is_finite()
            || !k_xx.is_finite()
            || !k_yy.is_finite()
        {
            return Err(Error::InvalidMoment(format!(
                "diagonal ({k_xx}, {k_yy}) must be finite and nonnegative"
            )));
        }
        if k_xy.abs() > (k_xx * k_yy).sqrt() + 1e-12 {
            return Err(Error::InvalidMoment(format!(
                "|k_xy| = {} exceeds sqrt(k_xx k_yy) = {}",
                k_xy.abs(),
                (k_xx * k_yy).sqrt()
            )));
        }
        Ok(Self { k_xx, k_xy, k_yy })
    }

    /// Variance-only moment `[[c, c], [c, c]]`.
    pub fn diagonal(c: f64) -> Result<Self> {
        Self::new(c, c, c)
    }

    fn cos_theta(&self) -> f64 {
        (self.k_xy / (self.k_xx * self.k_yy).max(CORRELATION_FLOOR).sqrt()).clamp(-1.0, 1.0)
    }
}

/// `E[φ(u)φ(v)]`.
pub fn t_map(m: &BivariateGaussianMoment, activation: Activation) -> f64 {
    match activation {
        Activation::Relu => {
            let theta = m.cos_theta().acos();
            let j1 = theta.sin() + (PI - theta) * theta.cos();
            (m.k_xx * m.k_yy).sqrt() * j1 / (2.0 * PI)
        }
        Activation::Erf => {
            let denom = ((1.0 + 2.0 * m.k_xx) * (1.0 + 2.0 * m.k_yy)).sqrt();
            2.0 / PI * (2.0 * m.k_xy / denom).clamp(-1.0, 1.0).asin()
        }
        Activation::Tanh => {
            gauss_hermite_expectation(m, default_rule(), |u, v| u.tanh() * v.tanh())
        }
    }
}

/// `E[φ′(u)φ′(v)]`.
pub fn tdot_map(m: &BivariateGaussianMoment, activation: Activation) -> f64 {
    match activation {
        Activation::Relu => (PI - m.cos_theta().acos()) / (2.0 * PI),
        Activation::Erf => {
            let det = (1.0 + 2.0 * m.k_xx) * (1.0 + 2.0 * m.k_yy) - 4.0 * m.k_xy * m.k_xy;
            4.0 / PI / det.max(f64::MIN_POSITIVE).sqrt()
        }
        Activation::Tanh => gauss_hermite_expectation(m, default_rule(), |u, v| {
            let (a, b) = (u.tanh(), v.tanh());
            (1.0 - a * a) * (1.0 - b * b)
        }),
    }
}

/// Nodes and weights for `∫ e^{−x²} g(x) dx`.
#[derive(Debug, Clone)]
pub struct GaussHermite {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussHermite {
    /// Roots of the physicists' Hermite polynomial by Newton iteration on the
    /// orthonormal recurrence.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1);
        let pim4 = PI.powf(-0.25);
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let m = n.div_ceil(2);
        let nf = n as f64;
        let mut z = 0.0f64;
        for i in 0..m {
            z = match i {
                0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
                1 => z - 1.14 * nf.powf(0.426) / z,
                2 => 1.86 * z - 0.86 * nodes[0],
                3 => 1.91 * z - 0.91 * nodes[1],
                _ => 2.0 * z - nodes[i - 2],
            };
            let mut pp = 0.0;
            for _ in 0..100 {
                let mut p1 = pim4;
                let mut p2 = 0.0;
                for j in 0..n {
                    let p3 = p2;
                    p2 = p1;
                    let jf = j as f64;
                    p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
                }
                pp = (2.0 * nf).sqrt() * p2;
                let z1 = z;
                z = z1 - p1 / pp;
                if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                    break;
                }
            }
            nodes[i] = z;
            nodes[n - 1 - i] = -z;
            weights[i] = 2.0 / (pp * pp);
            weights[n - 1 - i] = weights[i];
        }
        Self { nodes, weights }
    }
}

fn default_rule() -> &'static GaussHermite {
    static RULE: OnceLock<GaussHermite> = OnceLock::new();
    RULE.get_or_init(|| GaussHermite::new(TANH_QUADRATURE_ORDER))
}

/// `E[g(u, v)]` for `(u, v) ~ N(0, Σ)` by tensor-product Gauss–Hermite on
/// the symmetric square root of `Σ`. The smaller variance is placed first so
/// the result is exactly symmetric in the two arguments when `g` is.
pub fn gauss_hermite_expectation(
    m: &BivariateGaussianMoment,
    rule: &GaussHermite,
    g: impl Fn(f64, f64) -> f64,
) -> f64 {
    let (a, b, swapped) = if m.k_xx <= m.k_yy {
        (m.k_xx, m.k_yy, false)
    } else {
        (m.k_yy, m.k_xx, true)
    };
    let c = m.k_xy;
    let s = (a * b - c * c).max(0.0).sqrt();
    let t = (a + b + 2.0 * s).sqrt();
    let (l11, l12, l22) = if t > 0.0 {
        ((a + s) / t, c / t, (b + s) / t)
    } else {
        (0.0, 0.0, 0.0)
    };
    let s2 = std::f64::consts::SQRT_2;
    let mut total = 0.0;
    for (&xi, &wi) in rule.nodes.iter().zip(&rule.weights) {
        let z1 = s2 * xi;
        let mut inner = 0.0;
        for (&xj, &wj) in rule.nodes.iter().zip(&rule.weights) {
            let z2 = s2 * xj;
            let u = l11 * z1 + l12 * z2;
            let v = l12 * z1 + l22 * z2;
            inner += wj * if swapped { g(v, u) } else { g(u, v) };
        }
        total += wi * inner;
    }
    total / PI
}

/// Scalar kernel over input pairs, standing for `base ⊗ I_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix {
    pub base: Array2<f64>,
    pub output_multiplicity: usize,
}

impl KernelMatrix {
    pub fn new(base: Array2<f64>, output_multiplicity: usize) -> Self {
        Self {
            base,
            output_multiplicity,
        }
    }

    /// Materialized `base ⊗ I_k`, rows indexed `example·k + output`.
    pub fn full(&self) -> Array2<f64> {
        kron_identity(self.base.view(), self.output_multiplicity)
    }

    /// Base as a symmetric matrix (only meaningful for self-kernels).
    pub fn to_sym(&self) -> Result<SymMatrix> {
        SymMatrix::new(self.base.clone())
    }

    pub fn transpose(&self) -> KernelMatrix {
        KernelMatrix {
            base: self.base.t().to_owned(),
            output_multiplicity: self.output_multiplicity,
        }
    }
}

fn check_inputs(arch: &Architecture, x: ArrayView2<'_, f64>) -> Result<()> {
    if x.ncols() != arch.input_dim {
        return Err(Error::Shape(format!(
            "inputs have {} columns, expected {}",
            x.ncols(),
            arch.input_dim
        )));
    }
    Ok(())
}

fn base_gram(arch: &Architecture, x1: ArrayView2<'_, f64>, x2: ArrayView2<'_, f64>) -> Array2<f64> {
    let scale = arch.weight_var / arch.input_dim as f64;
    // plain loops so that swapping the arguments transposes the result bit for bit
    Array2::from_shape_fn((x1.nrows(), x2.nrows()), |(i, j)| {
        let mut s = 0.0;
        for (a, b) in x1.row(i).iter().zip(x2.row(j)) {
            s += a * b;
        }
        scale * s + arch.bias_var
    })
}

fn base_diag(arch: &Architecture, x: ArrayView2<'_, f64>) -> Array1<f64> {
    let scale = arch.weight_var / arch.input_dim as f64;
    x.axis_iter(Axis(0))
        .map(|r| {
            let mut s = 0.0;
            for a in r {
                s += a * a;
            }
            scale * s + arch.bias_var
        })
        .collect()
}

/// Per-layer `(K, Θ)` for a pair of input sets, computed jointly.
struct Recursion {
    nngp: Array2<f64>,
    ntk: Array2<f64>,
}

fn recurse(
    arch: &Architecture,
    x1: ArrayView2<'_, f64>,
    x2: ArrayView2<'_, f64>,
    want_ntk: bool,
) -> Result<Recursion> {
    arch.validate()?;
    check_inputs(arch, x1)?;
    check_inputs(arch, x2)?;
    let mut k = base_gram(arch, x1, x2);
    let mut d1 = base_diag(arch, x1);
    let mut d2 = base_diag(arch, x2);
    let mut theta = if want_ntk {
        k.clone()
    } else {
        Array2::zeros((0, 0))
    };
    let (sw2, sb2, act) = (arch.weight_var, arch.bias_var, arch.activation);
    for _ in 0..arch.depth() {
        let n2 = x2.nrows();
        let prev_k = k;
        let prev_theta = theta;
        let rows: Vec<(Vec<f64>, Vec<f64>)> = (0..x1.nrows())
            .into_par_iter()
            .map(|i| {
                let mut kr = Vec::with_capacity(n2);
                let mut tr = Vec::with_capacity(if want_ntk { n2 } else { 0 });
                for j in 0..n2 {
                    let m = BivariateGaussianMoment {
                        k_xx: d1[i],
                        k_xy: prev_k[[i, j]],
                        k_yy: d2[j],
                    };
                    let knew = sw2 * t_map(&m, act) + sb2;
                    if want_ntk {
                        tr.push(knew + sw2 * prev_theta[[i, j]] * tdot_map(&m, act));
                    }
                    kr.push(knew);
                }
                (kr, tr)
            })
            .collect();
        k = Array2::from_shape_fn((x1.nrows(), n2), |(i, j)| rows[i].0[j]);
        theta = if want_ntk {
            Array2::from_shape_fn((x1.nrows(), n2), |(i, j)| rows[i].1[j])
        } else {
            prev_theta
        };
        let diag_step = |d: &Array1<f64>| -> Array1<f64> {
            d.iter()
                .map(|&c| {
                    sw2 * t_map(
                        &BivariateGaussianMoment {
                            k_xx: c,
                            k_xy: c,
                            k_yy: c,
                        },
                        act,
                    ) + sb2
                })
                .collect()
        };
        d1 = diag_step(&d1);
        d2 = diag_step(&d2);
    }
    Ok(Recursion {
        nngp: k,
        ntk: theta,
    })
}

/// NNGP kernel `K^{L+1}(X1, X2)` of the readout.
pub fn nngp_kernel(
    arch: &Architecture,
    x1: ArrayView2<'_, f64>,
    x2: ArrayView2<'_, f64>,
) -> Result<KernelMatrix> {
    let r = recurse(arch, x1, x2, false)?;
    Ok(KernelMatrix::new(r.nngp, arch.output_dim))
}

/// Analytic tangent kernel and NNGP kernel `(Θ, K)` from one recursion.
pub fn ntk_kernel(
    arch: &Architecture,
    x1: ArrayView2<'_, f64>,
    x2: ArrayView2<'_, f64>,
) -> Result<(KernelMatrix, KernelMatrix)> {
    let r = recurse(arch, x1, x2, true)?;
    Ok((
        KernelMatrix::new(r.ntk, arch.output_dim),
        KernelMatrix::new(r.nngp, arch.output_dim),
    ))
}

/// Self, cross and test blocks of both kernels for a train/test split.
#[derive(Debug, Clone)]
pub struct KernelBlocks {
    pub ntk_train: KernelMatrix,
    pub ntk_cross: KernelMatrix,
    pub ntk_test: KernelMatrix,
    pub nngp_train: KernelMatrix,
    pub nngp_cross: KernelMatrix,
    pub nngp_test: KernelMatrix,
}

/// Kernels on `(train, train)`, `(test, train)` and `(test, test)`.
pub fn kernel_blocks(
    arch: &Architecture,
    x_train: ArrayView2<'_, f64>,
    x_test: ArrayView2<'_, f64>,
) -> Result<KernelBlocks> {
    let (ntk_train, nngp_train) = ntk_kernel(arch, x_train, x_train)?;
    let (ntk_cross, nngp_cross) = ntk_kernel(arch, x_test, x_train)?;
    let (ntk_test, nngp_test) = ntk_kernel(arch, x_test, x_test)?;
    Ok(KernelBlocks {
        ntk_train,
        ntk_cross,
        ntk_test,
        nngp_train,
        nngp_cross,
        nngp_test,
    })
}
