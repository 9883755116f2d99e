//! Finite-width fully-connected networks.
//!
//! Layer `l` (1-based, `l = 1..=L+1`) maps the post-activation `x^{l-1}`
//! (rows are examples) to the pre-activation
//!
//! ```text
//! h^l = s_w · x^{l-1} W^l + s_b · b^l
//! ```
//!
//! where the stored tensors `W^l` (`fan_in × fan_out`) and `b^l` are the
//! trainable variables. In [`ParamMode::Ntk`] they are standard normal and
//! `s_w = σ_w/√fan_in`, `s_b = σ_b`; in [`ParamMode::Standard`] the variances
//! live in the tensors and `s_w = s_b = 1`. The readout `h^{L+1}` has no
//! activation.
//!
//! Derivatives are always taken with respect to the stored tensors, which is
//! what gradient descent updates. Flattened parameter order is layer by layer,
//! weights row-major followed by biases.

use std::ops::Range;

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::rng::StreamKey;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Erf,
    Tanh,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Erf => libm::erf(x),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative; ReLU uses 0 at the kink.
    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Erf => std::f64::consts::FRAC_2_SQRT_PI * (-x * x).exp(),
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamMode {
    Ntk,
    Standard,
}

/// Static description of a network family member.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub input_dim: usize,
    pub hidden_widths: Vec<usize>,
    pub output_dim: usize,
    pub activation: Activation,
    pub weight_var: f64,
    pub bias_var: f64,
    pub param_mode: ParamMode,
}

impl Architecture {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden_widths.contains(&0) {
            return Err(Error::InvalidArgument(
                "all layer widths must be >= 1".into(),
            ));
        }
        if !(self.weight_var > 0.0) || !(self.bias_var >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "need weight_var > 0 and bias_var >= 0, got {} and {}",
                self.weight_var, self.bias_var
            )));
        }
        Ok(())
    }

    /// Number of hidden layers `L`.
    pub fn depth(&self) -> usize {
        self.hidden_widths.len()
    }

    /// `(fan_in, fan_out)` for each of the `L+1` affine layers.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.depth() + 1);
        let mut prev = self.input_dim;
        for &w in self
            .hidden_widths
            .iter()
            .chain(std::iter::once(&self.output_dim))
        {
            dims.push((prev, w));
            prev = w;
        }
        dims
    }

    pub fn num_params(&self) -> usize {
        self.layer_dims().iter().map(|(i, o)| i * o + o).sum()
    }

    /// `(s_w, s_b)` multiplying the stored tensors of layer `layer` (0-based).
    pub fn layer_scales(&self, layer: usize) -> (f64, f64) {
        match self.param_mode {
            ParamMode::Ntk => {
                let fan_in = self.layer_dims()[layer].0;
                (
                    (self.weight_var / fan_in as f64).sqrt(),
                    self.bias_var.sqrt(),
                )
            }
            ParamMode::Standard => (1.0, 1.0),
        }
    }

    /// Largest fan-in over all layers (`n_max` of the learning-rate mapping
    /// between parameterizations).
    pub fn max_fan_in(&self) -> usize {
        self.layer_dims()
            .iter()
            .map(|d| d.0)
            .max()
            .unwrap_or(self.input_dim)
    }

    /// Width used to normalize parameter drift: the widest hidden layer, or the
    /// input dimension for a readout-only model.
    pub fn characteristic_width(&self) -> usize {
        self.hidden_widths
            .iter()
            .copied()
            .max()
            .unwrap_or(self.input_dim)
    }

    /// Same family with every hidden layer set to `width`.
    pub fn with_hidden_width(&self, width: usize) -> Architecture {
        Architecture {
            hidden_widths: vec![width; self.depth()],
            ..self.clone()
        }
    }

    pub fn with_mode(&self, param_mode: ParamMode) -> Architecture {
        Architecture {
            param_mode,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    /// `fan_in × fan_out`
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Stored tensors of one network realization.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSet {
    pub mode: ParamMode,
    pub layers: Vec<LayerParams>,
}

impl ParameterSet {
    pub fn zeros(arch: &Architecture) -> Self {
        let layers = arch
            .layer_dims()
            .into_iter()
            .map(|(i, o)| LayerParams {
                weight: Array2::zeros((i, o)),
                bias: Array1::zeros(o),
            })
            .collect();
        Self {
            mode: arch.param_mode,
            layers,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            mode: self.mode,
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    weight: Array2::zeros(l.weight.raw_dim()),
                    bias: Array1::zeros(l.bias.len()),
                })
                .collect(),
        }
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    /// Flat index ranges of each layer (weights then bias).
    pub fn layer_ranges(&self) -> Vec<Range<usize>> {
        let mut start = 0;
        self.layers
            .iter()
            .map(|l| {
                let r = start..start + l.weight.len() + l.bias.len();
                start = r.end;
                r
            })
            .collect()
    }

    pub fn flatten(&self) -> Array1<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend(l.weight.iter());
            out.extend(l.bias.iter());
        }
        Array1::from(out)
    }

    pub fn unflatten(arch: &Architecture, flat: &[f64]) -> Result<Self> {
        if flat.len() != arch.num_params() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                arch.num_params(),
                flat.len()
            )));
        }
        let mut pos = 0;
        let mut layers = Vec::new();
        for (i, o) in arch.layer_dims() {
            let weight =
                Array2::from_shape_vec((i, o), flat[pos..pos + i * o].to_vec()).expect("sized");
            pos += i * o;
            let bias = Array1::from(flat[pos..pos + o].to_vec());
            pos += o;
            layers.push(LayerParams { weight, bias });
        }
        Ok(Self {
            mode: arch.param_mode,
            layers,
        })
    }

    /// `self += alpha · other`
    pub fn scaled_add(&mut self, alpha: f64, other: &ParameterSet) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight.scaled_add(alpha, &b.weight);
            a.bias.scaled_add(alpha, &b.bias);
        }
    }

    /// `self − other`
    pub fn difference(&self, other: &ParameterSet) -> ParameterSet {
        ParameterSet {
            mode: self.mode,
            layers: self
                .layers
                .iter()
                .zip(&other.layers)
                .map(|(a, b)| LayerParams {
                    weight: &a.weight - &b.weight,
                    bias: &a.bias - &b.bias,
                })
                .collect(),
        }
    }

    pub fn squared_norm(&self) -> f64 {
        self.layers
            .iter()
            .map(|l| {
                l.weight
                    .iter()
                    .chain(l.bias.iter())
                    .map(|v| v * v)
                    .sum::<f64>()
            })
            .sum()
    }

    /// Standard-parameterization tensors computing the same function:
    /// `W = s_w·ω`, `b = s_b·β`.
    pub fn to_standard(&self, arch: &Architecture) -> ParameterSet {
        if self.mode == ParamMode::Standard {
            return self.clone();
        }
        let layers = self
            .layers
            .iter()
            .enumerate()
            .map(|(l, p)| {
                let (sw, sb) = arch.layer_scales(l);
                LayerParams {
                    weight: &p.weight * sw,
                    bias: &p.bias * sb,
                }
            })
            .collect();
        ParameterSet {
            mode: ParamMode::Standard,
            layers,
        }
    }
}

const ROLE_WEIGHT: u64 = 0;
const ROLE_BIAS: u64 = 1;

/// Draws a realization. Each weight row (one fan-in unit) and each bias vector
/// reads its own keyed stream `(seed, layer, role, row)`, so widening a network
/// keeps every shared entry unchanged.
pub fn init_params(arch: &Architecture, seed: u64) -> Result<ParameterSet> {
    arch.validate()?;
    let root = StreamKey::new(seed);
    let mut layers = Vec::with_capacity(arch.depth() + 1);
    for (l, (fan_in, fan_out)) in arch.layer_dims().into_iter().enumerate() {
        let key = root.child(l as u64 + 1);
        let (wscale, bscale) = match arch.param_mode {
            ParamMode::Ntk => (1.0, 1.0),
            ParamMode::Standard => (
                (arch.weight_var / fan_in as f64).sqrt(),
                arch.bias_var.sqrt(),
            ),
        };
        let mut weight = Array2::zeros((fan_in, fan_out));
        let wkey = key.child(ROLE_WEIGHT);
        for (i, mut row) in weight.rows_mut().into_iter().enumerate() {
            let mut rng = wkey.child(i as u64).rng();
            for w in row.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *w = wscale * z;
            }
        }
        let mut rng = key.child(ROLE_BIAS).rng();
        let bias = Array1::from_shape_fn(fan_out, |_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            bscale * z
        });
        layers.push(LayerParams { weight, bias });
    }
    Ok(ParameterSet {
        mode: arch.param_mode,
        layers,
    })
}

/// Cached activations of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    /// `h^1 .. h^{L+1}`
    pub preacts: Vec<Array2<f64>>,
    /// `x^0 .. x^L` (`x^0` is the input)
    pub postacts: Vec<Array2<f64>>,
}

impl ForwardPass {
    pub fn output(&self) -> &Array2<f64> {
        self.preacts.last().expect("at least one layer")
    }

    pub fn into_output(mut self) -> Array2<f64> {
        self.preacts.pop().expect("at least one layer")
    }

    pub fn num_examples(&self) -> usize {
        self.postacts[0].nrows()
    }

    /// Rows `indices` of every cached activation.
    pub fn select(&self, indices: &[usize]) -> ForwardPass {
        ForwardPass {
            preacts: self
                .preacts
                .iter()
                .map(|a| a.select(Axis(0), indices))
                .collect(),
            postacts: self
                .postacts
                .iter()
                .map(|a| a.select(Axis(0), indices))
                .collect(),
        }
    }
}

fn check_params(arch: &Architecture, params: &ParameterSet) -> Result<()> {
    let dims = arch.layer_dims();
    if params.layers.len() != dims.len()
        || params
            .layers
            .iter()
            .zip(&dims)
            .any(|(p, &(i, o))| p.weight.dim() != (i, o) || p.bias.len() != o)
    {
        return Err(Error::Shape(
            "parameter tensors do not match the architecture".into(),
        ));
    }
    if params.mode != arch.param_mode {
        return Err(Error::InvalidArgument(
            "parameterization of tensors and architecture differ".into(),
        ));
    }
    Ok(())
}

fn affine(a: ArrayView2<'_, f64>, p: &LayerParams, sw: f64, sb: f64) -> Array2<f64> {
    let mut h = a.dot(&p.weight);
    if sw != 1.0 {
        h *= sw;
    }
    if sb == 1.0 {
        h += &p.bias;
    } else if sb != 0.0 {
        h.scaled_add(sb, &p.bias.view().insert_axis(Axis(0)));
    }
    h
}

/// Forward pass keeping every pre- and post-activation.
pub fn forward(
    arch: &Architecture,
    params: &ParameterSet,
    x: ArrayView2<'_, f64>,
) -> Result<ForwardPass> {
    check_params(arch, params)?;
    if x.ncols() != arch.input_dim {
        return Err(Error::Shape(format!(
            "inputs have {} columns, expected {}",
            x.ncols(),
            arch.input_dim
        )));
    }
    let n_layers = params.layers.len();
    let mut preacts = Vec::with_capacity(n_layers);
    let mut postacts = Vec::with_capacity(n_layers);
    postacts.push(x.to_owned());
    for (l, p) in params.layers.iter().enumerate() {
        let (sw, sb) = arch.layer_scales(l);
        let h = affine(postacts[l].view(), p, sw, sb);
        if l + 1 < n_layers {
            postacts.push(h.mapv(|v| arch.activation.apply(v)));
        }
        preacts.push(h);
    }
    Ok(ForwardPass { preacts, postacts })
}

/// Network outputs `f(X)` (`|X| × k`).
pub fn predict(
    arch: &Architecture,
    params: &ParameterSet,
    x: ArrayView2<'_, f64>,
) -> Result<Array2<f64>> {
    Ok(forward(arch, params, x)?.into_output())
}

fn activation_grad(arch: &Architecture, h: &Array2<f64>) -> Array2<f64> {
    h.mapv(|v| arch.activation.derivative(v))
}

/// Pulls `∂/∂h^{l+1}` back to `∂/∂h^l` through layer `l+1` (0-based `next`).
fn backprop_delta(
    arch: &Architecture,
    params: &ParameterSet,
    fp: &ForwardPass,
    next: usize,
    delta: &Array2<f64>,
) -> Array2<f64> {
    let (sw, _) = arch.layer_scales(next);
    let mut d = delta.dot(&params.layers[next].weight.t());
    let h = &fp.preacts[next - 1];
    let act = arch.activation;
    Zip::from(&mut d)
        .and(h)
        .for_each(|d, &h| *d *= sw * act.derivative(h));
    d
}

/// Vector-Jacobian product: gradient of `Σ_i g_i · f(x_i)` with respect to
/// the stored tensors, where `g = output_grad` (`|X| × k`).
pub fn vjp(
    arch: &Architecture,
    params: &ParameterSet,
    fp: &ForwardPass,
    output_grad: ArrayView2<'_, f64>,
) -> ParameterSet {
    let n_layers = params.layers.len();
    let mut grads: Vec<Option<LayerParams>> = vec![None; n_layers];
    let mut delta = output_grad.to_owned();
    for l in (0..n_layers).rev() {
        let (sw, sb) = arch.layer_scales(l);
        // row-major like the weights, so later elementwise updates stream
        let mut gw = Array2::zeros(params.layers[l].weight.raw_dim());
        general_mat_mul(sw, &fp.postacts[l].t(), &delta, 0.0, &mut gw);
        let gb = delta.sum_axis(Axis(0)) * sb;
        if l > 0 {
            delta = backprop_delta(arch, params, fp, l, &delta);
        }
        grads[l] = Some(LayerParams {
            weight: gw,
            bias: gb,
        });
    }
    ParameterSet {
        mode: params.mode,
        layers: grads.into_iter().map(|g| g.expect("filled")).collect(),
    }
}

/// One descent step along the vector-Jacobian product of `output_grad`,
/// fused layer by layer so the full gradient is never stored. With
/// `velocity = Some((v, β))`
///
/// ```text
/// v_l ← β v_l − η_l ∂(Σ g·f)/∂θ_l,   θ_l ← θ_l + v_l
/// ```
///
/// and `θ_l ← θ_l − η_l ∂(Σ g·f)/∂θ_l` otherwise. `rate(l)` gives the
/// (weight, bias) rates of layer `l`. The derivative is taken at `at`, or at
/// `target` itself when `at` is `None`; each layer is updated only after its
/// delta has been pulled back through it.
pub fn vjp_step(
    arch: &Architecture,
    at: Option<&ParameterSet>,
    target: &mut ParameterSet,
    fp: &ForwardPass,
    output_grad: ArrayView2<'_, f64>,
    rate: impl Fn(usize) -> (f64, f64),
    mut velocity: Option<(&mut ParameterSet, f64)>,
) {
    let n_layers = target.layers.len();
    let mut delta = output_grad.to_owned();
    for l in (0..n_layers).rev() {
        let (sw, sb) = arch.layer_scales(l);
        let (rw, rb) = rate(l);
        let below = (l > 0).then(|| backprop_delta(arch, at.unwrap_or(&*target), fp, l, &delta));
        let gb = delta.sum_axis(Axis(0));
        let post = fp.postacts[l].t();
        let layer = &mut target.layers[l];
        match velocity.as_mut() {
            Some((v, beta)) => {
                let vl = &mut v.layers[l];
                general_mat_mul(-rw * sw, &post, &delta, *beta, &mut vl.weight);
                vl.bias *= *beta;
                vl.bias.scaled_add(-rb * sb, &gb);
                layer.weight += &vl.weight;
                layer.bias += &vl.bias;
            }
            None => {
                general_mat_mul(-rw * sw, &post, &delta, 1.0, &mut layer.weight);
                layer.bias.scaled_add(-rb * sb, &gb);
            }
        }
        if let Some(d) = below {
            delta = d;
        }
    }
}

/// Jacobian-vector product: directional derivative of `f(X)` along `tangent`.
pub fn jvp(
    arch: &Architecture,
    params: &ParameterSet,
    fp: &ForwardPass,
    tangent: &ParameterSet,
) -> Array2<f64> {
    let n_layers = params.layers.len();
    let mut d_post: Option<Array2<f64>> = None;
    let mut d_h = Array2::zeros((0, 0));
    for l in 0..n_layers {
        let (sw, sb) = arch.layer_scales(l);
        let t = &tangent.layers[l];
        let mut dh = fp.postacts[l].dot(&t.weight);
        if let Some(dx) = &d_post {
            dh += &dx.dot(&params.layers[l].weight);
        }
        if sw != 1.0 {
            dh *= sw;
        }
        dh.scaled_add(sb, &t.bias.view().insert_axis(Axis(0)));
        if l + 1 < n_layers {
            let mut dx = dh.clone();
            let act = arch.activation;
            Zip::from(&mut dx)
                .and(&fp.preacts[l])
                .for_each(|d, &h| *d *= act.derivative(h));
            d_post = Some(dx);
        }
        d_h = dh;
    }
    d_h
}

/// Dense Jacobian of all outputs with respect to all stored parameters.
/// Row `i·k + c` is output `c` of example `i`.
#[derive(Debug, Clone)]
pub struct JacobianMatrix {
    pub data: Array2<f64>,
    pub outputs: usize,
    pub layer_ranges: Vec<Range<usize>>,
}

impl JacobianMatrix {
    pub fn num_examples(&self) -> usize {
        self.data.nrows() / self.outputs
    }

    pub fn num_params(&self) -> usize {
        self.data.ncols()
    }
}

/// `∂f/∂h^l` for output `c` at every layer `l = 1..=L+1` (0-based index
/// `l-1`), all examples at once.
fn output_deltas(
    arch: &Architecture,
    params: &ParameterSet,
    fp: &ForwardPass,
    c: usize,
) -> Vec<Array2<f64>> {
    let n_layers = params.layers.len();
    let b = fp.num_examples();
    let mut deltas = vec![Array2::zeros((0, 0)); n_layers];
    let mut top = Array2::zeros((b, arch.output_dim));
    top.column_mut(c).fill(1.0);
    deltas[n_layers - 1] = top;
    if n_layers >= 2 {
        // one-hot pull-back is a column selection
        let (sw, _) = arch.layer_scales(n_layers - 1);
        let col = params.layers[n_layers - 1].weight.column(c);
        let mut d = activation_grad(arch, &fp.preacts[n_layers - 2]);
        d *= &col.view().insert_axis(Axis(0));
        d *= sw;
        deltas[n_layers - 2] = d;
        for l in (1..n_layers - 1).rev() {
            deltas[l - 1] = backprop_delta(arch, params, fp, l, &deltas[l]);
        }
    }
    deltas
}

/// Exact reverse-mode Jacobian of `f(X)`.
pub fn jacobian(
    arch: &Architecture,
    params: &ParameterSet,
    x: ArrayView2<'_, f64>,
) -> Result<JacobianMatrix> {
    let fp = forward(arch, params, x)?;
    let k = arch.output_dim;
    let b = x.nrows();
    let ranges = params.layer_ranges();
    let mut data = Array2::zeros((b * k, params.num_params()));
    for c in 0..k {
        let deltas = output_deltas(arch, params, &fp, c);
        for (l, range) in ranges.iter().enumerate() {
            let (sw, sb) = arch.layer_scales(l);
            let a = &fp.postacts[l];
            let d = &deltas[l];
            let fan_out = d.ncols();
            let n_w = a.ncols() * fan_out;
            for i in 0..b {
                let mut row = data.row_mut(i * k + c);
                for (p, &ap) in a.row(i).iter().enumerate() {
                    if ap == 0.0 {
                        continue;
                    }
                    let base = range.start + p * fan_out;
                    for q in 0..fan_out {
                        row[base + q] = sw * ap * d[[i, q]];
                    }
                }
                for q in 0..fan_out {
                    row[range.start + n_w + q] = sb * d[[i, q]];
                }
            }
        }
    }
    Ok(JacobianMatrix {
        data,
        outputs: k,
        layer_ranges: ranges,
    })
}

/// Empirical tangent kernel over flattened outputs, optionally split into
/// per-layer summands.
#[derive(Debug, Clone)]
pub struct EmpiricalNtk {
    /// `k|X₁| × k|X₂|`
    pub full: Array2<f64>,
    pub per_layer: Option<Vec<Array2<f64>>>,
    pub outputs: usize,
}

impl EmpiricalNtk {
    /// Average of the `k` diagonal output blocks, `|X₁| × |X₂|`.
    pub fn diagonal_block_average(&self) -> Array2<f64> {
        average_diagonal_blocks(self.full.view(), self.outputs)
    }
}

/// `(1/k) Σ_c M[(i,c),(j,c)]` for a matrix over flattened outputs.
pub fn average_diagonal_blocks(full: ArrayView2<'_, f64>, k: usize) -> Array2<f64> {
    let (r, c) = (full.nrows() / k, full.ncols() / k);
    Array2::from_shape_fn((r, c), |(i, j)| {
        (0..k).map(|q| full[[i * k + q, j * k + q]]).sum::<f64>() / k as f64
    })
}

/// `Θ̂ = J₁ J₂ᵀ`, with the per-layer decomposition when `per_layer` is set.
pub fn empirical_ntk(
    j1: &JacobianMatrix,
    j2: &JacobianMatrix,
    per_layer: bool,
) -> Result<EmpiricalNtk> {
    if j1.num_params() != j2.num_params() || j1.outputs != j2.outputs {
        return Err(Error::Shape(format!(
            "Jacobians have {} and {} parameter columns",
            j1.num_params(),
            j2.num_params()
        )));
    }
    let full = j1.data.dot(&j2.data.t());
    let per_layer = per_layer.then(|| {
        j1.layer_ranges
            .iter()
            .map(|r| {
                let a = j1.data.slice(ndarray::s![.., r.clone()]);
                let b = j2.data.slice(ndarray::s![.., r.clone()]);
                a.dot(&b.t())
            })
            .collect()
    });
    Ok(EmpiricalNtk {
        full,
        per_layer,
        outputs: j1.outputs,
    })
}

/// Which output blocks of the tangent kernel to assemble.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputBlocks {
    /// All `k × k` blocks, `k|X₁| × k|X₂|`.
    Full,
    /// Average of the `k` diagonal blocks, `|X₁| × |X₂|`.
    DiagonalAverage,
}

/// Empirical tangent kernel assembled layer by layer without forming the
/// Jacobian. For layer `l` the contribution between outputs `(x, c)` and
/// `(x', c')` is
///
/// ```text
/// (s_w² ⟨x^{l-1}(x), x^{l-1}(x')⟩ + s_b²) · ⟨δ^l_c(x), δ^l_{c'}(x')⟩
/// ```
///
/// with `δ^l_c = ∂f_c/∂h^l`. Memory is `O(k·|X|·width)`.
pub fn tangent_kernel(
    arch: &Architecture,
    params: &ParameterSet,
    x1: ArrayView2<'_, f64>,
    x2: ArrayView2<'_, f64>,
    blocks: OutputBlocks,
) -> Result<EmpiricalNtk> {
    let fp1 = forward(arch, params, x1)?;
    let fp2 = forward(arch, params, x2)?;
    Ok(tangent_kernel_from_passes(arch, params, &fp1, &fp2, blocks))
}

/// [`tangent_kernel`] on cached forward passes.
pub fn tangent_kernel_from_passes(
    arch: &Architecture,
    params: &ParameterSet,
    fp1: &ForwardPass,
    fp2: &ForwardPass,
    blocks: OutputBlocks,
) -> EmpiricalNtk {
    let k = arch.output_dim;
    let n_layers = params.layers.len();
    let (b1, b2) = (fp1.num_examples(), fp2.num_examples());
    // s_w² ⟨a, a'⟩ + s_b² per layer
    let input_grams: Vec<Array2<f64>> = (0..n_layers)
        .map(|l| {
            let (sw, sb) = arch.layer_scales(l);
            let mut g = fp1.postacts[l].dot(&fp2.postacts[l].t());
            g.mapv_inplace(|v| sw * sw * v + sb * sb);
            g
        })
        .collect();

    match blocks {
        OutputBlocks::Full => {
            let mut per_layer = vec![Array2::zeros((b1 * k, b2 * k)); n_layers];
            let d1: Vec<Vec<Array2<f64>>> = (0..k)
                .map(|c| output_deltas(arch, params, fp1, c))
                .collect();
            let d2: Vec<Vec<Array2<f64>>> = (0..k)
                .map(|c| output_deltas(arch, params, fp2, c))
                .collect();
            for l in 0..n_layers {
                for c in 0..k {
                    for c2 in 0..k {
                        let g = d1[c][l].dot(&d2[c2][l].t());
                        let out = &mut per_layer[l];
                        for i in 0..b1 {
                            for j in 0..b2 {
                                out[[i * k + c, j * k + c2]] = input_grams[l][[i, j]] * g[[i, j]];
                            }
                        }
                    }
                }
            }
            let mut full = Array2::zeros((b1 * k, b2 * k));
            for p in &per_layer {
                full += p;
            }
            EmpiricalNtk {
                full,
                per_layer: Some(per_layer),
                outputs: k,
            }
        }
        OutputBlocks::DiagonalAverage => {
            // Σ_c ⟨δ^l_c(x), δ^l_c(x')⟩ per layer
            let mut delta_grams = vec![Array2::<f64>::zeros((b1, b2)); n_layers];
            delta_grams[n_layers - 1].fill(k as f64);
            if n_layers >= 2 {
                // top hidden layer: Σ_c (s_w W[q,c])² φ'(h_q) φ'(h'_q)
                let (sw, _) = arch.layer_scales(n_layers - 1);
                let w = &params.layers[n_layers - 1].weight;
                let row_sq =
                    w.map_axis(Axis(1), |r| r.iter().map(|v| v * v).sum::<f64>()) * (sw * sw);
                let g1 = activation_grad(arch, &fp1.preacts[n_layers - 2])
                    * row_sq.view().insert_axis(Axis(0));
                let g2 = activation_grad(arch, &fp2.preacts[n_layers - 2]);
                delta_grams[n_layers - 2] = g1.dot(&g2.t());
                if n_layers >= 3 {
                    for c in 0..k {
                        let d1 = output_deltas(arch, params, fp1, c);
                        let d2 = output_deltas(arch, params, fp2, c);
                        for l in 0..n_layers - 2 {
                            delta_grams[l] += &d1[l].dot(&d2[l].t());
                        }
                    }
                }
            }
            let per_layer: Vec<Array2<f64>> = input_grams
                .iter()
                .zip(&delta_grams)
                .map(|(a, d)| a * d / k as f64)
                .collect();
            let mut full = Array2::zeros((b1, b2));
            for p in &per_layer {
                full += p;
            }
            EmpiricalNtk {
                full,
                per_layer: Some(per_layer),
                outputs: 1,
            }
        }
    }
}
