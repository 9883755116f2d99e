//! Adaptive Dormand–Prince integration and the linearized dynamics that have
//! no closed form: softmax cross-entropy and heavy-ball momentum.

use ndarray::{Array2, ArrayView2};

use crate::analytic_kernels::KernelMatrix;
use crate::dynamics::Layout;
use crate::{Error, Result};

/// Autonomous or time-dependent first-order system `ẏ = F(t, y)`.
pub trait OdeSystem {
    fn dim(&self) -> usize;
    fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]);
    fn description(&self) -> &str {
        "ode"
    }
}

/// Closure-backed [`OdeSystem`].
pub struct FnSystem<F> {
    dim: usize,
    f: F,
    tag: String,
}

impl<F: Fn(f64, &[f64], &mut [f64])> FnSystem<F> {
    pub fn new(dim: usize, tag: impl Into<String>, f: F) -> Self {
        Self {
            dim,
            f,
            tag: tag.into(),
        }
    }
}

impl<F: Fn(f64, &[f64], &mut [f64])> OdeSystem for FnSystem<F> {
    fn dim(&self) -> usize {
        self.dim
    }
    fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]) {
        (self.f)(t, y, dy)
    }
    fn description(&self) -> &str {
        &self.tag
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rk45Options {
    pub rtol: f64,
    pub atol: f64,
    /// Initial step; chosen automatically when `None`.
    pub first_step: Option<f64>,
    pub max_steps: usize,
    /// Restrict the error norm to the leading components of the state.
    pub error_components: Option<usize>,
}

impl Default for Rk45Options {
    fn default() -> Self {
        Self {
            rtol: 1e-6,
            atol: 1e-9,
            first_step: None,
            max_steps: 10_000_000,
            error_components: None,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Rk45Stats {
    pub accepted: usize,
    pub rejected: usize,
    pub rhs_evals: usize,
}

/// States at the requested grid times, one row per time.
#[derive(Debug, Clone)]
pub struct OdeSolution {
    pub times: Vec<f64>,
    pub states: Array2<f64>,
    pub stats: Rk45Stats,
}

const C: [f64; 6] = [1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A2: [f64; 1] = [1.0 / 5.0];
const A3: [f64; 2] = [3.0 / 40.0, 9.0 / 40.0];
const A4: [f64; 3] = [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0];
const A5: [f64; 4] = [
    19372.0 / 6561.0,
    -25360.0 / 2187.0,
    64448.0 / 6561.0,
    -212.0 / 729.0,
];
const A6: [f64; 5] = [
    9017.0 / 3168.0,
    -355.0 / 33.0,
    46732.0 / 5247.0,
    49.0 / 176.0,
    -5103.0 / 18656.0,
];
const B: [f64; 6] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
];
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

const SAFETY: f64 = 0.9;
const MIN_FACTOR: f64 = 0.2;
const MAX_FACTOR: f64 = 10.0;
const PI_BETA: f64 = 0.04;
const PI_ALPHA: f64 = 0.2 - 0.75 * PI_BETA;

struct Stepper<'a, S: OdeSystem + ?Sized> {
    sys: &'a S,
    opts: Rk45Options,
    k: [Vec<f64>; 7],
    tmp: Vec<f64>,
    y_new: Vec<f64>,
    stats: Rk45Stats,
}

impl<'a, S: OdeSystem + ?Sized> Stepper<'a, S> {
    fn new(sys: &'a S, opts: Rk45Options) -> Self {
        let n = sys.dim();
        Self {
            sys,
            opts,
            k: std::array::from_fn(|_| vec![0.0; n]),
            tmp: vec![0.0; n],
            y_new: vec![0.0; n],
            stats: Rk45Stats::default(),
        }
    }

    fn eval(&mut self, t: f64, which: usize) {
        let mut out = std::mem::take(&mut self.k[which]);
        self.sys.rhs(t, &self.tmp, &mut out);
        self.k[which] = out;
        self.stats.rhs_evals += 1;
    }

    fn norm_len(&self) -> usize {
        self.opts
            .error_components
            .unwrap_or(self.tmp.len())
            .min(self.tmp.len())
    }

    fn wrms(&self, v: &[f64], y: &[f64]) -> f64 {
        let n = self.norm_len();
        if n == 0 {
            return 0.0;
        }
        let s: f64 = (0..n)
            .map(|i| {
                let sc = self.opts.atol + self.opts.rtol * y[i].abs();
                (v[i] / sc).powi(2)
            })
            .sum();
        (s / n as f64).sqrt()
    }

    /// Hairer's starting-step heuristic; `k[0]` holds `F(t, y)`.
    fn initial_step(&mut self, t: f64, y: &[f64], span: f64) -> f64 {
        let d0 = self.wrms(y, y);
        let d1 = self.wrms(&self.k[0].clone(), y);
        let h0 = if d0 < 1e-5 || d1 < 1e-5 {
            1e-6
        } else {
            0.01 * d0 / d1
        };
        let h0 = h0.min(span);
        for i in 0..y.len() {
            self.tmp[i] = y[i] + h0 * self.k[0][i];
        }
        self.eval(t + h0, 1);
        let diff: Vec<f64> = self.k[1]
            .iter()
            .zip(&self.k[0])
            .map(|(a, b)| (a - b) / h0)
            .collect();
        let d2 = self.wrms(&diff, y);
        let h1 = if d1.max(d2) <= 1e-15 {
            (h0 * 1e-3).max(1e-6)
        } else {
            (0.01 / d1.max(d2)).powf(0.2)
        };
        (100.0 * h0).min(h1).min(span)
    }

    /// One trial step from `(t, y)`; leaves the candidate in `y_new` and
    /// `F(t+h, y_new)` in `k[6]`. Returns the error norm.
    fn trial(&mut self, t: f64, y: &[f64], h: f64) -> f64 {
        let n = y.len();
        let rows: [&[f64]; 5] = [&A2, &A3, &A4, &A5, &A6];
        for (s, a) in rows.iter().enumerate() {
            for i in 0..n {
                let mut acc = 0.0;
                for (j, &aj) in a.iter().enumerate() {
                    acc += aj * self.k[j][i];
                }
                self.tmp[i] = y[i] + h * acc;
            }
            self.eval(t + C[s] * h, s + 1);
        }
        for i in 0..n {
            let mut acc = 0.0;
            for (j, &bj) in B.iter().enumerate() {
                acc += bj * self.k[j][i];
            }
            self.y_new[i] = y[i] + h * acc;
        }
        self.tmp.copy_from_slice(&self.y_new);
        self.eval(t + h, 6);
        let m = self.norm_len();
        let mut s = 0.0;
        for i in 0..m {
            let mut err = 0.0;
            for (j, &ej) in E.iter().enumerate() {
                err += ej * self.k[j][i];
            }
            let sc = self.opts.atol + self.opts.rtol * y[i].abs().max(self.y_new[i].abs());
            s += (h * err / sc).powi(2);
        }
        let e = if m == 0 { 0.0 } else { (s / m as f64).sqrt() };
        if e.is_finite() && self.y_new.iter().all(|v| v.is_finite()) {
            e
        } else {
            f64::INFINITY
        }
    }
}

/// Integrates `sys` from `y0` at `t_grid[0]` and reports the state at every
/// grid time. Steps are shortened to land exactly on grid times.
pub fn rk45_integrate<S: OdeSystem + ?Sized>(
    sys: &S,
    y0: &[f64],
    t_grid: &[f64],
    opts: Rk45Options,
) -> Result<OdeSolution> {
    if y0.len() != sys.dim() {
        return Err(Error::Shape(format!(
            "initial state has {} entries, system has {}",
            y0.len(),
            sys.dim()
        )));
    }
    if t_grid.is_empty()
        || t_grid.iter().any(|t| !t.is_finite())
        || t_grid.windows(2).any(|w| w[1] <= w[0])
    {
        return Err(Error::Grid(
            "time grid must be finite and strictly increasing".into(),
        ));
    }
    if !(opts.rtol > 0.0 && opts.atol >= 0.0) {
        return Err(Error::InvalidArgument("need rtol > 0 and atol >= 0".into()));
    }
    let mut states = Array2::zeros((t_grid.len(), y0.len()));
    states.row_mut(0).assign(&ndarray::ArrayView1::from(y0));
    let t0 = t_grid[0];
    let span = t_grid[t_grid.len() - 1] - t0;
    let mut st = Stepper::new(sys, opts);
    if t_grid.len() == 1 {
        return Ok(OdeSolution {
            times: t_grid.to_vec(),
            states,
            stats: st.stats,
        });
    }
    let mut y = y0.to_vec();
    let mut t = t0;
    st.tmp.copy_from_slice(&y);
    st.eval(t, 0);
    let mut h = match opts.first_step {
        Some(h) if h > 0.0 => h.min(span),
        _ => st.initial_step(t, &y, span),
    };
    let mut err_prev = 1e-4f64;
    let mut next = 1;
    let h_min = 1e-14 * span;
    while next < t_grid.len() {
        if st.stats.accepted + st.stats.rejected >= opts.max_steps {
            return Err(Error::Stiffness { t, h });
        }
        let target = t_grid[next];
        let proposed = h;
        let lands = t + h >= target || target - (t + h) < 1e-10 * h;
        let h_step = if lands { target - t } else { h };
        let err = st.trial(t, &y, h_step);
        if err <= 1.0 {
            st.stats.accepted += 1;
            t = if lands { target } else { t + h_step };
            std::mem::swap(&mut y, &mut st.y_new);
            st.k.swap(0, 6);
            let factor = if err == 0.0 {
                MAX_FACTOR
            } else {
                (SAFETY * err.powf(-PI_ALPHA) * err_prev.powf(PI_BETA))
                    .clamp(MIN_FACTOR, MAX_FACTOR)
            };
            err_prev = err.max(1e-4);
            h = h_step * factor;
            if lands {
                states
                    .row_mut(next)
                    .assign(&ndarray::ArrayView1::from(&y[..]));
                next += 1;
                h = h.max(proposed.min(h_step * MAX_FACTOR));
            }
        } else {
            st.stats.rejected += 1;
            let factor = if err.is_finite() {
                (SAFETY * err.powf(-0.2)).max(MIN_FACTOR)
            } else {
                MIN_FACTOR
            };
            h = h_step * factor;
        }
        if h < h_min {
            return Err(Error::Stiffness { t, h });
        }
    }
    Ok(OdeSolution {
        times: t_grid.to_vec(),
        states,
        stats: st.stats,
    })
}

fn softmax_rows(f: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut out = f.to_owned();
    for mut row in out.rows_mut() {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - m).exp());
        let s = row.sum();
        row /= s;
    }
    out
}

/// Row-wise softmax.
pub fn softmax(f: ArrayView2<'_, f64>) -> Array2<f64> {
    softmax_rows(f)
}

/// Train and test outputs on a time grid.
#[derive(Debug, Clone)]
pub struct OutputTrajectory {
    pub times: Vec<f64>,
    pub train: Vec<Array2<f64>>,
    pub test: Vec<Array2<f64>>,
    pub stats: Rk45Stats,
    /// Set when the grid ran past the horizon and was truncated.
    pub stopped_at: Option<f64>,
}

/// Kernel pair acting on output matrices, either broadcast over columns or on
/// flattened outputs.
struct KernelAction<'a> {
    train: &'a Array2<f64>,
    cross: Option<&'a Array2<f64>>,
    layout: Layout,
    n_train: usize,
    n_test: usize,
    k: usize,
}

impl<'a> KernelAction<'a> {
    fn new(
        theta_train: &'a KernelMatrix,
        theta_cross: Option<&'a KernelMatrix>,
        f0_train: ArrayView2<'_, f64>,
        n_test: usize,
    ) -> Result<Self> {
        let base = &theta_train.base;
        if base.nrows() != base.ncols() {
            return Err(Error::Shape("train kernel must be square".into()));
        }
        let layout = Layout::new(base.nrows(), f0_train)?;
        if let Some(c) = theta_cross {
            let expect_rows = if layout.flattened {
                n_test * layout.cols
            } else {
                n_test
            };
            if c.base.ncols() != base.nrows() || c.base.nrows() != expect_rows {
                return Err(Error::Shape(
                    "cross kernel does not match train kernel and test outputs".into(),
                ));
            }
        } else if n_test > 0 {
            return Err(Error::Shape("test outputs need a cross kernel".into()));
        }
        Ok(Self {
            train: base,
            cross: theta_cross.map(|c| &c.base),
            layout,
            n_train: f0_train.nrows(),
            n_test,
            k: f0_train.ncols(),
        })
    }

    fn apply(&self, kernel: &Array2<f64>, r: ArrayView2<'_, f64>, rows: usize) -> Array2<f64> {
        let rk = self.layout.to_kernel(r);
        self.layout.from_kernel(kernel.dot(&rk), rows)
    }

    fn train_len(&self) -> usize {
        self.n_train * self.k
    }

    fn split<'s>(&self, y: &'s [f64]) -> (ArrayView2<'s, f64>, ArrayView2<'s, f64>) {
        let a = self.train_len();
        let b = self.n_test * self.k;
        (
            ArrayView2::from_shape((self.n_train, self.k), &y[..a]).expect("sized"),
            ArrayView2::from_shape((self.n_test, self.k), &y[a..a + b]).expect("sized"),
        )
    }
}

fn pack(train: ArrayView2<'_, f64>, test: ArrayView2<'_, f64>) -> Vec<f64> {
    train.iter().chain(test.iter()).copied().collect()
}

fn write(dst: &mut [f64], src: &Array2<f64>, scale: f64) {
    for (d, s) in dst.iter_mut().zip(src.iter()) {
        *d = scale * s;
    }
}

/// Default horizon `10³/η` of the cross-entropy integration.
pub fn default_xent_horizon(eta: f64) -> f64 {
    1e3 / eta
}

/// Linearized gradient flow under softmax cross-entropy,
///
/// ```text
/// ḟ(X)   = −η Θ(X, X)   (σ(f(X)) − Y)
/// ḟ(X_T) = −η Θ(X_T, X) (σ(f(X)) − Y)
/// ```
///
/// The test outputs ride along in the state and do not enter the error norm.
/// Grid times beyond `horizon` are dropped and reported in `stopped_at`.
#[allow(clippy::too_many_arguments)]
pub fn xent_lin_dynamics(
    theta_train: &KernelMatrix,
    theta_cross: Option<&KernelMatrix>,
    labels: ArrayView2<'_, f64>,
    f0_train: ArrayView2<'_, f64>,
    f0_test: Option<ArrayView2<'_, f64>>,
    eta: f64,
    t_grid: &[f64],
    horizon: Option<f64>,
    opts: Rk45Options,
) -> Result<OutputTrajectory> {
    if labels.ncols() < 2 || labels.dim() != f0_train.dim() {
        return Err(Error::Shape(
            "cross-entropy needs one-hot labels with k >= 2 matching the outputs".into(),
        ));
    }
    if labels.rows().into_iter().any(|r| {
        r.iter().filter(|&&v| v == 1.0).count() != 1 || r.iter().any(|&v| v != 0.0 && v != 1.0)
    }) {
        return Err(Error::InvalidArgument("labels must be one-hot rows".into()));
    }
    let f0_test = f0_test.map_or_else(|| Array2::zeros((0, f0_train.ncols())), |v| v.to_owned());
    let f0_test = f0_test.view();
    let act = KernelAction::new(theta_train, theta_cross, f0_train, f0_test.nrows())?;
    let horizon = horizon.unwrap_or_else(|| default_xent_horizon(eta));
    let kept: Vec<f64> = t_grid
        .iter()
        .copied()
        .take_while(|&t| t <= horizon)
        .collect();
    let stopped_at = (kept.len() < t_grid.len()).then_some(horizon);
    let y0 = pack(f0_train, f0_test);
    let sys = FnSystem::new(
        y0.len(),
        "softmax cross-entropy linearized flow",
        |_t, y: &[f64], dy: &mut [f64]| {
            let (ftr, _) = act.split(y);
            let r = &softmax_rows(ftr) - &labels;
            let a = act.train_len();
            write(
                &mut dy[..a],
                &act.apply(act.train, r.view(), act.n_train),
                -eta,
            );
            if let Some(c) = act.cross {
                write(&mut dy[a..], &act.apply(c, r.view(), act.n_test), -eta);
            }
        },
    );
    let opts = Rk45Options {
        error_components: Some(act.train_len()),
        ..opts
    };
    let sol = if kept.is_empty() {
        OdeSolution {
            times: vec![],
            states: Array2::zeros((0, y0.len())),
            stats: Rk45Stats::default(),
        }
    } else {
        rk45_integrate(&sys, &y0, &kept, opts)?
    };
    let (train, test) = sol
        .states
        .rows()
        .into_iter()
        .map(|row| {
            let (a, b) = act.split(row.as_slice().expect("row-major"));
            (a.to_owned(), b.to_owned())
        })
        .unzip();
    Ok(OutputTrajectory {
        times: sol.times,
        train,
        test,
        stats: sol.stats,
        stopped_at,
    })
}

/// Linearized heavy-ball momentum under squared loss in its continuous-time
/// form,
///
/// ```text
/// f̈(x) = β̃ ḟ(x) − Θ(x, X)(f(X) − Y),   β̃ = (β − 1)/√η,
/// ```
///
/// started from `(f₀, 0)` and reported at `t = i·√η` for the given steps.
#[allow(clippy::too_many_arguments)]
pub fn momentum_lin_dynamics(
    theta_train: &KernelMatrix,
    theta_cross: Option<&KernelMatrix>,
    labels: ArrayView2<'_, f64>,
    f0_train: ArrayView2<'_, f64>,
    f0_test: Option<ArrayView2<'_, f64>>,
    eta: f64,
    beta: f64,
    steps: &[usize],
    opts: Rk45Options,
) -> Result<OutputTrajectory> {
    if !(0.0..1.0).contains(&beta) || !(eta > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "need 0 <= beta < 1 and eta > 0, got beta={beta}, eta={eta}"
        )));
    }
    if labels.dim() != f0_train.dim() {
        return Err(Error::Shape("labels must match the train outputs".into()));
    }
    let f0_test = f0_test.map_or_else(|| Array2::zeros((0, f0_train.ncols())), |v| v.to_owned());
    let f0_test = f0_test.view();
    let act = KernelAction::new(theta_train, theta_cross, f0_train, f0_test.nrows())?;
    let beta_t = (beta - 1.0) / eta.sqrt();
    let half = act.train_len() + f0_test.len();
    let mut y0 = pack(f0_train, f0_test);
    y0.extend(std::iter::repeat_n(0.0, half));
    let sys = FnSystem::new(
        2 * half,
        "linearized momentum",
        |_t, y: &[f64], dy: &mut [f64]| {
            let (pos, vel) = y.split_at(half);
            let (ftr, _) = act.split(pos);
            let r = &ftr - &labels;
            let (dpos, dvel) = dy.split_at_mut(half);
            dpos.copy_from_slice(vel);
            let a = act.train_len();
            write(
                &mut dvel[..a],
                &act.apply(act.train, r.view(), act.n_train),
                -1.0,
            );
            if let Some(c) = act.cross {
                write(&mut dvel[a..], &act.apply(c, r.view(), act.n_test), -1.0);
            }
            for (d, v) in dvel.iter_mut().zip(vel) {
                *d += beta_t * v;
            }
        },
    );
    if steps.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Grid(
            "step indices must be strictly increasing".into(),
        ));
    }
    let times: Vec<f64> = steps.iter().map(|&i| i as f64 * eta.sqrt()).collect();
    let sol = rk45_integrate(&sys, &y0, &times_with_origin(&times), opts)?;
    let skip = usize::from(times.first().is_none_or(|&t| t > 0.0));
    let (train, test) = sol
        .states
        .rows()
        .into_iter()
        .skip(skip)
        .map(|row| {
            let (a, b) = act.split(&row.as_slice().expect("row-major")[..half]);
            (a.to_owned(), b.to_owned())
        })
        .unzip();
    Ok(OutputTrajectory {
        times,
        train,
        test,
        stats: sol.stats,
        stopped_at: None,
    })
}

fn times_with_origin(times: &[f64]) -> Vec<f64> {
    if times.first() == Some(&0.0) {
        times.to_vec()
    } else {
        std::iter::once(0.0).chain(times.iter().copied()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{apply_scalar_fn, SymMatrix};
    use crate::rng::StreamKey;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn random_gram(n: usize, seed: u64) -> Array2<f64> {
        let mut rng = StreamKey::new(seed).rng();
        let g = Array2::from_shape_simple_fn((n, n + 2), || rng.sample::<f64, _>(StandardNormal));
        g.dot(&g.t()) / (n + 2) as f64
    }

    #[test]
    fn scalar_exponential() {
        let sys = FnSystem::new(1, "decay", |_t, y: &[f64], dy: &mut [f64]| dy[0] = -y[0]);
        let opts = Rk45Options {
            rtol: 1e-8,
            atol: 1e-12,
            ..Default::default()
        };
        let sol = rk45_integrate(&sys, &[1.0], &[0.0, 1.0], opts).unwrap();
        let e = (-1.0f64).exp();
        assert!((sol.states[[1, 0]] - e).abs() < 1e-8 * e);
    }

    #[test]
    fn zero_field_is_constant() {
        let sys = FnSystem::new(3, "still", |_t, _y: &[f64], dy: &mut [f64]| dy.fill(0.0));
        let y0 = [1.5, -2.0, 0.25];
        let sol =
            rk45_integrate(&sys, &y0, &[0.0, 0.3, 7.0, 100.0], Rk45Options::default()).unwrap();
        for row in sol.states.rows() {
            assert_eq!(row.to_vec(), y0.to_vec());
        }
    }

    #[test]
    fn linear_system_matches_eigenbasis() {
        let theta = random_gram(6, 3);
        let y0: Vec<f64> = (0..6).map(|i| (i as f64 * 0.7).cos()).collect();
        let th = theta.clone();
        let sys = FnSystem::new(6, "linear", move |_t, y: &[f64], dy: &mut [f64]| {
            let v = th.dot(&ndarray::ArrayView1::from(y));
            for (d, x) in dy.iter_mut().zip(v.iter()) {
                *d = -x;
            }
        });
        let grid = [0.0, 0.5, 1.0, 2.0, 4.0];
        let mut prev = f64::INFINITY;
        for rtol in [1e-5, 1e-6, 1e-7, 1e-8] {
            let opts = Rk45Options {
                rtol,
                atol: rtol * 1e-3,
                ..Default::default()
            };
            let sol = rk45_integrate(&sys, &y0, &grid, opts).unwrap();
            let mut err = 0.0f64;
            for (i, &t) in grid.iter().enumerate() {
                let e =
                    apply_scalar_fn(&SymMatrix::new(theta.clone()).unwrap(), |l| (-l * t).exp())
                        .unwrap();
                let exact = e.as_array().dot(&ndarray::Array1::from(y0.clone()));
                for j in 0..6 {
                    err = err.max((exact[j] - sol.states[[i, j]]).abs());
                }
            }
            assert!(err < 1e-6 || rtol > 1e-6, "{err}");
            assert!(err <= prev * 1.5, "rtol {rtol}: {err} vs {prev}");
            prev = prev.min(err);
        }
    }

    #[test]
    fn grid_validation() {
        let sys = FnSystem::new(1, "x", |_t, _y: &[f64], dy: &mut [f64]| dy[0] = 1.0);
        assert!(matches!(
            rk45_integrate(&sys, &[0.0], &[0.0, 0.0], Rk45Options::default()),
            Err(Error::Grid(_))
        ));
        assert!(rk45_integrate(&sys, &[0.0, 1.0], &[0.0, 1.0], Rk45Options::default()).is_err());
    }

    #[test]
    fn blow_up_reports_stiffness() {
        let sys = FnSystem::new(1, "blowup", |_t, y: &[f64], dy: &mut [f64]| {
            dy[0] = y[0] * y[0]
        });
        let r = rk45_integrate(&sys, &[1.0], &[0.0, 2.0], Rk45Options::default());
        assert!(matches!(r, Err(Error::Stiffness { .. })), "{r:?}");
    }

    fn xent_setup() -> (
        KernelMatrix,
        KernelMatrix,
        Array2<f64>,
        Array2<f64>,
        Array2<f64>,
    ) {
        let g = random_gram(7, 5);
        let train = KernelMatrix::new(g.slice(ndarray::s![..5, ..5]).to_owned(), 3);
        let cross = KernelMatrix::new(g.slice(ndarray::s![5.., ..5]).to_owned(), 3);
        let labels = crate::dataio::one_hot(&[0, 1, 2, 1, 0], 3);
        let mut rng = StreamKey::new(6).rng();
        let f0 = Array2::from_shape_simple_fn((5, 3), || rng.sample::<f64, _>(StandardNormal));
        let f0t = Array2::from_shape_simple_fn((2, 3), || rng.sample::<f64, _>(StandardNormal));
        (train, cross, labels, f0, f0t)
    }

    fn xent_loss(f: &Array2<f64>, y: &Array2<f64>) -> f64 {
        let p = softmax(f.view());
        -(p.mapv(f64::ln) * y).sum()
    }

    #[test]
    fn xent_loss_is_non_increasing() {
        let (tr, cr, y, f0, f0t) = xent_setup();
        let grid: Vec<f64> = (0..50).map(|i| i as f64 * 2.0).collect();
        let traj = xent_lin_dynamics(
            &tr,
            Some(&cr),
            y.view(),
            f0.view(),
            Some(f0t.view()),
            0.5,
            &grid,
            None,
            Rk45Options::default(),
        )
        .unwrap();
        for w in traj.train.windows(2) {
            assert!(xent_loss(&w[1], &y) <= xent_loss(&w[0], &y) + 1e-9);
        }
        assert_eq!(traj.train[0], f0);
        assert_eq!(traj.test[0], f0t);
        let r0 = crate::linalg::frobenius((&softmax(f0.view()) - &y).view());
        let r1 = crate::linalg::frobenius((&softmax(traj.train[49].view()) - &y).view());
        assert!(r1 < r0);
    }

    #[test]
    fn xent_horizon_truncates() {
        let (tr, cr, y, f0, f0t) = xent_setup();
        let traj = xent_lin_dynamics(
            &tr,
            Some(&cr),
            y.view(),
            f0.view(),
            Some(f0t.view()),
            1.0,
            &[0.0, 5.0, 50.0],
            Some(10.0),
            Rk45Options::default(),
        )
        .unwrap();
        assert_eq!(traj.times, vec![0.0, 5.0]);
        assert_eq!(traj.stopped_at, Some(10.0));
    }

    #[test]
    fn xent_rejects_bad_labels() {
        let (tr, _cr, _y, f0, _f0t) = xent_setup();
        let bad = Array2::from_elem((5, 3), 0.5);
        assert!(xent_lin_dynamics(
            &tr,
            None,
            bad.view(),
            f0.view(),
            None,
            1.0,
            &[0.0, 1.0],
            None,
            Rk45Options::default()
        )
        .is_err());
    }

    #[test]
    fn momentum_initial_state_and_damping() {
        let g = random_gram(4, 9);
        let theta = KernelMatrix::new(g, 1);
        let y = Array2::from_shape_vec((4, 1), vec![1.0, -1.0, 1.0, 0.5]).unwrap();
        let f0 = Array2::zeros((4, 1));
        let eta = 0.01f64;
        let beta = 1.0 - eta.sqrt();
        let steps: Vec<usize> = vec![0, 100, 1000, 20000];
        let traj = momentum_lin_dynamics(
            &theta,
            None,
            y.view(),
            f0.view(),
            None,
            eta,
            beta,
            &steps,
            Rk45Options::default(),
        )
        .unwrap();
        assert_eq!(traj.train[0], f0);
        let last = &traj.train[3];
        assert!(crate::linalg::frobenius((last - &y).view()) < 1e-3);
    }
}
