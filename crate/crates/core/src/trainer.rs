//! Gradient descent and momentum on a finite-width network and on its
//! first-order Taylor expansion around initialization, with drift metrics.
//!
//! Updates use the summed loss over the batch, `θ ← θ − η Σ_i ∇ℓ_i`, and the
//! reported loss is the per-example mean. Squared loss is `½‖f − y‖²`.

use std::io::Write;
use std::path::Path;

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::analytic_kernels::KernelMatrix;
use crate::dataio::Dataset;
use crate::dynamics::{lin_mse_dynamics, DynamicsProblem, TimeMode};
use crate::integrators::softmax;
use crate::linalg::frobenius;
use crate::network::{
    forward, jvp, tangent_kernel, vjp_step, Architecture, ForwardPass, OutputBlocks, ParamMode,
    ParameterSet,
};
use crate::rng::StreamKey;
use crate::{Error, Result};

/// Loss above which a run is declared divergent.
pub const DIVERGENCE_LOSS: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Gd,
    Momentum,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Loss {
    Mse,
    Xent,
}

/// Learning rates of one layer's weight and bias tensors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerRate {
    pub weight: f64,
    pub bias: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    #[serde(default)]
    pub momentum: f64,
    /// `None` trains on the full batch.
    #[serde(default)]
    pub batch_size: Option<usize>,
    pub steps: usize,
    pub loss: Loss,
    #[serde(default = "one")]
    pub record_every: usize,
    #[serde(default)]
    pub seed: u64,
    /// Keep parameter snapshots at steps `0, 1, 2, 4, …` and the last step.
    #[serde(default)]
    pub snapshots: bool,
    /// Per-layer rates overriding `learning_rate`.
    #[serde(default)]
    pub layer_rates: Option<Vec<LayerRate>>,
}

fn one() -> usize {
    1
}

impl OptimizerConfig {
    pub fn gd(learning_rate: f64, steps: usize, loss: Loss) -> Self {
        Self {
            kind: OptimizerKind::Gd,
            learning_rate,
            momentum: 0.0,
            batch_size: None,
            steps,
            loss,
            record_every: 1,
            seed: 0,
            snapshots: false,
            layer_rates: None,
        }
    }

    pub fn validate(&self, arch: &Architecture, data: &Dataset) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidArgument(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if let Some(b) = self.batch_size {
            if b == 0 || b > data.len() {
                return Err(Error::InvalidArgument(format!(
                    "batch size {b} not in 1..={}",
                    data.len()
                )));
            }
        }
        if self.record_every == 0 {
            return Err(Error::InvalidArgument("record_every must be >= 1".into()));
        }
        if let Some(rates) = &self.layer_rates {
            if rates.len() != arch.depth() + 1 {
                return Err(Error::InvalidArgument(format!(
                    "need {} layer rates, got {}",
                    arch.depth() + 1,
                    rates.len()
                )));
            }
        }
        if self.loss == Loss::Xent && data.output_dim() < 2 {
            return Err(Error::InvalidArgument(
                "cross-entropy needs at least two outputs".into(),
            ));
        }
        if data.input_dim() != arch.input_dim || data.output_dim() != arch.output_dim {
            return Err(Error::Shape(
                "dataset does not match the architecture".into(),
            ));
        }
        Ok(())
    }

    fn rate(&self, layer: usize) -> LayerRate {
        match &self.layer_rates {
            Some(r) => r[layer],
            None => LayerRate {
                weight: self.learning_rate,
                bias: self.learning_rate,
            },
        }
    }

    /// Recorded steps: multiples of `record_every` and the final step.
    pub fn record_steps(&self) -> Vec<usize> {
        let mut s: Vec<usize> = (0..=self.steps).step_by(self.record_every).collect();
        if *s.last().expect("nonempty") != self.steps {
            s.push(self.steps);
        }
        s
    }
}

/// Per-layer rates that make an NTK-parameterized run reproduce a
/// standard-parameterized run at rate `η₀/n_max`:
/// `η_w^l = n_l η₀/(n_max σ_w²)`, `η_b = η₀/(n_max σ_b²)`.
pub fn equivalent_ntk_rates(arch: &Architecture, eta0: f64) -> Result<Vec<LayerRate>> {
    if !(arch.bias_var > 0.0) {
        return Err(Error::InvalidArgument(
            "rate equivalence needs bias_var > 0".into(),
        ));
    }
    let n_max = arch.max_fan_in() as f64;
    Ok(arch
        .layer_dims()
        .iter()
        .map(|&(fan_in, _)| LayerRate {
            weight: fan_in as f64 * eta0 / (n_max * arch.weight_var),
            bias: eta0 / (n_max * arch.bias_var),
        })
        .collect())
}

/// Steps `0, 1, 2, 4, 8, …` up to `steps`, plus `steps`.
pub fn geometric_steps(steps: usize) -> Vec<usize> {
    let mut s = vec![0];
    let mut i = 1;
    while i < steps {
        s.push(i);
        i *= 2;
    }
    if steps > 0 {
        s.push(steps);
    }
    s
}

/// Recorded training history.
#[derive(Debug, Clone, Default)]
pub struct Trajectory {
    pub steps: Vec<usize>,
    pub train_outputs: Vec<Array2<f64>>,
    pub test_outputs: Vec<Array2<f64>>,
    pub train_loss: Vec<f64>,
    pub test_loss: Vec<f64>,
    pub train_accuracy: Vec<f64>,
    pub test_accuracy: Vec<f64>,
    pub snapshots: Vec<(usize, ParameterSet)>,
}

fn mean_loss(loss: Loss, f: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>) -> f64 {
    if f.nrows() == 0 {
        return 0.0;
    }
    let total = match loss {
        Loss::Mse => 0.5 * (&f - &y).mapv(|v| v * v).sum(),
        Loss::Xent => {
            let mut s = 0.0;
            for (fr, yr) in f.rows().into_iter().zip(y.rows()) {
                let m = fr.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = m + fr.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
                s += yr
                    .iter()
                    .zip(fr.iter())
                    .map(|(yi, fi)| yi * (lse - fi))
                    .sum::<f64>();
            }
            s
        }
    };
    total / f.nrows() as f64
}

fn loss_grad(loss: Loss, f: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>) -> Array2<f64> {
    match loss {
        Loss::Mse => &f - &y,
        Loss::Xent => &softmax(f) - &y,
    }
}

/// Sign agreement for one output column, argmax agreement otherwise.
pub fn accuracy(f: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>) -> f64 {
    if f.nrows() == 0 {
        return 0.0;
    }
    let argmax = |r: ndarray::ArrayView1<'_, f64>| {
        r.iter()
            .enumerate()
            .fold(
                (0, f64::NEG_INFINITY),
                |b, (i, &v)| if v > b.1 { (i, v) } else { b },
            )
            .0
    };
    let hits = f
        .rows()
        .into_iter()
        .zip(y.rows())
        .filter(|(fr, yr)| {
            if fr.len() == 1 {
                (fr[0] >= 0.0) == (yr[0] >= 0.0)
            } else {
                argmax(*fr) == argmax(*yr)
            }
        })
        .count();
    hits as f64 / f.nrows() as f64
}

impl Trajectory {
    fn push(
        &mut self,
        step: usize,
        loss: Loss,
        train: Array2<f64>,
        test: Array2<f64>,
        data: &Dataset,
        test_data: &Dataset,
    ) {
        self.steps.push(step);
        self.train_loss
            .push(mean_loss(loss, train.view(), data.labels.view()));
        self.test_loss
            .push(mean_loss(loss, test.view(), test_data.labels.view()));
        self.train_accuracy
            .push(accuracy(train.view(), data.labels.view()));
        self.test_accuracy
            .push(accuracy(test.view(), test_data.labels.view()));
        self.train_outputs.push(train);
        self.test_outputs.push(test);
    }

    /// Wraps externally computed outputs (e.g. closed-form dynamics).
    pub fn from_outputs(
        steps: Vec<usize>,
        train_outputs: Vec<Array2<f64>>,
        test_outputs: Vec<Array2<f64>>,
        loss: Loss,
        data: &Dataset,
        test_data: &Dataset,
    ) -> Trajectory {
        let mut t = Trajectory::default();
        for ((s, a), b) in steps.into_iter().zip(train_outputs).zip(test_outputs) {
            t.push(s, loss, a, b, data, test_data);
        }
        t
    }

    /// One row per recorded step:
    /// `step,train_loss,test_loss,train_accuracy,test_accuracy`.
    pub fn write_metrics_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record([
            "step",
            "train_loss",
            "test_loss",
            "train_accuracy",
            "test_accuracy",
        ])?;
        for i in 0..self.steps.len() {
            w.write_record(&[
                self.steps[i].to_string(),
                self.train_loss[i].to_string(),
                self.test_loss[i].to_string(),
                self.train_accuracy[i].to_string(),
                self.test_accuracy[i].to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Long format `step,split,example,output,value`.
    pub fn write_outputs_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "step,split,example,output,value")?;
        for (i, &step) in self.steps.iter().enumerate() {
            for (split, m) in [
                ("train", &self.train_outputs[i]),
                ("test", &self.test_outputs[i]),
            ] {
                for ((e, c), v) in m.indexed_iter() {
                    writeln!(w, "{step},{split},{e},{c},{v}")?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn check_run(
    arch: &Architecture,
    params0: &ParameterSet,
    data: &Dataset,
    test: &Dataset,
    opt: &OptimizerConfig,
) -> Result<()> {
    arch.validate()?;
    opt.validate(arch, data)?;
    if test.input_dim() != arch.input_dim || test.output_dim() != arch.output_dim {
        return Err(Error::Shape(
            "test set does not match the architecture".into(),
        ));
    }
    if params0.mode != arch.param_mode || params0.num_params() != arch.num_params() {
        return Err(Error::Shape(
            "initial parameters do not match the architecture".into(),
        ));
    }
    if opt.layer_rates.is_some() && arch.param_mode != ParamMode::Ntk {
        return Err(Error::InvalidArgument(
            "per-layer rates are only supported in ntk mode".into(),
        ));
    }
    if opt.loss == Loss::Xent
        && !data
            .labels
            .rows()
            .into_iter()
            .all(|r| r.iter().all(|&v| v == 0.0 || v == 1.0) && r.sum() == 1.0)
    {
        return Err(Error::InvalidArgument(
            "cross-entropy needs one-hot labels".into(),
        ));
    }
    Ok(())
}

/// Index batches of one epoch: seeded shuffle, sorted within each batch,
/// remainder dropped. The full batch consumes no randomness.
struct Batcher {
    n: usize,
    size: Option<usize>,
    key: StreamKey,
    queue: Vec<Vec<usize>>,
    epoch: u64,
}

impl Batcher {
    fn new(n: usize, size: Option<usize>, seed: u64) -> Self {
        Self {
            n,
            size,
            key: StreamKey::new(seed).child(0xba7c),
            queue: Vec::new(),
            epoch: 0,
        }
    }

    fn next(&mut self) -> Option<Vec<usize>> {
        let size = self.size?;
        if self.queue.is_empty() {
            let mut idx: Vec<usize> = (0..self.n).collect();
            idx.shuffle(&mut self.key.child(self.epoch).rng());
            self.epoch += 1;
            self.queue = idx
                .chunks_exact(size)
                .rev()
                .map(|c| {
                    let mut c = c.to_vec();
                    c.sort_unstable();
                    c
                })
                .collect();
        }
        self.queue.pop()
    }
}

fn check_divergence(
    step: usize,
    loss: Loss,
    f: ArrayView2<'_, f64>,
    y: ArrayView2<'_, f64>,
) -> Result<()> {
    let l = mean_loss(loss, f, y) * f.nrows() as f64;
    if !l.is_finite() || l > DIVERGENCE_LOSS {
        return Err(Error::Divergence { step, loss: l });
    }
    Ok(())
}

/// Trains the network itself, recomputing the gradient at every step.
pub fn train_network(
    arch: &Architecture,
    params0: &ParameterSet,
    data: &Dataset,
    test: &Dataset,
    opt: &OptimizerConfig,
) -> Result<Trajectory> {
    check_run(arch, params0, data, test, opt)?;
    let record = opt.record_steps();
    let snaps = geometric_steps(opt.steps);
    let mut params = params0.clone();
    let mut velocity = (opt.kind == OptimizerKind::Momentum).then(|| params0.zeros_like());
    let mut batcher = Batcher::new(data.len(), opt.batch_size, opt.seed);
    let mut traj = Trajectory::default();
    let mut next_record = 0;
    for step in 0..=opt.steps {
        let recording = next_record < record.len() && record[next_record] == step;
        if opt.snapshots && snaps.binary_search(&step).is_ok() {
            traj.snapshots.push((step, params.clone()));
        }
        let batch = if step < opt.steps {
            batcher.next()
        } else {
            None
        };
        let full_fp = if recording || (step < opt.steps && batch.is_none()) {
            Some(forward(arch, &params, data.inputs.view())?)
        } else {
            None
        };
        if recording {
            let f = full_fp.as_ref().expect("computed").output().clone();
            let ft = forward(arch, &params, test.inputs.view())?.into_output();
            traj.push(step, opt.loss, f, ft, data, test);
            next_record += 1;
        }
        if step == opt.steps {
            break;
        }
        let (fp, labels) = match &batch {
            Some(idx) => (
                forward(arch, &params, data.inputs.select(Axis(0), idx).view())?,
                data.labels.select(Axis(0), idx),
            ),
            None => (full_fp.expect("computed"), data.labels.clone()),
        };
        check_divergence(step, opt.loss, fp.output().view(), labels.view())?;
        let g = loss_grad(opt.loss, fp.output().view(), labels.view());
        let rate = |l| {
            let r = opt.rate(l);
            (r.weight, r.bias)
        };
        let v = velocity.as_mut().map(|v| (v, opt.momentum));
        vjp_step(arch, None, &mut params, &fp, g.view(), rate, v);
    }
    Ok(traj)
}

/// Trains `f₀ + J₀ ω` directly in `ω`, with the Jacobian frozen at `θ₀`.
/// Outputs are Jacobian-vector products against the cached initial forward
/// pass; no Jacobian matrix is formed.
pub fn train_linearized(
    arch: &Architecture,
    params0: &ParameterSet,
    data: &Dataset,
    test: &Dataset,
    opt: &OptimizerConfig,
) -> Result<Trajectory> {
    check_run(arch, params0, data, test, opt)?;
    let fp0 = forward(arch, params0, data.inputs.view())?;
    let fp0_test = forward(arch, params0, test.inputs.view())?;
    let lin = |fp: &ForwardPass, omega: &ParameterSet| fp.output() + &jvp(arch, params0, fp, omega);
    let record = opt.record_steps();
    let snaps = geometric_steps(opt.steps);
    let mut omega = params0.zeros_like();
    let mut velocity = (opt.kind == OptimizerKind::Momentum).then(|| params0.zeros_like());
    let mut batcher = Batcher::new(data.len(), opt.batch_size, opt.seed);
    let mut traj = Trajectory::default();
    let mut next_record = 0;
    for step in 0..=opt.steps {
        let recording = next_record < record.len() && record[next_record] == step;
        if opt.snapshots && snaps.binary_search(&step).is_ok() {
            let mut p = params0.clone();
            p.scaled_add(1.0, &omega);
            traj.snapshots.push((step, p));
        }
        let batch = if step < opt.steps {
            batcher.next()
        } else {
            None
        };
        let full = if recording || (step < opt.steps && batch.is_none()) {
            Some(lin(&fp0, &omega))
        } else {
            None
        };
        if recording {
            traj.push(
                step,
                opt.loss,
                full.clone().expect("computed"),
                lin(&fp0_test, &omega),
                data,
                test,
            );
            next_record += 1;
        }
        if step == opt.steps {
            break;
        }
        let (fp_batch, f, labels) = match &batch {
            Some(idx) => {
                let fpb = fp0.select(idx);
                let f = lin(&fpb, &omega);
                (Some(fpb), f, data.labels.select(Axis(0), idx))
            }
            None => (None, full.expect("computed"), data.labels.clone()),
        };
        check_divergence(step, opt.loss, f.view(), labels.view())?;
        let g = loss_grad(opt.loss, f.view(), labels.view());
        let rate = |l| {
            let r = opt.rate(l);
            (r.weight, r.bias)
        };
        let v = velocity.as_mut().map(|v| (v, opt.momentum));
        let fp = fp_batch.as_ref().unwrap_or(&fp0);
        vjp_step(arch, Some(params0), &mut omega, fp, g.view(), rate, v);
    }
    Ok(traj)
}

/// Closed-form discrete-time linearized MSE trajectory on the record grid of
/// `opt`, using the empirical tangent kernel at `params0`.
pub fn closed_form_trajectory(
    arch: &Architecture,
    params0: &ParameterSet,
    data: &Dataset,
    test: &Dataset,
    opt: &OptimizerConfig,
) -> Result<Trajectory> {
    check_run(arch, params0, data, test, opt)?;
    if opt.loss != Loss::Mse
        || opt.kind != OptimizerKind::Gd
        || opt.batch_size.is_some()
        || opt.layer_rates.is_some()
    {
        return Err(Error::InvalidArgument(
            "closed form needs full-batch gradient descent on squared loss".into(),
        ));
    }
    let fp = forward(arch, params0, data.inputs.view())?;
    let fpt = forward(arch, params0, test.inputs.view())?;
    let theta =
        crate::network::tangent_kernel_from_passes(arch, params0, &fp, &fp, OutputBlocks::Full)
            .full;
    let cross =
        crate::network::tangent_kernel_from_passes(arch, params0, &fpt, &fp, OutputBlocks::Full)
            .full;
    let problem = DynamicsProblem::new(
        KernelMatrix::new(theta, 1),
        data.labels.clone(),
        opt.learning_rate,
        TimeMode::Discrete,
    )?
    .with_test(KernelMatrix::new(cross, 1))?
    .with_initial(fp.into_output(), Some(fpt.into_output()))?;
    let steps = opt.record_steps();
    let times: Vec<f64> = steps.iter().map(|&s| s as f64).collect();
    let states = lin_mse_dynamics(&problem, &times, None)?;
    let (train, test_out): (Vec<_>, Vec<_>) = states
        .into_iter()
        .map(|s| (s.train, s.test.expect("test requested")))
        .unzip();
    Ok(Trajectory::from_outputs(
        steps, train, test_out, opt.loss, data, test,
    ))
}

/// Drift observables at one snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftReport {
    pub step: usize,
    /// `‖W_t − W₀‖_F / ‖W₀‖_F` per layer.
    pub weight_change: Vec<f64>,
    /// `‖θ_t − θ₀‖₂ / √n` with `n` the widest hidden layer.
    pub param_distance: f64,
    pub ntk_change: f64,
    pub ntk_change_relative: f64,
    /// Relative change of the readout-layer NNGP kernel [`readout_nngp`].
    pub nngp_change_relative: f64,
}

/// Empirical NNGP kernel seen by the readout layer,
/// `σ_w²/n_L · x^L x^Lᵀ + σ_b²`: the output covariance over fresh readout
/// draws given the current hidden features.
pub fn readout_nngp(
    arch: &Architecture,
    params: &ParameterSet,
    x: ArrayView2<'_, f64>,
) -> Result<Array2<f64>> {
    let fp = forward(arch, params, x)?;
    let feats = fp.postacts.last().expect("input is always present");
    let scale = arch.weight_var / feats.ncols() as f64;
    Ok(feats.dot(&feats.t()).mapv(|v| scale * v + arch.bias_var))
}

/// Recomputes the empirical kernels at every snapshot and measures their
/// change from the first (step 0) snapshot.
pub fn drift_metrics(
    arch: &Architecture,
    traj: &Trajectory,
    data: &Dataset,
) -> Result<Vec<DriftReport>> {
    let (s0, p0) = traj
        .snapshots
        .first()
        .ok_or_else(|| Error::InvalidArgument("trajectory has no snapshots".into()))?;
    if *s0 != 0 {
        return Err(Error::InvalidArgument(
            "first snapshot must be at step 0".into(),
        ));
    }
    let x = data.inputs.view();
    let theta0 = tangent_kernel(arch, p0, x, x, OutputBlocks::Full)?.full;
    let k0 = readout_nngp(arch, p0, x)?;
    let (nt0, nk0) = (frobenius(theta0.view()), frobenius(k0.view()));
    let width = (arch.characteristic_width() as f64).sqrt();
    traj.snapshots
        .iter()
        .map(|(step, p)| {
            let theta = tangent_kernel(arch, p, x, x, OutputBlocks::Full)?.full;
            let k = readout_nngp(arch, p, x)?;
            let d = p.difference(p0);
            let weight_change = d
                .layers
                .iter()
                .zip(&p0.layers)
                .map(|(dl, l0)| {
                    let n0 = frobenius(l0.weight.view());
                    if n0 > 0.0 {
                        frobenius(dl.weight.view()) / n0
                    } else {
                        0.0
                    }
                })
                .collect();
            let ntk_change = frobenius((&theta - &theta0).view());
            Ok(DriftReport {
                step: *step,
                weight_change,
                param_distance: d.squared_norm().sqrt() / width,
                ntk_change,
                ntk_change_relative: if nt0 > 0.0 { ntk_change / nt0 } else { 0.0 },
                nngp_change_relative: if nk0 > 0.0 {
                    frobenius((&k - &k0).view()) / nk0
                } else {
                    0.0
                },
            })
        })
        .collect()
}

/// Writes drift reports as CSV:
/// `step,param_distance,ntk_change,ntk_change_relative,nngp_change_relative,weight_change_1..`.
pub fn write_drift_csv(reports: &[DriftReport], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let layers = reports.first().map_or(0, |r| r.weight_change.len());
    let mut header: Vec<String> = [
        "step",
        "param_distance",
        "ntk_change",
        "ntk_change_relative",
        "nngp_change_relative",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    header.extend((1..=layers).map(|l| format!("weight_change_{l}")));
    w.write_record(&header)?;
    for r in reports {
        let mut row = vec![
            r.step.to_string(),
            r.param_distance.to_string(),
            r.ntk_change.to_string(),
            r.ntk_change_relative.to_string(),
            r.nngp_change_relative.to_string(),
        ];
        row.extend(r.weight_change.iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Output discrepancy between two trajectories on the same record grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryComparison {
    pub steps: Vec<usize>,
    pub sup_train: f64,
    pub sup_test: f64,
    pub rmse_train: Vec<f64>,
    pub rmse_test: Vec<f64>,
}

fn max_abs_rmse(a: &Array2<f64>, b: &Array2<f64>) -> (f64, f64) {
    if a.is_empty() {
        return (0.0, 0.0);
    }
    let d = a - b;
    let m = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    (m, (d.mapv(|v| v * v).sum() / d.len() as f64).sqrt())
}

pub fn compare_trajectories(a: &Trajectory, b: &Trajectory) -> Result<TrajectoryComparison> {
    if a.steps != b.steps {
        return Err(Error::Grid(format!(
            "{} vs {} recorded steps",
            a.steps.len(),
            b.steps.len()
        )));
    }
    let mut out = TrajectoryComparison {
        steps: a.steps.clone(),
        sup_train: 0.0,
        sup_test: 0.0,
        rmse_train: vec![],
        rmse_test: vec![],
    };
    for i in 0..a.steps.len() {
        if a.train_outputs[i].dim() != b.train_outputs[i].dim()
            || a.test_outputs[i].dim() != b.test_outputs[i].dim()
        {
            return Err(Error::Shape("trajectory outputs differ in shape".into()));
        }
        let (m, r) = max_abs_rmse(&a.train_outputs[i], &b.train_outputs[i]);
        out.sup_train = out.sup_train.max(m);
        out.rmse_train.push(r);
        let (m, r) = max_abs_rmse(&a.test_outputs[i], &b.test_outputs[i]);
        out.sup_test = out.sup_test.max(m);
        out.rmse_test.push(r);
    }
    Ok(out)
}
