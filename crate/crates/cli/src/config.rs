use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context};
use serde::{Deserialize, Serialize};
use tangentlab::dataio::{
    centered_one_hot, load_csv, one_hot, synth_gaussian, synth_gaussian_classes,
};
use tangentlab::network::{Activation, Architecture, ParamMode};
use tangentlab::rng::StreamKey;
use tangentlab::trainer::{Loss, OptimizerKind};
use tangentlab::Dataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    KernelConvergence,
    DriftSweep,
    TrainCompare,
    ErrorVsWidth,
    PredictiveDistribution,
    ReadoutGp,
    XentCompare,
    MomentumCompare,
    Kernels,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::KernelConvergence => "kernel-convergence",
            Command::DriftSweep => "drift-sweep",
            Command::TrainCompare => "train-compare",
            Command::ErrorVsWidth => "error-vs-width",
            Command::PredictiveDistribution => "predictive-distribution",
            Command::ReadoutGp => "readout-gp",
            Command::XentCompare => "xent-compare",
            Command::MomentumCompare => "momentum-compare",
            Command::Kernels => "kernels",
        }
    }
}

/// Where the data comes from. Synthetic inputs are standard normal; with
/// `classes = 0` labels are fair ±1 in one column, otherwise class indices
/// encoded one-hot (cross-entropy) or centered one-hot (squared loss).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSpec {
    Synthetic {
        input_dim: usize,
        train: usize,
        test: usize,
        #[serde(default)]
        classes: usize,
    },
    /// The first `train` rows train, the next `test` rows test.
    Csv {
        path: PathBuf,
        input_dim: usize,
        output_dim: usize,
        #[serde(default)]
        normalize: bool,
        train: usize,
        test: usize,
    },
}

impl DataSpec {
    pub fn set_train_size(&mut self, n: usize) {
        match self {
            DataSpec::Synthetic { train, .. } | DataSpec::Csv { train, .. } => *train = n,
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            DataSpec::Synthetic { classes, .. } => (*classes).max(1),
            DataSpec::Csv { output_dim, .. } => *output_dim,
        }
    }

    /// Loads or draws the train and test sets.
    pub fn load(&self, seed: u64, loss: Loss) -> anyhow::Result<(Dataset, Dataset)> {
        let (all, n_train) = match self {
            DataSpec::Synthetic {
                input_dim,
                train,
                test,
                classes,
            } => {
                ensure!(*train >= 1, "data.train must be positive");
                let count = train + test;
                let d = match classes {
                    0 => synth_gaussian(*input_dim, count, seed)?,
                    1 => bail!("data.classes must be 0 (binary ±1) or at least 2"),
                    c => {
                        let (x, cls) = synth_gaussian_classes(*input_dim, count, *c, seed)?;
                        let y = match loss {
                            Loss::Xent => one_hot(&cls, *c),
                            Loss::Mse => centered_one_hot(&cls, *c),
                        };
                        Dataset::new(x, y)?
                    }
                };
                (d, *train)
            }
            DataSpec::Csv {
                path,
                input_dim,
                output_dim,
                normalize,
                train,
                test,
            } => {
                let d = load_csv(path, *input_dim, *output_dim, *normalize)
                    .with_context(|| format!("loading {}", path.display()))?;
                ensure!(*train >= 1, "data.train must be positive");
                ensure!(
                    d.len() >= train + test,
                    "{} has {} rows, need {}",
                    path.display(),
                    d.len(),
                    train + test
                );
                (d, *train)
            }
        };
        let train: Vec<usize> = (0..n_train).collect();
        let test: Vec<usize> = (n_train..all.len()).collect();
        Ok((all.select(&train), all.select(&test)))
    }
}

/// Optimizer settings. Exactly one of `learning_rate` and `eta_factor` is
/// given; `eta_factor` scales the critical rate of the analytic tangent
/// kernel on the training inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerBlock {
    pub kind: OptimizerKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta_factor: Option<f64>,
    #[serde(default)]
    pub momentum: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    pub steps: usize,
    pub loss: Loss,
    #[serde(default = "one")]
    pub record_every: usize,
}

fn one() -> usize {
    1
}

impl OptimizerBlock {
    fn gd(eta_factor: f64, steps: usize, record_every: usize) -> Self {
        Self {
            kind: OptimizerKind::Gd,
            learning_rate: None,
            eta_factor: Some(eta_factor),
            momentum: 0.0,
            batch_size: None,
            steps,
            loss: Loss::Mse,
            record_every,
        }
    }
}

/// One experiment. Fields that a subcommand does not use must be absent.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command: Option<Command>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub architecture: Option<Architecture>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimizer: Option<OptimizerBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<DataSpec>,
    /// Hidden-width ladder.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub widths: Option<Vec<usize>>,
    /// Monte Carlo sample counts.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<Vec<usize>>,
    /// Readout width for kernel estimation; absent means equal to the hidden width.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub readout_width: Option<usize>,
    /// Hidden-layer counts.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depths: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset_sizes: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ensemble_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_alphas: Option<usize>,
    /// Continuous training times; `null` in the list means `t = ∞`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub times: Option<Vec<Option<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rtol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub atol: Option<f64>,
}

/// Command-line overrides; flags win over the config file.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct Overrides {
    /// Experiment seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Set every hidden layer to this width.
    #[arg(long)]
    pub width: Option<usize>,
    /// Comma-separated hidden-width ladder.
    #[arg(long, value_delimiter = ',')]
    pub widths: Option<Vec<usize>>,
    /// Comma-separated Monte Carlo sample counts.
    #[arg(long, value_delimiter = ',')]
    pub samples: Option<Vec<usize>>,
    /// Number of training steps.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Absolute learning rate (clears eta_factor).
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Learning rate as a multiple of the critical rate (clears learning_rate).
    #[arg(long)]
    pub eta_factor: Option<f64>,
    /// Number of training points.
    #[arg(long)]
    pub train_size: Option<usize>,
    /// Number of networks in the ensemble.
    #[arg(long)]
    pub ensemble_size: Option<usize>,
}

fn arch(
    input_dim: usize,
    hidden: Vec<usize>,
    output_dim: usize,
    activation: Activation,
    w: f64,
    b: f64,
) -> Architecture {
    Architecture {
        input_dim,
        hidden_widths: hidden,
        output_dim,
        activation,
        weight_var: w,
        bias_var: b,
        param_mode: ParamMode::Ntk,
    }
}

fn synthetic(input_dim: usize, train: usize, test: usize, classes: usize) -> Option<DataSpec> {
    Some(DataSpec::Synthetic {
        input_dim,
        train,
        test,
        classes,
    })
}

/// Desk-scale defaults of each subcommand.
pub fn defaults(cmd: Command) -> ExperimentConfig {
    let base = ExperimentConfig {
        command: Some(cmd),
        ..Default::default()
    };
    match cmd {
        Command::KernelConvergence => ExperimentConfig {
            architecture: Some(arch(4, vec![64], 1, Activation::Relu, 2.0, 0.1)),
            data: synthetic(4, 8, 0, 0),
            widths: Some(vec![64, 256, 1024, 4096]),
            samples: Some(vec![100]),
            ..base
        },
        Command::DriftSweep => ExperimentConfig {
            architecture: Some(arch(8, vec![128; 3], 1, Activation::Relu, 2.0, 0.1)),
            optimizer: Some(OptimizerBlock::gd(0.5, 1024, 16)),
            data: synthetic(8, 32, 0, 0),
            widths: Some(vec![128, 512, 2048]),
            ..base
        },
        Command::TrainCompare => ExperimentConfig {
            architecture: Some(arch(8, vec![512; 5], 1, Activation::Relu, 2.0, 0.1)),
            optimizer: Some(OptimizerBlock::gd(0.5, 1024, 16)),
            data: synthetic(8, 64, 64, 0),
            ..base
        },
        Command::ErrorVsWidth => ExperimentConfig {
            architecture: Some(arch(8, vec![128], 1, Activation::Relu, 2.0, 0.1)),
            optimizer: Some(OptimizerBlock::gd(0.5, 1024, 1024)),
            data: synthetic(8, 32, 32, 0),
            widths: Some(vec![64, 256, 1024]),
            depths: Some(vec![1, 3]),
            dataset_sizes: Some(vec![32, 128]),
            ..base
        },
        Command::PredictiveDistribution => ExperimentConfig {
            architecture: Some(arch(8, vec![1024; 3], 1, Activation::Tanh, 1.5, 0.0)),
            optimizer: Some(OptimizerBlock::gd(0.5, 1000, 100)),
            data: synthetic(8, 32, 0, 0),
            ensemble_size: Some(100),
            num_alphas: Some(10),
            ..base
        },
        Command::ReadoutGp => ExperimentConfig {
            architecture: Some(arch(8, vec![512; 2], 1, Activation::Erf, 1.5, 0.05)),
            optimizer: Some(OptimizerBlock {
                steps: 0,
                ..OptimizerBlock::gd(0.5, 0, 1)
            }),
            data: synthetic(8, 16, 8, 0),
            times: Some(vec![
                Some(0.0),
                Some(1.0),
                Some(10.0),
                Some(100.0),
                Some(1000.0),
                None,
            ]),
            ..base
        },
        Command::XentCompare => ExperimentConfig {
            architecture: Some(arch(8, vec![256; 3], 3, Activation::Tanh, 1.5, 0.0)),
            optimizer: Some(OptimizerBlock {
                learning_rate: Some(1e-3),
                eta_factor: None,
                loss: Loss::Xent,
                ..OptimizerBlock::gd(0.0, 2000, 20)
            }),
            data: synthetic(8, 24, 8, 3),
            rtol: Some(1e-8),
            atol: Some(1e-10),
            ..base
        },
        Command::MomentumCompare => ExperimentConfig {
            architecture: Some(arch(8, vec![256; 3], 1, Activation::Tanh, 1.5, 0.0)),
            optimizer: Some(OptimizerBlock {
                kind: OptimizerKind::Momentum,
                learning_rate: Some(1e-3),
                eta_factor: None,
                momentum: 0.9,
                ..OptimizerBlock::gd(0.0, 2000, 20)
            }),
            data: synthetic(8, 16, 8, 0),
            rtol: Some(1e-8),
            atol: Some(1e-10),
            ..base
        },
        Command::Kernels => ExperimentConfig {
            architecture: Some(arch(4, vec![512; 2], 1, Activation::Relu, 2.0, 0.1)),
            data: synthetic(4, 8, 4, 0),
            ..base
        },
    }
}

/// Fields each subcommand reads, besides `command`, `seed` and `out`.
fn used_fields(cmd: Command) -> &'static [&'static str] {
    match cmd {
        Command::KernelConvergence => {
            &["architecture", "data", "widths", "samples", "readout_width"]
        }
        Command::DriftSweep => &["architecture", "optimizer", "data", "widths"],
        Command::TrainCompare => &["architecture", "optimizer", "data"],
        Command::ErrorVsWidth => &[
            "architecture",
            "optimizer",
            "data",
            "widths",
            "depths",
            "dataset_sizes",
        ],
        Command::PredictiveDistribution => &[
            "architecture",
            "optimizer",
            "data",
            "ensemble_size",
            "num_alphas",
        ],
        Command::ReadoutGp => &["architecture", "optimizer", "data", "times"],
        Command::XentCompare | Command::MomentumCompare => {
            &["architecture", "optimizer", "data", "rtol", "atol"]
        }
        Command::Kernels => &["architecture", "data"],
    }
}

impl ExperimentConfig {
    pub fn read(path: &Path) -> anyhow::Result<Self> {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    fn present_fields(&self) -> Vec<&'static str> {
        let mut v = Vec::new();
        let mut add = |name, set: bool| {
            if set {
                v.push(name)
            }
        };
        add("architecture", self.architecture.is_some());
        add("optimizer", self.optimizer.is_some());
        add("data", self.data.is_some());
        add("widths", self.widths.is_some());
        add("samples", self.samples.is_some());
        add("readout_width", self.readout_width.is_some());
        add("depths", self.depths.is_some());
        add("dataset_sizes", self.dataset_sizes.is_some());
        add("ensemble_size", self.ensemble_size.is_some());
        add("num_alphas", self.num_alphas.is_some());
        add("times", self.times.is_some());
        add("rtol", self.rtol.is_some());
        add("atol", self.atol.is_some());
        v
    }

    /// Layers the file config over the subcommand defaults, then the flags.
    pub fn resolve(
        cmd: Command,
        file: Option<ExperimentConfig>,
        flags: &Overrides,
    ) -> anyhow::Result<Self> {
        let mut c = defaults(cmd);
        if let Some(f) = file {
            if let Some(fc) = f.command {
                ensure!(
                    fc == cmd,
                    "config is for `{}`, not `{}`",
                    fc.name(),
                    cmd.name()
                );
            }
            let used = used_fields(cmd);
            if let Some(bad) = f.present_fields().into_iter().find(|n| !used.contains(n)) {
                bail!("`{bad}` is not used by `{}`", cmd.name());
            }
            c.seed = f.seed;
            c.out = f.out.or(c.out);
            macro_rules! take {
                ($($field:ident),*) => { $( if f.$field.is_some() { c.$field = f.$field; } )* };
            }
            take!(
                architecture,
                optimizer,
                data,
                widths,
                samples,
                readout_width,
                depths,
                dataset_sizes,
                ensemble_size,
                num_alphas,
                times,
                rtol,
                atol
            );
        }
        if let Some(s) = flags.seed {
            c.seed = s;
        }
        if let Some(o) = &flags.out {
            c.out = Some(o.clone());
        }
        let need = |name: &str, set: bool| -> anyhow::Result<()> {
            ensure!(set, "--{name} is not used by `{}`", cmd.name());
            Ok(())
        };
        if let Some(w) = flags.width {
            let a = c
                .architecture
                .as_mut()
                .expect("every command has an architecture");
            a.hidden_widths.iter_mut().for_each(|h| *h = w);
        }
        if let Some(w) = &flags.widths {
            need("widths", c.widths.is_some())?;
            c.widths = Some(w.clone());
        }
        if let Some(s) = &flags.samples {
            need("samples", c.samples.is_some())?;
            c.samples = Some(s.clone());
        }
        if let Some(e) = flags.ensemble_size {
            need("ensemble-size", c.ensemble_size.is_some())?;
            c.ensemble_size = Some(e);
        }
        if let Some(n) = flags.train_size {
            c.data
                .as_mut()
                .expect("every command has data")
                .set_train_size(n);
        }
        if flags.steps.is_some() || flags.learning_rate.is_some() || flags.eta_factor.is_some() {
            need("steps", c.optimizer.is_some())?;
            let o = c.optimizer.as_mut().expect("checked");
            if let Some(s) = flags.steps {
                o.steps = s;
            }
            if let Some(lr) = flags.learning_rate {
                o.learning_rate = Some(lr);
                o.eta_factor = None;
            }
            if let Some(f) = flags.eta_factor {
                o.eta_factor = Some(f);
                o.learning_rate = None;
            }
        }
        c.validate(cmd)?;
        Ok(c)
    }

    /// The copy written next to the results: complete, and free of the
    /// output location so that it hashes the same wherever it runs.
    pub fn resolved_copy(&self) -> ExperimentConfig {
        ExperimentConfig {
            out: None,
            ..self.clone()
        }
    }

    pub fn validate(&self, cmd: Command) -> anyhow::Result<()> {
        let a = self.architecture.as_ref().context("missing architecture")?;
        a.validate()?;
        let d = self.data.as_ref().context("missing data")?;
        match d {
            DataSpec::Synthetic { input_dim, .. } | DataSpec::Csv { input_dim, .. } => {
                ensure!(
                    *input_dim == a.input_dim,
                    "data.input_dim {} != architecture.input_dim {}",
                    input_dim,
                    a.input_dim
                )
            }
        }
        ensure!(
            d.output_dim() == a.output_dim,
            "data provides {} label columns but architecture.output_dim is {}",
            d.output_dim(),
            a.output_dim
        );
        if let Some(o) = &self.optimizer {
            ensure!(
                o.learning_rate.is_some() != o.eta_factor.is_some(),
                "optimizer needs exactly one of learning_rate and eta_factor"
            );
            for v in [o.learning_rate, o.eta_factor].into_iter().flatten() {
                ensure!(v > 0.0 && v.is_finite(), "learning rates must be positive");
            }
            ensure!(
                o.record_every >= 1,
                "optimizer.record_every must be positive"
            );
        }
        for (name, list) in [
            ("widths", &self.widths),
            ("samples", &self.samples),
            ("depths", &self.depths),
            ("dataset_sizes", &self.dataset_sizes),
        ] {
            if let Some(l) = list {
                ensure!(
                    !l.is_empty() && l.iter().all(|&v| v > 0),
                    "{name} must be a nonempty list of positive integers"
                );
            }
        }
        if let Some(w) = &self.widths {
            ensure!(
                w.windows(2).all(|p| p[0] < p[1]),
                "widths must be strictly ascending"
            );
        }
        match cmd {
            Command::PredictiveDistribution => {
                ensure!(
                    self.ensemble_size.unwrap_or(0) >= 1,
                    "ensemble_size must be positive"
                );
                ensure!(
                    self.num_alphas.unwrap_or(0) >= 2,
                    "num_alphas must be at least 2"
                );
                ensure!(
                    a.output_dim == 1,
                    "predictive-distribution needs a single output"
                );
            }
            Command::ReadoutGp => {
                let t = self.times.as_ref().context("missing times")?;
                ensure!(
                    t.iter().flatten().all(|v| *v >= 0.0 && v.is_finite()),
                    "times must be finite and nonnegative (null for infinity)"
                );
            }
            Command::XentCompare => {
                let o = self.optimizer.as_ref().context("missing optimizer")?;
                ensure!(
                    o.loss == Loss::Xent && o.kind == OptimizerKind::Gd,
                    "xent-compare needs gd with xent loss"
                );
            }
            Command::MomentumCompare => {
                let o = self.optimizer.as_ref().context("missing optimizer")?;
                ensure!(
                    o.loss == Loss::Mse && o.kind == OptimizerKind::Momentum,
                    "momentum-compare needs momentum with mse loss"
                );
            }
            _ => {}
        }
        if matches!(cmd, Command::XentCompare | Command::MomentumCompare) {
            let o = self.optimizer.as_ref().expect("checked");
            ensure!(
                o.batch_size.is_none(),
                "{} compares full-batch dynamics",
                cmd.name()
            );
        }
        Ok(())
    }
}

/// Independent seeds for the parts of an experiment.
pub struct Seeds(StreamKey);

impl Seeds {
    pub fn new(seed: u64) -> Self {
        Seeds(StreamKey::new(seed))
    }
    pub fn data(&self) -> u64 {
        self.0.child(1).value()
    }
    pub fn init(&self, member: u64) -> u64 {
        self.0.child(2).child(member).value()
    }
    pub fn batches(&self) -> u64 {
        self.0.child(3).value()
    }
    pub fn monte_carlo(&self) -> u64 {
        self.0.child(4).value()
    }
}
