use anyhow::{bail, Context};
use ndarray::Array2;
use rayon::prelude::*;
use tangentlab::analytic_kernels::{kernel_blocks, ntk_kernel, KernelMatrix};
use tangentlab::dataio::{alpha_grid, interpolate_line};
use tangentlab::dynamics::{
    eta_critical, nngp_posterior, ntk_gp_moments, readout_gp_moments, DynamicsProblem, TimeMode,
};
use tangentlab::empirical_kernels::{convergence_sweep, ArchFamily, ReadoutWidth};
use tangentlab::integrators::{momentum_lin_dynamics, xent_lin_dynamics, Rk45Options};
use tangentlab::linalg::DEFAULT_JITTER;
use tangentlab::network::{forward, init_params, tangent_kernel, Architecture, OutputBlocks};
use tangentlab::stats::{loglog_slope, mean};
use tangentlab::trainer::{
    closed_form_trajectory, compare_trajectories, drift_metrics, train_linearized, train_network,
    Loss, OptimizerConfig, OptimizerKind, Trajectory,
};
use tangentlab::Dataset;

use crate::config::{Command, ExperimentConfig, OptimizerBlock, Seeds};
use crate::output::{fmt, OutDir, Summary};

/// Files written by each subcommand, with their CSV headers. Tables with a
/// per-layer tail end in `…`.
pub fn schema(cmd: Command) -> &'static [(&'static str, &'static str)] {
    match cmd {
        Command::KernelConvergence => &[("convergence.csv", "width,samples,nngp_error,ntk_error")],
        Command::DriftSweep => &[
            ("drift.csv", "width,step,param_distance,ntk_change,ntk_change_relative,nngp_change_relative,weight_change_1,…"),
            ("drift_summary.csv", "width,sup_param_distance,sup_ntk_change_relative,sup_nngp_change_relative,sup_weight_change_1,…"),
        ],
        Command::TrainCompare => &[
            ("metrics.csv", "model,step,train_loss,test_loss,train_accuracy,test_accuracy"),
            ("outputs.csv", "model,step,split,example,output,value"),
            ("rmse.csv", "model,step,rmse_train,rmse_test"),
        ],
        Command::ErrorVsWidth => {
            &[("error_vs_width.csv", "depth,dataset_size,width,learning_rate,final_rmse_train,final_rmse_test,sup_train,sup_test")]
        }
        Command::PredictiveDistribution => &[
            ("bands.csv", "step,alpha,ntk_mean,ntk_std,readout_mean,readout_std,ensemble_mean,ensemble_std"),
            ("ensemble.csv", "member,step,alpha,output"),
            ("nngp.csv", "alpha,mean,std"),
        ],
        Command::ReadoutGp => &[("readout.csv", "time,point,output,mean,std"), ("posterior.csv", "point,output,mean,std")],
        Command::XentCompare => &[("xent.csv", "step,max_abs_diff_train,max_abs_diff_test,discrete_train_loss,ode_train_loss")],
        Command::MomentumCompare => &[("momentum.csv", "step,time,max_abs_diff_train,max_abs_diff_test")],
        Command::Kernels => &[("kernels.csv", "block,row,col,nngp,ntk")],
    }
}

fn header(cmd: Command, file: &str) -> Vec<&'static str> {
    let h = schema(cmd)
        .iter()
        .find(|(f, _)| *f == file)
        .expect("file in schema")
        .1;
    h.split(',').filter(|c| *c != "…").collect()
}

/// Adds per-layer columns `prefix1..prefixN` in place of the trailing `…`.
fn with_layers(mut h: Vec<String>, layers: usize) -> Vec<String> {
    let last = h.pop().expect("nonempty header");
    let stem = last.trim_end_matches('1');
    h.extend((1..=layers).map(|l| format!("{stem}{l}")));
    h
}

pub struct Run<'a> {
    pub cfg: &'a ExperimentConfig,
    pub out: &'a mut OutDir,
    pub summary: &'a mut Summary,
}

pub fn run(cmd: Command, r: Run<'_>) -> anyhow::Result<()> {
    match cmd {
        Command::KernelConvergence => kernel_convergence(r),
        Command::DriftSweep => drift_sweep(r),
        Command::TrainCompare => train_compare(r),
        Command::ErrorVsWidth => error_vs_width(r),
        Command::PredictiveDistribution => predictive_distribution(r),
        Command::ReadoutGp => readout_gp(r),
        Command::XentCompare => xent_compare(r),
        Command::MomentumCompare => momentum_compare(r),
        Command::Kernels => kernels(r),
    }
}

fn parts(cfg: &ExperimentConfig) -> (&Architecture, &crate::config::DataSpec, Seeds) {
    (
        cfg.architecture.as_ref().expect("validated"),
        cfg.data.as_ref().expect("validated"),
        Seeds::new(cfg.seed),
    )
}

fn loss_of(cfg: &ExperimentConfig) -> Loss {
    cfg.optimizer.as_ref().map_or(Loss::Mse, |o| o.loss)
}

/// The learning rate of `o` for `arch` on `x`.
fn learning_rate(o: &OptimizerBlock, arch: &Architecture, x: &Array2<f64>) -> anyhow::Result<f64> {
    match (o.learning_rate, o.eta_factor) {
        (Some(lr), _) => Ok(lr),
        (None, Some(f)) => {
            let (theta, _) = ntk_kernel(arch, x.view(), x.view())?;
            Ok(f * eta_critical(&theta)?)
        }
        (None, None) => bail!("optimizer needs a learning rate"),
    }
}

fn optimizer(o: &OptimizerBlock, learning_rate: f64, seeds: &Seeds) -> OptimizerConfig {
    OptimizerConfig {
        kind: o.kind,
        learning_rate,
        momentum: o.momentum,
        batch_size: o.batch_size,
        steps: o.steps,
        loss: o.loss,
        record_every: o.record_every,
        seed: seeds.batches(),
        snapshots: false,
        layer_rates: None,
    }
}

fn max_abs(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    (a - b).iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

fn kernel_convergence(r: Run<'_>) -> anyhow::Result<()> {
    let (arch, data, seeds) = parts(r.cfg);
    let (train, _) = data.load(seeds.data(), Loss::Mse)?;
    let widths = r.cfg.widths.as_ref().expect("validated");
    let ms = r.cfg.samples.as_ref().expect("validated");
    let mut template = arch.clone();
    let readout = match r.cfg.readout_width {
        Some(w) => {
            template.output_dim = w;
            ReadoutWidth::Fixed
        }
        None => ReadoutWidth::MatchHidden,
    };
    let family = ArchFamily { template, readout };
    let recs = convergence_sweep(
        &family,
        train.inputs.view(),
        widths,
        ms,
        seeds.monte_carlo(),
    )?;
    let cmd = Command::KernelConvergence;
    r.out.table(
        "convergence.csv",
        &header(cmd, "convergence.csv"),
        recs.iter().map(|c| {
            vec![
                c.width.to_string(),
                c.num_samples.to_string(),
                fmt(c.frobenius_error_nngp),
                fmt(c.frobenius_error_ntk),
            ]
        }),
    )?;
    if widths.len() >= 2 {
        let xs: Vec<f64> = widths.iter().map(|&w| w as f64).collect();
        let mut slopes = serde_json::Map::new();
        for &m in ms {
            let sel: Vec<_> = recs.iter().filter(|c| c.num_samples == m).collect();
            let nngp: Vec<f64> = sel.iter().map(|c| c.frobenius_error_nngp).collect();
            let ntk: Vec<f64> = sel.iter().map(|c| c.frobenius_error_ntk).collect();
            slopes.insert(
                m.to_string(),
                serde_json::json!({ "nngp": loglog_slope(&xs, &nngp), "ntk": loglog_slope(&xs, &ntk) }),
            );
        }
        r.summary.set("loglog_slope_by_samples", slopes);
    }
    Ok(())
}

fn drift_sweep(r: Run<'_>) -> anyhow::Result<()> {
    let (arch, data, seeds) = parts(r.cfg);
    let o = r.cfg.optimizer.as_ref().expect("validated");
    let (train, test) = data.load(seeds.data(), o.loss)?;
    let lr = learning_rate(o, arch, &train.inputs)?;
    let widths = r.cfg.widths.as_ref().expect("validated");
    let layers = arch.depth() + 1;
    let mut rows = Vec::new();
    let mut sups: Vec<Vec<f64>> = Vec::new();
    for &w in widths {
        let a = arch.with_hidden_width(w);
        let p = init_params(&a, seeds.init(0))?;
        let opt = OptimizerConfig {
            snapshots: true,
            ..optimizer(o, lr, &seeds)
        };
        let traj = train_network(&a, &p, &train, &test, &opt)?;
        let reps = drift_metrics(&a, &traj, &train)?;
        let mut sup = vec![0.0f64; 3 + layers];
        for d in &reps {
            let mut row = vec![
                w.to_string(),
                d.step.to_string(),
                fmt(d.param_distance),
                fmt(d.ntk_change),
                fmt(d.ntk_change_relative),
                fmt(d.nngp_change_relative),
            ];
            row.extend(d.weight_change.iter().map(|&v| fmt(v)));
            rows.push(row);
            let vals = [
                d.param_distance,
                d.ntk_change_relative,
                d.nngp_change_relative,
            ];
            for (s, v) in sup.iter_mut().zip(vals.iter().chain(&d.weight_change)) {
                *s = (*s).max(*v);
            }
        }
        sups.push(sup);
    }
    let cmd = Command::DriftSweep;
    let own = |f| {
        header(cmd, f)
            .into_iter()
            .map(String::from)
            .collect::<Vec<_>>()
    };
    let h = with_layers(own("drift.csv"), layers);
    r.out.table(
        "drift.csv",
        &h.iter().map(|s| s.as_str()).collect::<Vec<_>>(),
        rows,
    )?;
    let hs = with_layers(own("drift_summary.csv"), layers);
    r.out.table(
        "drift_summary.csv",
        &hs.iter().map(|s| s.as_str()).collect::<Vec<_>>(),
        widths.iter().zip(&sups).map(|(w, s)| {
            std::iter::once(w.to_string())
                .chain(s.iter().map(|&v| fmt(v)))
                .collect()
        }),
    )?;
    r.summary.set("learning_rate", lr);
    if widths.len() >= 2 {
        let xs: Vec<f64> = widths.iter().map(|&w| w as f64).collect();
        let slopes: serde_json::Map<_, _> = hs[1..]
            .iter()
            .enumerate()
            .map(|(j, name)| {
                let ys: Vec<f64> = sups.iter().map(|s| s[j]).collect();
                let slope = if ys.iter().all(|&v| v > 0.0) {
                    Some(loglog_slope(&xs, &ys))
                } else {
                    None
                };
                (name.clone(), serde_json::json!(slope))
            })
            .collect();
        r.summary.set("loglog_slope_vs_width", slopes);
    }
    Ok(())
}

/// Closed-form discrete MSE dynamics driven by the analytic kernel, started
/// from the network's own initial outputs.
fn analytic_trajectory(
    arch: &Architecture,
    f0: Array2<f64>,
    f0_test: Array2<f64>,
    train: &Dataset,
    test: &Dataset,
    opt: &OptimizerConfig,
) -> anyhow::Result<Trajectory> {
    let b = kernel_blocks(arch, train.inputs.view(), test.inputs.view())?;
    let p = DynamicsProblem::new(
        b.ntk_train,
        train.labels.clone(),
        opt.learning_rate,
        TimeMode::Discrete,
    )?
    .with_test(b.ntk_cross)?
    .with_initial(f0, Some(f0_test))?;
    let steps = opt.record_steps();
    let times: Vec<f64> = steps.iter().map(|&s| s as f64).collect();
    let states = tangentlab::dynamics::lin_mse_dynamics(&p, &times, None)?;
    let (a, b): (Vec<_>, Vec<_>) = states
        .into_iter()
        .map(|s| (s.train, s.test.expect("test requested")))
        .unzip();
    Ok(Trajectory::from_outputs(steps, a, b, opt.loss, train, test))
}

fn is_closed_form(opt: &OptimizerConfig) -> bool {
    opt.loss == Loss::Mse && opt.kind == OptimizerKind::Gd && opt.batch_size.is_none()
}

fn train_compare(r: Run<'_>) -> anyhow::Result<()> {
    let (arch, data, seeds) = parts(r.cfg);
    let o = r.cfg.optimizer.as_ref().expect("validated");
    let (train, test) = data.load(seeds.data(), o.loss)?;
    let lr = learning_rate(o, arch, &train.inputs)?;
    let opt = optimizer(o, lr, &seeds);
    let p = init_params(arch, seeds.init(0))?;
    let net = train_network(arch, &p, &train, &test, &opt)?;
    let mut models = vec![(
        "linearized",
        train_linearized(arch, &p, &train, &test, &opt)?,
    )];
    if is_closed_form(&opt) {
        models.push((
            "closed_form_empirical",
            closed_form_trajectory(arch, &p, &train, &test, &opt)?,
        ));
        let f0 = net.train_outputs[0].clone();
        let f0t = net.test_outputs[0].clone();
        models.push((
            "closed_form_analytic",
            analytic_trajectory(arch, f0, f0t, &train, &test, &opt)?,
        ));
    }
    let all: Vec<(&str, &Trajectory)> = std::iter::once(("network", &net))
        .chain(models.iter().map(|(n, t)| (*n, t)))
        .collect();
    let cmd = Command::TrainCompare;
    let mut metrics = Vec::new();
    let mut outputs = Vec::new();
    for (name, t) in &all {
        for i in 0..t.steps.len() {
            metrics.push(vec![
                name.to_string(),
                t.steps[i].to_string(),
                fmt(t.train_loss[i]),
                fmt(t.test_loss[i]),
                fmt(t.train_accuracy[i]),
                fmt(t.test_accuracy[i]),
            ]);
            for (split, m) in [("train", &t.train_outputs[i]), ("test", &t.test_outputs[i])] {
                for ((e, c), v) in m.indexed_iter() {
                    outputs.push(vec![
                        name.to_string(),
                        t.steps[i].to_string(),
                        split.into(),
                        e.to_string(),
                        c.to_string(),
                        fmt(*v),
                    ]);
                }
            }
        }
    }
    r.out
        .table("metrics.csv", &header(cmd, "metrics.csv"), metrics)?;
    r.out
        .table("outputs.csv", &header(cmd, "outputs.csv"), outputs)?;
    let mut rmse = Vec::new();
    let mut sup = serde_json::Map::new();
    for (name, t) in &models {
        let c = compare_trajectories(&net, t)?;
        for i in 0..c.steps.len() {
            rmse.push(vec![
                name.to_string(),
                c.steps[i].to_string(),
                fmt(c.rmse_train[i]),
                fmt(c.rmse_test[i]),
            ]);
        }
        sup.insert(
            name.to_string(),
            serde_json::json!({ "sup_train": c.sup_train, "sup_test": c.sup_test }),
        );
    }
    r.out.table("rmse.csv", &header(cmd, "rmse.csv"), rmse)?;
    r.summary.set("learning_rate", lr);
    r.summary.set("versus_network", sup);
    Ok(())
}

fn error_vs_width(r: Run<'_>) -> anyhow::Result<()> {
    let (arch, data, seeds) = parts(r.cfg);
    let o = r.cfg.optimizer.as_ref().expect("validated");
    let widths = r.cfg.widths.as_ref().expect("validated");
    let mut rows = Vec::new();
    let mut slopes = Vec::new();
    for &depth in r.cfg.depths.as_ref().expect("validated") {
        for &size in r.cfg.dataset_sizes.as_ref().expect("validated") {
            let mut spec = data.clone();
            spec.set_train_size(size);
            let (train, test) = spec.load(seeds.data(), o.loss)?;
            let template = Architecture {
                hidden_widths: vec![widths[0]; depth],
                ..arch.clone()
            };
            let lr = learning_rate(o, &template, &train.inputs)?;
            let opt = optimizer(o, lr, &seeds);
            let mut finals = Vec::new();
            for &w in widths {
                let a = template.with_hidden_width(w);
                let p = init_params(&a, seeds.init(0))?;
                let net = train_network(&a, &p, &train, &test, &opt)?;
                let lin = if is_closed_form(&opt) {
                    closed_form_trajectory(&a, &p, &train, &test, &opt)?
                } else {
                    train_linearized(&a, &p, &train, &test, &opt)?
                };
                let c = compare_trajectories(&net, &lin)?;
                let last = c.steps.len() - 1;
                finals.push(c.rmse_test[last]);
                rows.push(vec![
                    depth.to_string(),
                    size.to_string(),
                    w.to_string(),
                    fmt(lr),
                    fmt(c.rmse_train[last]),
                    fmt(c.rmse_test[last]),
                    fmt(c.sup_train),
                    fmt(c.sup_test),
                ]);
            }
            if widths.len() >= 2 && finals.iter().all(|&v| v > 0.0) {
                let xs: Vec<f64> = widths.iter().map(|&w| w as f64).collect();
                slopes.push(serde_json::json!({ "depth": depth, "dataset_size": size, "final_rmse_test_slope": loglog_slope(&xs, &finals) }));
            }
        }
    }
    let cmd = Command::ErrorVsWidth;
    r.out.table(
        "error_vs_width.csv",
        &header(cmd, "error_vs_width.csv"),
        rows,
    )?;
    r.summary.set("loglog_slopes", slopes);
    Ok(())
}

fn predictive_distribution(r: Run<'_>) -> anyhow::Result<()> {
    let (arch, data, seeds) = parts(r.cfg);
    let o = r.cfg.optimizer.as_ref().expect("validated");
    let (train, _) = data.load(seeds.data(), o.loss)?;
    let y = train.labels.column(0);
    let first = y[0];
    let other = y
        .iter()
        .position(|&v| (v >= 0.0) != (first >= 0.0))
        .context("training labels are all of one class")?;
    let xs = interpolate_line(
        train.inputs.row(0),
        train.inputs.row(other),
        r.cfg.num_alphas.expect("validated"),
    )?;
    let alphas = alpha_grid(xs.nrows());
    let line = Dataset::new(xs.clone(), Array2::zeros((xs.nrows(), 1)))?;
    let lr = learning_rate(o, arch, &train.inputs)?;
    let opt = optimizer(o, lr, &seeds);
    let steps = opt.record_steps();
    let times: Vec<f64> = steps.iter().map(|&s| s as f64).collect();

    let b = kernel_blocks(arch, train.inputs.view(), xs.view())?;
    let p = DynamicsProblem::new(
        b.ntk_train.clone(),
        train.labels.clone(),
        lr,
        TimeMode::Discrete,
    )?
    .with_test(b.ntk_cross.clone())?
    .with_nngp(
        b.nngp_train.clone(),
        b.nngp_cross.clone(),
        b.nngp_test.clone(),
    )?;
    let ntk = ntk_gp_moments(&p, &times)?;
    let readout = readout_gp_moments(
        &b.nngp_train,
        &b.nngp_cross,
        &b.nngp_test,
        train.labels.view(),
        lr,
        &times,
    )?;
    let post = nngp_posterior(
        &b.nngp_train,
        &b.nngp_cross,
        &b.nngp_test,
        train.labels.view(),
        DEFAULT_JITTER,
    )?;

    let n = r.cfg.ensemble_size.expect("validated");
    let members: Vec<Trajectory> = (0..n)
        .into_par_iter()
        .map(|m| {
            let params = init_params(arch, seeds.init(m as u64))?;
            train_network(arch, &params, &train, &line, &opt)
        })
        .collect::<Result<_, _>>()?;

    let cmd = Command::PredictiveDistribution;
    let mut ens_rows = Vec::new();
    for (m, t) in members.iter().enumerate() {
        for (i, &s) in t.steps.iter().enumerate() {
            for (a, v) in t.test_outputs[i].column(0).iter().enumerate() {
                ens_rows.push(vec![m.to_string(), s.to_string(), fmt(alphas[a]), fmt(*v)]);
            }
        }
    }
    let mut band_rows = Vec::new();
    let (mut inside, mut cells, mut sq) = (0usize, 0usize, 0.0);
    for (i, &s) in steps.iter().enumerate() {
        let (ns, rs) = (ntk[i].std(), readout[i].std());
        for a in 0..alphas.len() {
            let vals: Vec<f64> = members.iter().map(|t| t.test_outputs[i][[a, 0]]).collect();
            let em = mean(&vals);
            let es = if n > 1 {
                tangentlab::stats::variance(&vals).sqrt()
            } else {
                0.0
            };
            let nm = ntk[i].mean[[a, 0]];
            cells += 1;
            if (em - nm).abs() <= 2.0 * ns[a] {
                inside += 1;
            }
            sq += (em - nm) * (em - nm);
            band_rows.push(vec![
                s.to_string(),
                fmt(alphas[a]),
                fmt(nm),
                fmt(ns[a]),
                fmt(readout[i].mean[[a, 0]]),
                fmt(rs[a]),
                fmt(em),
                fmt(es),
            ]);
        }
    }
    r.out
        .table("bands.csv", &header(cmd, "bands.csv"), band_rows)?;
    r.out
        .table("ensemble.csv", &header(cmd, "ensemble.csv"), ens_rows)?;
    let ps = post.std();
    r.out.table(
        "nngp.csv",
        &header(cmd, "nngp.csv"),
        (0..alphas.len()).map(|a| vec![fmt(alphas[a]), fmt(post.mean[[a, 0]]), fmt(ps[a])]),
    )?;
    let label_std = tangentlab::stats::variance(&y.to_vec()).sqrt();
    let rmse = (sq / cells as f64).sqrt();
    r.summary.set("learning_rate", lr);
    r.summary.set("endpoints", [0, other]);
    r.summary.set("band_coverage", inside as f64 / cells as f64);
    r.summary.set("ensemble_mean_rmse", rmse);
    r.summary.set("label_std", label_std);
    Ok(())
}

fn readout_gp(r: Run<'_>) -> anyhow::Result<()> {
    let (arch, data, seeds) = parts(r.cfg);
    let o = r.cfg.optimizer.as_ref().expect("validated");
    let (train, test) = data.load(seeds.data(), o.loss)?;
    let lr = learning_rate(o, arch, &train.inputs)?;
    let b = kernel_blocks(arch, train.inputs.view(), test.inputs.view())?;
    let times: Vec<f64> = r
        .cfg
        .times
        .as_ref()
        .expect("validated")
        .iter()
        .map(|t| t.unwrap_or(f64::INFINITY))
        .collect();
    let moments = readout_gp_moments(
        &b.nngp_train,
        &b.nngp_cross,
        &b.nngp_test,
        train.labels.view(),
        lr,
        &times,
    )?;
    let post = nngp_posterior(
        &b.nngp_train,
        &b.nngp_cross,
        &b.nngp_test,
        train.labels.view(),
        DEFAULT_JITTER,
    )?;
    let cmd = Command::ReadoutGp;
    let mut rows = Vec::new();
    for m in &moments {
        let sd = m.std();
        for ((pt, c), v) in m.mean.indexed_iter() {
            rows.push(vec![
                fmt(m.t),
                pt.to_string(),
                c.to_string(),
                fmt(*v),
                fmt(sd[pt]),
            ]);
        }
    }
    r.out
        .table("readout.csv", &header(cmd, "readout.csv"), rows)?;
    let sd = post.std();
    r.out.table(
        "posterior.csv",
        &header(cmd, "posterior.csv"),
        post.mean
            .indexed_iter()
            .map(|((pt, c), v)| vec![pt.to_string(), c.to_string(), fmt(*v), fmt(sd[pt])]),
    )?;
    if let Some(limit) = moments.iter().find(|m| m.t.is_infinite()) {
        r.summary
            .set("limit_mean_max_abs_diff", max_abs(&limit.mean, &post.mean));
        r.summary.set(
            "limit_covariance_max_abs_diff",
            max_abs(
                &limit.covariance.as_array().to_owned(),
                &post.covariance.as_array().to_owned(),
            ),
        );
    }
    r.summary.set("learning_rate", lr);
    Ok(())
}

fn ode_options(cfg: &ExperimentConfig) -> Rk45Options {
    let d = Rk45Options::default();
    Rk45Options {
        rtol: cfg.rtol.unwrap_or(d.rtol),
        atol: cfg.atol.unwrap_or(d.atol),
        ..d
    }
}

/// Empirical tangent kernels at `params` on the train and (test, train)
/// pairs, with every output block kept.
fn empirical_blocks(
    arch: &Architecture,
    params: &tangentlab::ParameterSet,
    train: &Dataset,
    test: &Dataset,
) -> anyhow::Result<(KernelMatrix, KernelMatrix)> {
    let t = tangent_kernel(
        arch,
        params,
        train.inputs.view(),
        train.inputs.view(),
        OutputBlocks::Full,
    )?;
    let c = tangent_kernel(
        arch,
        params,
        test.inputs.view(),
        train.inputs.view(),
        OutputBlocks::Full,
    )?;
    Ok((KernelMatrix::new(t.full, 1), KernelMatrix::new(c.full, 1)))
}

fn xent_compare(r: Run<'_>) -> anyhow::Result<()> {
    let (arch, data, seeds) = parts(r.cfg);
    let o = r.cfg.optimizer.as_ref().expect("validated");
    let (train, test) = data.load(seeds.data(), o.loss)?;
    let lr = learning_rate(o, arch, &train.inputs)?;
    let opt = optimizer(o, lr, &seeds);
    let p = init_params(arch, seeds.init(0))?;
    let disc = train_linearized(arch, &p, &train, &test, &opt)?;
    let (theta, cross) = empirical_blocks(arch, &p, &train, &test)?;
    let f0 = forward(arch, &p, train.inputs.view())?.into_output();
    let f0t = forward(arch, &p, test.inputs.view())?.into_output();
    let steps = opt.record_steps();
    let grid: Vec<f64> = steps.iter().map(|&s| s as f64).collect();
    let ode = xent_lin_dynamics(
        &theta,
        Some(&cross),
        train.labels.view(),
        f0.view(),
        Some(f0t.view()),
        lr,
        &grid,
        None,
        ode_options(r.cfg),
    )?;
    let ode_traj = Trajectory::from_outputs(
        steps[..ode.times.len()].to_vec(),
        ode.train.clone(),
        ode.test.clone(),
        Loss::Xent,
        &train,
        &test,
    );
    let cmd = Command::XentCompare;
    let mut rows = Vec::new();
    let mut sup: f64 = 0.0;
    for i in 0..ode.times.len() {
        let dt = max_abs(&disc.train_outputs[i], &ode.train[i]);
        let ds = if test.is_empty() {
            0.0
        } else {
            max_abs(&disc.test_outputs[i], &ode.test[i])
        };
        sup = sup.max(dt).max(ds);
        rows.push(vec![
            steps[i].to_string(),
            fmt(dt),
            fmt(ds),
            fmt(disc.train_loss[i]),
            fmt(ode_traj.train_loss[i]),
        ]);
    }
    r.out.table("xent.csv", &header(cmd, "xent.csv"), rows)?;
    r.summary.set("learning_rate", lr);
    r.summary.set("sup_max_abs_diff", sup);
    r.summary.set("stopped_at", ode.stopped_at);
    r.summary.set("rk45_steps", ode.stats.accepted);
    Ok(())
}

fn momentum_compare(r: Run<'_>) -> anyhow::Result<()> {
    let (arch, data, seeds) = parts(r.cfg);
    let o = r.cfg.optimizer.as_ref().expect("validated");
    let (train, test) = data.load(seeds.data(), o.loss)?;
    let lr = learning_rate(o, arch, &train.inputs)?;
    let opt = optimizer(o, lr, &seeds);
    let p = init_params(arch, seeds.init(0))?;
    let disc = train_linearized(arch, &p, &train, &test, &opt)?;
    let (theta, cross) = empirical_blocks(arch, &p, &train, &test)?;
    let f0 = forward(arch, &p, train.inputs.view())?.into_output();
    let f0t = forward(arch, &p, test.inputs.view())?.into_output();
    let steps = opt.record_steps();
    let ode = momentum_lin_dynamics(
        &theta,
        Some(&cross),
        train.labels.view(),
        f0.view(),
        Some(f0t.view()),
        lr,
        o.momentum,
        &steps,
        ode_options(r.cfg),
    )?;
    let cmd = Command::MomentumCompare;
    let mut rows = Vec::new();
    let mut sup: f64 = 0.0;
    for i in 0..steps.len() {
        let dt = max_abs(&disc.train_outputs[i], &ode.train[i]);
        let ds = if test.is_empty() {
            0.0
        } else {
            max_abs(&disc.test_outputs[i], &ode.test[i])
        };
        sup = sup.max(dt).max(ds);
        rows.push(vec![
            steps[i].to_string(),
            fmt(ode.times[i]),
            fmt(dt),
            fmt(ds),
        ]);
    }
    r.out
        .table("momentum.csv", &header(cmd, "momentum.csv"), rows)?;
    r.summary.set("learning_rate", lr);
    r.summary.set("sup_max_abs_diff", sup);
    r.summary.set("rk45_steps", ode.stats.accepted);
    Ok(())
}

fn kernels(r: Run<'_>) -> anyhow::Result<()> {
    let (arch, data, seeds) = parts(r.cfg);
    let (train, test) = data.load(seeds.data(), loss_of(r.cfg))?;
    let b = kernel_blocks(arch, train.inputs.view(), test.inputs.view())?;
    let mut rows = Vec::new();
    for (name, k, t) in [
        ("train", &b.nngp_train, &b.ntk_train),
        ("cross", &b.nngp_cross, &b.ntk_cross),
        ("test", &b.nngp_test, &b.ntk_test),
    ] {
        for ((i, j), v) in k.base.indexed_iter() {
            rows.push(vec![
                name.to_string(),
                i.to_string(),
                j.to_string(),
                fmt(*v),
                fmt(t.base[[i, j]]),
            ]);
        }
    }
    r.out.table(
        "kernels.csv",
        &header(Command::Kernels, "kernels.csv"),
        rows,
    )?;
    if !train.is_empty() {
        r.summary.set("eta_critical", eta_critical(&b.ntk_train)?);
    }
    Ok(())
}
