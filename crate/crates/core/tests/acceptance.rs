//! Acceptance criteria, one check per criterion, run as a plain binary so every
//! outcome is printed. Pass criterion ids (`AC-4`) as arguments to run a subset.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use ndarray::{s, Array2};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use tangentlab::analytic_kernels::{kernel_blocks, ntk_kernel, t_map, tdot_map};
use tangentlab::dataio::{interpolate_line, one_hot, synth_gaussian, synth_gaussian_classes};
use tangentlab::dynamics::{
    eta_critical, lin_mse_dynamics, nngp_posterior, ntk_gp_moments, readout_gp_moments,
    DynamicsProblem, TimeMode,
};
use tangentlab::empirical_kernels::{convergence_sweep, ArchFamily, ReadoutWidth};
use tangentlab::integrators::{
    momentum_lin_dynamics, rk45_integrate, xent_lin_dynamics, FnSystem, Rk45Options,
};
use tangentlab::linalg::sym_eig;
use tangentlab::network::{forward, init_params, jacobian, tangent_kernel, OutputBlocks};
use tangentlab::rng::StreamKey;
use tangentlab::stats::{loglog_slope, mean, variance};
use tangentlab::trainer::{
    closed_form_trajectory, compare_trajectories, equivalent_ntk_rates, train_linearized,
    train_network, Loss, OptimizerConfig, OptimizerKind,
};
use tangentlab::{
    Activation, Architecture, BivariateGaussianMoment, Dataset, KernelMatrix, ParamMode,
    ParameterSet,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn arch(
    n0: usize,
    hidden: Vec<usize>,
    k: usize,
    activation: Activation,
    w: f64,
    b: f64,
) -> Architecture {
    Architecture {
        input_dim: n0,
        hidden_widths: hidden,
        output_dim: k,
        activation,
        weight_var: w,
        bias_var: b,
        param_mode: ParamMode::Ntk,
    }
}

fn max_abs(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    (a - b).iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

fn to_na(a: &Array2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

fn from_na(m: &DMatrix<f64>) -> Array2<f64> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)])
}

fn gaussian(rows: usize, cols: usize, rng: &mut impl Rng) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| StandardNormal.sample(rng))
}

/// `A Aᵀ/n + shift·I`, well conditioned for `shift > 0`.
fn random_psd(n: usize, shift: f64, rng: &mut impl Rng) -> Array2<f64> {
    let a = gaussian(n, n, rng);
    a.dot(&a.t()) / n as f64 + Array2::<f64>::eye(n) * shift
}

/// A single `M = 100` sweep fixes the slope only to about ±0.07, so the
/// slope is averaged over three independent sweeps (equivalently, fitted to
/// the mean log error).
fn ac1() -> Outcome {
    let template = arch(4, vec![64], 1, Activation::Relu, 2.0, 0.1);
    let x = synth_gaussian(4, 8, 11).unwrap().inputs;
    let widths = [64, 256, 1024, 4096];
    let xs: Vec<f64> = widths.iter().map(|&w| w as f64).collect();
    let family = ArchFamily {
        template,
        readout: ReadoutWidth::MatchHidden,
    };
    let (mut nngp, mut ntk) = (Vec::new(), Vec::new());
    for seed in 12..15 {
        let recs = convergence_sweep(&family, x.view(), &widths, &[100], seed).unwrap();
        nngp.push(loglog_slope(
            &xs,
            &recs
                .iter()
                .map(|r| r.frobenius_error_nngp)
                .collect::<Vec<_>>(),
        ));
        ntk.push(loglog_slope(
            &xs,
            &recs
                .iter()
                .map(|r| r.frobenius_error_ntk)
                .collect::<Vec<_>>(),
        ));
    }
    let (sk, st) = (mean(&nngp), mean(&ntk));
    let ok = |s: f64| (-0.65..=-0.35).contains(&s);
    let show = |v: &[f64]| {
        v.iter()
            .map(|s| format!("{s:.3}"))
            .collect::<Vec<_>>()
            .join(", ")
    };
    outcome(
        ok(sk) && ok(st),
        format!(
            "mean slope NNGP {sk:.3} ({}), NTK {st:.3} ({}) (need [-0.65, -0.35])",
            show(&nngp),
            show(&ntk)
        ),
    )
}

fn ac2() -> Outcome {
    let mut rng = StreamKey::new(21).rng();
    let mut worst = 0.0f64;
    for _ in 0..5 {
        let n = 8;
        let theta = random_psd(n, 0.05, &mut rng);
        let y = gaussian(n, 1, &mut rng);
        let f0 = gaussian(n, 1, &mut rng) * 0.5;
        let eta = 0.3;
        let times: Vec<f64> = (0..=50).map(|i| i as f64 * 0.1 / eta).collect();
        let p = DynamicsProblem::new(
            KernelMatrix::new(theta.clone(), 1),
            y.clone(),
            eta,
            TimeMode::Continuous,
        )
        .unwrap()
        .with_initial(f0.clone(), None)
        .unwrap();
        let closed = lin_mse_dynamics(&p, &times, None).unwrap();
        let sys = FnSystem::new(n, "mse flow", |_t, f: &[f64], d: &mut [f64]| {
            for i in 0..n {
                d[i] = -eta
                    * (0..n)
                        .map(|j| theta[[i, j]] * (f[j] - y[[j, 0]]))
                        .sum::<f64>();
            }
        });
        let opts = Rk45Options {
            rtol: 1e-11,
            atol: 1e-13,
            ..Rk45Options::default()
        };
        let sol = rk45_integrate(&sys, f0.as_slice().unwrap(), &times, opts).unwrap();
        for (i, st) in closed.iter().enumerate() {
            for j in 0..n {
                worst = worst.max((st.train[[j, 0]] - sol.states[[i, j]]).abs());
            }
        }
    }
    outcome(
        worst < 1e-6,
        format!("sup |closed form - rk45| = {worst:.2e} over 5 problems (need < 1e-6)"),
    )
}

fn ac3() -> Outcome {
    let data = synth_gaussian(8, 64, 31).unwrap();
    let none = data.head(0);
    let template = arch(8, vec![128; 3], 1, Activation::Relu, 2.0, 0.1);
    let (theta, _) = ntk_kernel(&template, data.inputs.view(), data.inputs.view()).unwrap();
    let lr = 0.5 * eta_critical(&theta).unwrap();
    let opt = OptimizerConfig::gd(lr, 1024, Loss::Mse);
    let widths = [128usize, 512, 2048];
    let mut sups = Vec::new();
    for &w in &widths {
        let a = template.with_hidden_width(w);
        let p = init_params(&a, 32).unwrap();
        let net = train_network(&a, &p, &data, &none, &opt).unwrap();
        let lin = closed_form_trajectory(&a, &p, &data, &none, &opt).unwrap();
        sups.push(compare_trajectories(&net, &lin).unwrap().sup_train);
    }
    let xs: Vec<f64> = widths.iter().map(|&w| w as f64).collect();
    let slope = loglog_slope(&xs, &sups);
    let decreasing = sups.windows(2).all(|p| p[1] < p[0]);
    outcome(
        decreasing && (-0.7..=-0.3).contains(&slope),
        format!(
            "sup |f - f_lin| = {:.3e}, {:.3e}, {:.3e}; slope {slope:.3} (need decreasing, [-0.7, -0.3])",
            sups[0], sups[1], sups[2]
        ),
    )
}

fn ac4() -> Outcome {
    let a = arch(8, vec![1024; 3], 1, Activation::Tanh, 1.5, 0.0);
    let train = synth_gaussian(8, 32, 41).unwrap();
    let y = train.labels.column(0).to_vec();
    let other = y
        .iter()
        .position(|&v| v != y[0])
        .expect("both labels present");
    let xs = interpolate_line(train.inputs.row(0), train.inputs.row(other), 10).unwrap();
    let line = Dataset::new(xs.clone(), Array2::zeros((xs.nrows(), 1))).unwrap();
    let b = kernel_blocks(&a, train.inputs.view(), xs.view()).unwrap();
    let lr = 0.5 * eta_critical(&b.ntk_train).unwrap();
    let opt = OptimizerConfig {
        record_every: 100,
        ..OptimizerConfig::gd(lr, 1000, Loss::Mse)
    };
    let steps = opt.record_steps();
    let times: Vec<f64> = steps.iter().map(|&s| s as f64).collect();
    let p = DynamicsProblem::new(
        b.ntk_train.clone(),
        train.labels.clone(),
        lr,
        TimeMode::Discrete,
    )
    .unwrap()
    .with_test(b.ntk_cross.clone())
    .unwrap()
    .with_nngp(
        b.nngp_train.clone(),
        b.nngp_cross.clone(),
        b.nngp_test.clone(),
    )
    .unwrap();
    let moments = ntk_gp_moments(&p, &times).unwrap();
    let outs: Vec<Vec<Array2<f64>>> = (0..100u64)
        .into_par_iter()
        .map(|m| {
            let params = init_params(&a, StreamKey::new(42).child(m).value()).unwrap();
            train_network(&a, &params, &train, &line, &opt)
                .unwrap()
                .test_outputs
        })
        .collect();
    let (mut inside, mut cells, mut sq) = (0, 0, 0.0);
    for (i, m) in moments.iter().enumerate() {
        let sd = m.std();
        for pt in 0..xs.nrows() {
            let em = mean(&outs.iter().map(|o| o[i][[pt, 0]]).collect::<Vec<_>>());
            let d = em - m.mean[[pt, 0]];
            cells += 1;
            if d.abs() <= 2.0 * sd[pt] {
                inside += 1;
            }
            sq += d * d;
        }
    }
    let coverage = inside as f64 / cells as f64;
    let rmse = (sq / cells as f64).sqrt();
    let label_std = variance(&y).sqrt();
    outcome(
        coverage >= 0.8 && rmse < 0.1 * label_std,
        format!("band coverage {coverage:.3} (need >= 0.8); mean RMSE {rmse:.4} vs 0.1 x label std {:.4}", 0.1 * label_std),
    )
}

/// `(K_train, K_cross, K_test)` blocks of one random joint PSD matrix.
fn joint_blocks(
    n: usize,
    m: usize,
    rng: &mut impl Rng,
) -> (KernelMatrix, KernelMatrix, KernelMatrix) {
    let j = random_psd(n + m, 0.2, rng);
    (
        KernelMatrix::new(j.slice(s![..n, ..n]).to_owned(), 1),
        KernelMatrix::new(j.slice(s![n.., ..n]).to_owned(), 1),
        KernelMatrix::new(j.slice(s![n.., n..]).to_owned(), 1),
    )
}

fn ac5() -> Outcome {
    let mut rng = StreamKey::new(51).rng();
    let (mut dm, mut dc) = (0.0f64, 0.0f64);
    for trial in 0..20 {
        let n = 2 + trial % 8;
        let m = 1 + trial % 4;
        let (kt, kc, ks) = joint_blocks(n, m, &mut rng);
        let y = gaussian(n, 1 + trial % 2, &mut rng);
        let lim = readout_gp_moments(&kt, &kc, &ks, y.view(), 0.1, &[f64::INFINITY])
            .unwrap()
            .remove(0);
        let post = nngp_posterior(&kt, &kc, &ks, y.view(), 0.0).unwrap();
        // independent oracle: explicit inverse
        let kinv = from_na(&to_na(&kt.base).try_inverse().unwrap());
        let mean = kc.base.dot(&kinv).dot(&y);
        let cov = &ks.base - &kc.base.dot(&kinv).dot(&kc.base.t());
        for got in [&lim, &post] {
            dm = dm.max(max_abs(&got.mean, &mean));
            dc = dc.max(max_abs(got.covariance.as_array(), &cov));
        }
        dm = dm.max(max_abs(&lim.mean, &post.mean));
        dc = dc.max(max_abs(
            lim.covariance.as_array(),
            post.covariance.as_array(),
        ));
    }
    outcome(
        dm < 1e-8 && dc < 1e-8,
        format!(
            "max mean diff {dm:.2e}, max covariance diff {dc:.2e} over 20 instances (need < 1e-8)"
        ),
    )
}

fn ac6() -> Outcome {
    let mut rng = StreamKey::new(61).rng();
    let (mut dm, mut dc) = (0.0f64, 0.0f64);
    for trial in 0..20 {
        let n = 2 + trial % 9;
        let m = 1 + trial % 3;
        let (tt, tc, _) = joint_blocks(n, m, &mut rng);
        let (kt, kc, ks) = joint_blocks(n, m, &mut rng);
        let y = gaussian(n, 1, &mut rng);
        let p = DynamicsProblem::new(tt.clone(), y.clone(), 0.1, TimeMode::Continuous)
            .unwrap()
            .with_test(tc.clone())
            .unwrap()
            .with_nngp(kt.clone(), kc.clone(), ks.clone())
            .unwrap();
        let got = ntk_gp_moments(&p, &[f64::INFINITY]).unwrap().remove(0);
        let tinv = from_na(&to_na(&tt.base).try_inverse().unwrap());
        let a = tc.base.dot(&tinv);
        let mean = a.dot(&y);
        let ak = a.dot(&kc.base.t());
        let cov = &ks.base + &a.dot(&kt.base).dot(&a.t()) - &ak - ak.t();
        dm = dm.max(max_abs(&got.mean, &mean));
        dc = dc.max(max_abs(got.covariance.as_array(), &cov));
    }
    outcome(
        dm < 1e-10 && dc < 1e-10,
        format!(
            "max mean diff {dm:.2e}, max covariance diff {dc:.2e} over 20 instances (need < 1e-10)"
        ),
    )
}

/// Sup over the record grid of the logit gap between discrete linearized
/// cross-entropy descent and the integrated flow, horizon `i·η = 2`.
fn xent_gap(a: &Architecture, p: &ParameterSet, train: &Dataset, test: &Dataset, eta: f64) -> f64 {
    let steps = (2.0 / eta).round() as usize;
    let opt = OptimizerConfig {
        record_every: steps / 100,
        ..OptimizerConfig::gd(eta, steps, Loss::Xent)
    };
    let disc = train_linearized(a, p, train, test, &opt).unwrap();
    let theta = tangent_kernel(
        a,
        p,
        train.inputs.view(),
        train.inputs.view(),
        OutputBlocks::Full,
    )
    .unwrap();
    let cross = tangent_kernel(
        a,
        p,
        test.inputs.view(),
        train.inputs.view(),
        OutputBlocks::Full,
    )
    .unwrap();
    let f0 = forward(a, p, train.inputs.view()).unwrap().into_output();
    let f0t = forward(a, p, test.inputs.view()).unwrap().into_output();
    let grid: Vec<f64> = disc.steps.iter().map(|&s| s as f64).collect();
    let opts = Rk45Options {
        rtol: 1e-10,
        atol: 1e-12,
        ..Rk45Options::default()
    };
    let ode = xent_lin_dynamics(
        &KernelMatrix::new(theta.full, 1),
        Some(&KernelMatrix::new(cross.full, 1)),
        train.labels.view(),
        f0.view(),
        Some(f0t.view()),
        eta,
        &grid,
        None,
        opts,
    )
    .unwrap();
    assert_eq!(ode.times.len(), grid.len());
    (0..grid.len())
        .map(|i| {
            max_abs(&disc.train_outputs[i], &ode.train[i])
                .max(max_abs(&disc.test_outputs[i], &ode.test[i]))
        })
        .fold(0.0, f64::max)
}

fn ac7() -> Outcome {
    let a = arch(8, vec![256; 3], 3, Activation::Tanh, 1.5, 0.0);
    let (x, cls) = synth_gaussian_classes(8, 32, 3, 71).unwrap();
    let all = Dataset::new(x, one_hot(&cls, 3)).unwrap();
    let train = all.select(&(0..24).collect::<Vec<_>>());
    let test = all.select(&(24..32).collect::<Vec<_>>());
    let p = init_params(&a, 72).unwrap();
    let g1 = xent_gap(&a, &p, &train, &test, 1e-3);
    let g2 = xent_gap(&a, &p, &train, &test, 5e-4);
    let ratio = g2 / g1;
    outcome(
        g1 < 1e-3 && ratio <= 0.5,
        format!("sup logit gap {g1:.3e} at eta 1e-3 (need < 1e-3); {g2:.3e} at 5e-4, ratio {ratio:.4} (need <= 0.5)"),
    )
}

/// Sup gap between discrete linearized momentum descent and the
/// second-order flow at `t = i·√η`, horizon `i·η = 2`.
fn momentum_gap(
    a: &Architecture,
    p: &ParameterSet,
    train: &Dataset,
    test: &Dataset,
    eta: f64,
) -> f64 {
    let steps = (2.0 / eta).round() as usize;
    let opt = OptimizerConfig {
        kind: OptimizerKind::Momentum,
        momentum: 0.9,
        record_every: steps / 100,
        ..OptimizerConfig::gd(eta, steps, Loss::Mse)
    };
    let disc = train_linearized(a, p, train, test, &opt).unwrap();
    let theta = tangent_kernel(
        a,
        p,
        train.inputs.view(),
        train.inputs.view(),
        OutputBlocks::Full,
    )
    .unwrap();
    let cross = tangent_kernel(
        a,
        p,
        test.inputs.view(),
        train.inputs.view(),
        OutputBlocks::Full,
    )
    .unwrap();
    let f0 = forward(a, p, train.inputs.view()).unwrap().into_output();
    let f0t = forward(a, p, test.inputs.view()).unwrap().into_output();
    let opts = Rk45Options {
        rtol: 1e-10,
        atol: 1e-12,
        ..Rk45Options::default()
    };
    let ode = momentum_lin_dynamics(
        &KernelMatrix::new(theta.full, 1),
        Some(&KernelMatrix::new(cross.full, 1)),
        train.labels.view(),
        f0.view(),
        Some(f0t.view()),
        eta,
        0.9,
        &disc.steps,
        opts,
    )
    .unwrap();
    (0..disc.steps.len())
        .map(|i| {
            max_abs(&disc.train_outputs[i], &ode.train[i])
                .max(max_abs(&disc.test_outputs[i], &ode.test[i]))
        })
        .fold(0.0, f64::max)
}

fn ac8() -> Outcome {
    let a = arch(8, vec![256; 3], 1, Activation::Tanh, 1.5, 0.0);
    let all = synth_gaussian(8, 24, 81).unwrap();
    let train = all.head(16);
    let test = all.select(&(16..24).collect::<Vec<_>>());
    let p = init_params(&a, 82).unwrap();
    let g1 = momentum_gap(&a, &p, &train, &test, 1e-2);
    let g2 = momentum_gap(&a, &p, &train, &test, 1e-3);
    let ratio = g2 / g1;
    outcome(
        ratio <= 0.6,
        format!("sup gap {g1:.3e} at eta 1e-2, {g2:.3e} at 1e-3, ratio {ratio:.4} (need <= 0.6)"),
    )
}

fn ac9() -> Outcome {
    let a = arch(8, vec![256; 2], 1, Activation::Relu, 2.0, 0.1);
    let all = synth_gaussian(8, 24, 91).unwrap();
    let train = all.head(16);
    let test = all.select(&(16..24).collect::<Vec<_>>());
    let p = init_params(&a, 92).unwrap();
    let eta0 = 0.5;
    let std_opt = OptimizerConfig::gd(eta0 / a.max_fan_in() as f64, 100, Loss::Mse);
    let ntk_opt = OptimizerConfig {
        layer_rates: Some(equivalent_ntk_rates(&a, eta0).unwrap()),
        ..std_opt.clone()
    };
    let sa = a.with_mode(ParamMode::Standard);
    let s = train_network(&sa, &p.to_standard(&a), &train, &test, &std_opt).unwrap();
    let n = train_network(&a, &p, &train, &test, &ntk_opt).unwrap();
    let c = compare_trajectories(&s, &n).unwrap();
    let moved = max_abs(&n.train_outputs[0], n.train_outputs.last().unwrap());
    outcome(
        c.sup_train < 1e-10 && c.sup_test < 1e-10 && moved > 1e-2,
        format!(
            "sup output gap train {:.2e}, test {:.2e} over 100 steps (need < 1e-10)",
            c.sup_train, c.sup_test
        ),
    )
}

/// Relative error of each output's gradient, `‖∇f_r − Δf_r‖₂ / ‖∇f_r‖₂`,
/// maximized over outputs. Per-entry ratios are meaningless for entries near
/// the finite-difference roundoff floor `u·|f|/ε ≈ 1e-11`.
fn ac10() -> Outcome {
    let mut worst = 0.0f64;
    for mode in [ParamMode::Ntk, ParamMode::Standard] {
        let a = Architecture {
            param_mode: mode,
            ..arch(3, vec![16; 2], 2, Activation::Erf, 1.5, 0.05)
        };
        let x = synth_gaussian(3, 4, 101).unwrap().inputs;
        let p = init_params(&a, 102).unwrap();
        let j = jacobian(&a, &p, x.view()).unwrap();
        let theta = p.flatten();
        let eps = 1e-5;
        let mut fd = Array2::zeros(j.data.dim());
        for q in 0..theta.len() {
            let eval = |d: f64| {
                let mut t = theta.clone();
                t[q] += d;
                let pp = ParameterSet::unflatten(&a, t.as_slice().unwrap()).unwrap();
                forward(&a, &pp, x.view()).unwrap().into_output()
            };
            let col = (eval(eps) - eval(-eps)) / (2.0 * eps);
            fd.column_mut(q)
                .assign(&ndarray::Array1::from_iter(col.iter().copied()));
        }
        for (an, num) in j.data.rows().into_iter().zip(fd.rows()) {
            let norm = an.dot(&an).sqrt();
            let diff = &an - &num;
            worst = worst.max(diff.dot(&diff).sqrt() / norm);
        }
    }
    outcome(
        worst < 1e-5,
        format!(
            "max per-output relative error {worst:.2e} over both parameterizations (need < 1e-5)"
        ),
    )
}

/// `E[g(u, v)]` for `(u, v) ~ N(0, Σ)` by the trapezoid rule on a truncated grid.
fn trapezoid_2d(m: &BivariateGaussianMoment, g: impl Fn(f64, f64) -> f64) -> f64 {
    let l11 = m.k_xx.sqrt();
    let l21 = m.k_xy / l11;
    let l22 = (m.k_yy - l21 * l21).max(0.0).sqrt();
    let h = 0.04;
    let nodes: Vec<f64> = (-250..=250).map(|i| i as f64 * h).collect();
    let w: Vec<f64> = nodes
        .iter()
        .map(|z| h * (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt())
        .collect();
    let mut acc = 0.0;
    for (z1, w1) in nodes.iter().zip(&w) {
        for (z2, w2) in nodes.iter().zip(&w) {
            acc += w1 * w2 * g(l11 * z1, l21 * z1 + l22 * z2);
        }
    }
    acc
}

fn ac11() -> Outcome {
    let mut rng = StreamKey::new(111).rng();
    let (mut relu_t, mut relu_td, mut erf_t, mut erf_td) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for _ in 0..10 {
        let vx = rng.gen_range(0.5..2.0);
        let vy = rng.gen_range(0.5..2.0);
        let rho: f64 = rng.gen_range(-0.8..0.95);
        let m = BivariateGaussianMoment::new(vx, rho * (vx * vy).sqrt(), vy).unwrap();
        let l11 = m.k_xx.sqrt();
        let l21 = m.k_xy / l11;
        let l22 = (m.k_yy - l21 * l21).sqrt();
        let (mut st, mut std_) = (0.0, 0u64);
        let n = 10_000_000u64;
        for _ in 0..n {
            let z1: f64 = StandardNormal.sample(&mut rng);
            let z2: f64 = StandardNormal.sample(&mut rng);
            let (u, v) = (l11 * z1, l21 * z1 + l22 * z2);
            if u > 0.0 && v > 0.0 {
                st += u * v;
                std_ += 1;
            }
        }
        let (mt, mtd) = (st / n as f64, std_ as f64 / n as f64);
        relu_t = relu_t.max((t_map(&m, Activation::Relu) - mt).abs() / mt);
        relu_td = relu_td.max((tdot_map(&m, Activation::Relu) - mtd).abs() / mtd);
        let qt = trapezoid_2d(&m, |u, v| libm::erf(u) * libm::erf(v));
        let dphi = |x: f64| std::f64::consts::FRAC_2_SQRT_PI * (-x * x).exp();
        let qtd = trapezoid_2d(&m, |u, v| dphi(u) * dphi(v));
        erf_t = erf_t.max((t_map(&m, Activation::Erf) - qt).abs() / qt.abs());
        erf_td = erf_td.max((tdot_map(&m, Activation::Erf) - qtd).abs() / qtd.abs());
    }
    outcome(
        relu_t < 1e-2 && relu_td < 1e-2 && erf_t < 1e-8 && erf_td < 1e-8,
        format!(
            "ReLU vs 1e7-sample MC: T {relu_t:.2e}, Tdot {relu_td:.2e} (need < 1e-2); erf vs quadrature: T {erf_t:.2e}, Tdot {erf_td:.2e} (need < 1e-8)"
        ),
    )
}

fn ac12() -> Outcome {
    let mut ok = true;
    let mut detail = Vec::new();
    for trial in 0..10u64 {
        let a = arch(4, vec![64; 2], 1, Activation::Relu, 2.0, 0.1);
        let d = synth_gaussian(4, 10, 120 + trial).unwrap();
        let p = init_params(&a, 130 + trial).unwrap();
        let theta = tangent_kernel(&a, &p, d.inputs.view(), d.inputs.view(), OutputBlocks::Full)
            .unwrap()
            .full;
        let lmax = sym_eig(&KernelMatrix::new(theta.clone(), 1).to_sym().unwrap())
            .unwrap()
            .max();
        let f0 = forward(&a, &p, d.inputs.view()).unwrap().into_output();
        let r0 = (&f0 - &d.labels).mapv(|v| v * v).sum().sqrt();
        let steps = 2000;
        let mut ratios = [0.0; 2];
        for (slot, factor) in [0.99, 1.01].into_iter().enumerate() {
            let eta = factor * 2.0 / lmax;
            let prob = DynamicsProblem::new(
                KernelMatrix::new(theta.clone(), 1),
                d.labels.clone(),
                eta,
                TimeMode::Discrete,
            )
            .unwrap()
            .with_initial(f0.clone(), None)
            .unwrap();
            let st = lin_mse_dynamics(&prob, &[steps as f64], None)
                .unwrap()
                .remove(0);
            let closed = (&st.train - &d.labels).mapv(|v| v * v).sum().sqrt();
            // explicit iteration of r ← (I − ηΘ̂) r
            let mut r = &f0 - &d.labels;
            for _ in 0..steps {
                r = &r - &(theta.dot(&r) * eta);
            }
            let iter = r.mapv(|v| v * v).sum().sqrt();
            ok &=
                ((closed - iter) / iter.max(1e-300)).abs() < 1e-6 || (closed - iter).abs() < 1e-12;
            ratios[slot] = iter / r0;
        }
        ok &= ratios[0] < 1.0 && ratios[1] > 1.0;
        if trial == 0 {
            detail.push(format!(
                "trial 0: |r_2000|/|r_0| = {:.2e} at 0.99, {:.2e} at 1.01",
                ratios[0], ratios[1]
            ));
        }
    }
    outcome(
        ok,
        format!(
            "10 instances contract below 2/lambda_max and diverge above; {}",
            detail.join("")
        ),
    )
}

type Check = fn() -> Outcome;

const CRITERIA: [(&str, Check, u64); 12] = [
    ("AC-1", ac1, 180),
    ("AC-2", ac2, 10),
    ("AC-3", ac3, 600),
    ("AC-4", ac4, 900),
    ("AC-5", ac5, 1),
    ("AC-6", ac6, 1),
    ("AC-7", ac7, 60),
    ("AC-8", ac8, 60),
    ("AC-9", ac9, 30),
    ("AC-10", ac10, 5),
    ("AC-11", ac11, 60),
    ("AC-12", ac12, 5),
];

fn main() {
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| a.starts_with("AC-"))
        .collect();
    let mut failed = 0;
    for (id, check, budget) in CRITERIA {
        if !filter.is_empty() && !filter.iter().any(|f| f == id) {
            continue;
        }
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check));
        let elapsed = start.elapsed();
        let (pass, detail) = match result {
            Ok(o) => (o.pass, o.detail),
            Err(e) => {
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
                (false, format!("panicked: {}", msg.unwrap_or_default()))
            }
        };
        let in_time = elapsed <= Duration::from_secs(budget);
        let ok = pass && in_time;
        if !ok {
            failed += 1;
        }
        println!(
            "{id:<5} {} {detail}; {:.1}s of {budget}s budget{}",
            if ok { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64(),
            if in_time { "" } else { " (over budget)" }
        );
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
