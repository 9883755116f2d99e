//! Monte Carlo estimates of the NNGP and tangent kernels from random
//! finite-width networks, and their convergence to the analytic kernels.
//!
//! Draw `m` of an estimate initializes the network with the stream
//! `StreamKey::new(seed).child(m)`, so results do not depend on the number of
//! worker threads, and the draws of a smaller `M` are a prefix of those of a
//! larger one.

use ndarray::{Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytic_kernels::{ntk_kernel, KernelMatrix};
use crate::linalg::frobenius;
use crate::network::{
    forward, init_params, tangent_kernel_from_passes, Architecture, OutputBlocks,
};
use crate::rng::StreamKey;
use crate::stats::relative_frobenius;
use crate::{Error, Result};

/// NNGP estimate with the cross-output diagnostic.
#[derive(Debug, Clone)]
pub struct NngpEstimate {
    /// Average of the `k` diagonal output blocks.
    pub kernel: KernelMatrix,
    /// Frobenius norm of the averaged off-diagonal output blocks relative to
    /// the diagonal average; zero in expectation.
    pub cross_output_ratio: f64,
}

fn draw_seed(seed: u64, draw: usize) -> u64 {
    StreamKey::new(seed).child(draw as u64).value()
}

fn check_samples(m: usize) -> Result<()> {
    if m == 0 {
        return Err(Error::InvalidArgument(
            "need at least one Monte Carlo sample".into(),
        ));
    }
    Ok(())
}

/// Diagonal-block average `F Fᵀ/k` and off-diagonal-block average of
/// `f(X) f(X)ᵀ` for one draw, without forming the `k|X|`-square matrix.
fn nngp_draw(
    arch: &Architecture,
    x: ArrayView2<'_, f64>,
    seed: u64,
) -> Result<(Array2<f64>, Array2<f64>)> {
    let params = init_params(arch, seed)?;
    let f = forward(arch, &params, x)?.into_output();
    let k = arch.output_dim as f64;
    let ff = f.dot(&f.t());
    let off = if arch.output_dim > 1 {
        let s = f.sum_axis(Axis(1)).insert_axis(Axis(1));
        (s.dot(&s.t()) - &ff) / (k * (k - 1.0))
    } else {
        Array2::zeros(ff.raw_dim())
    };
    Ok((ff / k, off))
}

fn ntk_draw(arch: &Architecture, x: ArrayView2<'_, f64>, seed: u64) -> Result<Array2<f64>> {
    let params = init_params(arch, seed)?;
    let fp = forward(arch, &params, x)?;
    Ok(tangent_kernel_from_passes(arch, &params, &fp, &fp, OutputBlocks::DiagonalAverage).full)
}

/// Sums draws in index order.
fn ordered_mean(draws: &[Array2<f64>]) -> Array2<f64> {
    let mut acc = draws[0].clone();
    for d in &draws[1..] {
        acc += d;
    }
    acc / draws.len() as f64
}

fn parallel_draws(
    m: usize,
    seed: u64,
    f: impl Fn(u64) -> Result<Array2<f64>> + Sync,
) -> Result<Vec<Array2<f64>>> {
    (0..m)
        .into_par_iter()
        .map(|i| f(draw_seed(seed, i)))
        .collect()
}

fn cross_output_ratio(diag: &Array2<f64>, off: &Array2<f64>) -> f64 {
    let norm = frobenius(diag.view());
    if norm > 0.0 {
        frobenius(off.view()) / norm
    } else {
        0.0
    }
}

/// Monte Carlo NNGP kernel `(1/M) Σ_m f_m(X) f_m(X)ᵀ`, averaged over outputs.
pub fn mc_nngp(
    arch: &Architecture,
    x: ArrayView2<'_, f64>,
    m: usize,
    seed: u64,
) -> Result<NngpEstimate> {
    check_samples(m)?;
    let draws: Vec<(Array2<f64>, Array2<f64>)> = (0..m)
        .into_par_iter()
        .map(|i| nngp_draw(arch, x, draw_seed(seed, i)))
        .collect::<Result<_>>()?;
    let (diag, off): (Vec<_>, Vec<_>) = draws.into_iter().unzip();
    let base = ordered_mean(&diag);
    let cross_output_ratio = cross_output_ratio(&base, &ordered_mean(&off));
    Ok(NngpEstimate {
        kernel: KernelMatrix::new(base, arch.output_dim),
        cross_output_ratio,
    })
}

/// Monte Carlo tangent kernel: mean of the empirical NTK over `M` draws,
/// averaged over the diagonal output blocks.
pub fn mc_ntk(
    arch: &Architecture,
    x: ArrayView2<'_, f64>,
    m: usize,
    seed: u64,
) -> Result<KernelMatrix> {
    check_samples(m)?;
    let draws = parallel_draws(m, seed, |s| ntk_draw(arch, x, s))?;
    Ok(KernelMatrix::new(ordered_mean(&draws), arch.output_dim))
}

/// How the readout width of a family member is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReadoutWidth {
    /// Keep the template's output dimension.
    Fixed,
    /// Use as many outputs as the hidden width. Averaging the output-block
    /// diagonal then pools `width` i.i.d. samples per draw, so the NNGP
    /// estimate converges with width as well as with `M`.
    MatchHidden,
}

/// Width ladder over a fixed architecture template.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchFamily {
    pub template: Architecture,
    pub readout: ReadoutWidth,
}

impl ArchFamily {
    pub fn member(&self, width: usize) -> Architecture {
        let mut arch = self.template.with_hidden_width(width);
        if self.readout == ReadoutWidth::MatchHidden {
            arch.output_dim = width;
        }
        arch
    }
}

/// Relative Frobenius errors of the Monte Carlo kernels at one `(width, M)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRecord {
    pub width: usize,
    pub num_samples: usize,
    pub frobenius_error_nngp: f64,
    pub frobenius_error_ntk: f64,
    /// Errors are `‖Â − A‖_F / ‖A‖_F`.
    pub relative: bool,
}

/// One record per `(width, M)`, widths outermost. The draws for each width
/// are shared across the `M` ladder.
pub fn convergence_sweep(
    family: &ArchFamily,
    x: ArrayView2<'_, f64>,
    widths: &[usize],
    ms: &[usize],
    seed: u64,
) -> Result<Vec<ConvergenceRecord>> {
    if widths.is_empty() || ms.is_empty() {
        return Err(Error::InvalidArgument(
            "width and sample ladders must be nonempty".into(),
        ));
    }
    if widths.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument(
            "widths must be strictly ascending".into(),
        ));
    }
    for &m in ms {
        check_samples(m)?;
    }
    let (theta, k) = ntk_kernel(&family.member(widths[0]), x, x)?;
    let m_max = *ms.iter().max().expect("nonempty");
    let mut records = Vec::with_capacity(widths.len() * ms.len());
    for &width in widths {
        let arch = family.member(width);
        let nngp_draws = parallel_draws(m_max, seed, |s| nngp_draw(&arch, x, s).map(|d| d.0))?;
        let ntk_draws = parallel_draws(m_max, seed, |s| ntk_draw(&arch, x, s))?;
        for &m in ms {
            let nngp = ordered_mean(&nngp_draws[..m]);
            let ntk = ordered_mean(&ntk_draws[..m]);
            records.push(ConvergenceRecord {
                width,
                num_samples: m,
                frobenius_error_nngp: relative_frobenius(nngp.view(), k.base.view()),
                frobenius_error_ntk: relative_frobenius(ntk.view(), theta.base.view()),
                relative: true,
            });
        }
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::synth_gaussian;
    use crate::linalg::{sym_eig, SymMatrix};
    use crate::network::{Activation, ParamMode};

    fn relu(width: usize, k: usize, sw2: f64, sb2: f64) -> Architecture {
        Architecture {
            input_dim: 4,
            hidden_widths: if width == 0 { vec![] } else { vec![width] },
            output_dim: k,
            activation: Activation::Relu,
            weight_var: sw2,
            bias_var: sb2,
            param_mode: ParamMode::Ntk,
        }
    }

    fn x() -> Array2<f64> {
        synth_gaussian(4, 6, 3).unwrap().inputs
    }

    #[test]
    fn zero_weight_network_is_constant() {
        // σ_w = 0 is rejected by validation, so take a tiny value and check the limit
        let sb2 = 0.7;
        let arch = relu(8, 1, 1e-300, sb2);
        let est = mc_nngp(&arch, x().view(), 1, 0).unwrap();
        let b = init_params(&arch, draw_seed(0, 0)).unwrap().layers[1].bias[0];
        for v in est.kernel.base.iter() {
            assert!((v - sb2 * b * b).abs() < 1e-12);
        }
    }

    #[test]
    fn deterministic() {
        let arch = relu(32, 2, 2.0, 0.1);
        let a = mc_nngp(&arch, x().view(), 5, 11).unwrap();
        let b = mc_nngp(&arch, x().view(), 5, 11).unwrap();
        assert_eq!(a.kernel, b.kernel);
        assert_eq!(
            mc_ntk(&arch, x().view(), 5, 11).unwrap(),
            mc_ntk(&arch, x().view(), 5, 11).unwrap()
        );
    }

    #[test]
    fn thread_count_does_not_matter() {
        let arch = relu(16, 1, 2.0, 0.1);
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let serial = pool.install(|| mc_ntk(&arch, x().view(), 7, 3).unwrap());
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(3)
            .build()
            .unwrap();
        let parallel = pool.install(|| mc_ntk(&arch, x().view(), 7, 3).unwrap());
        assert_eq!(serial, parallel);
    }

    #[test]
    fn linear_model_ntk_is_exact_per_draw() {
        let arch = relu(0, 1, 2.0, 0.3);
        let xs = x();
        let est = mc_ntk(&arch, xs.view(), 3, 1).unwrap();
        let (theta, _) = ntk_kernel(&arch, xs.view(), xs.view()).unwrap();
        assert!(relative_frobenius(est.base.view(), theta.base.view()) < 1e-14);
    }

    #[test]
    fn single_draw_wide_ntk_is_close() {
        let arch = relu(4096, 1, 2.0, 0.1);
        let xs = x();
        let est = mc_ntk(&arch, xs.view(), 1, 5).unwrap();
        let (theta, _) = ntk_kernel(&arch, xs.view(), xs.view()).unwrap();
        let err = relative_frobenius(est.base.view(), theta.base.view());
        assert!(err < 0.1, "{err}");
    }

    #[test]
    fn nngp_estimate_is_psd() {
        let arch = relu(64, 3, 2.0, 0.1);
        let est = mc_nngp(&arch, x().view(), 4, 2).unwrap();
        let s = SymMatrix::new(est.kernel.base.clone()).unwrap();
        assert!(sym_eig(&s).unwrap().min() >= -1e-10 * s.trace());
        assert!(est.cross_output_ratio.is_finite());
    }

    #[test]
    fn sweep_shapes_and_prefix_draws() {
        let fam = ArchFamily {
            template: relu(1, 1, 2.0, 0.1),
            readout: ReadoutWidth::Fixed,
        };
        let xs = x();
        let recs = convergence_sweep(&fam, xs.view(), &[16, 64], &[2, 5], 9).unwrap();
        assert_eq!(recs.len(), 4);
        assert_eq!((recs[1].width, recs[1].num_samples), (16, 5));
        let direct = mc_ntk(&fam.member(16), xs.view(), 2, 9).unwrap();
        let (theta, _) = ntk_kernel(&fam.member(16), xs.view(), xs.view()).unwrap();
        let e = relative_frobenius(direct.base.view(), theta.base.view());
        assert!((recs[0].frobenius_error_ntk - e).abs() < 1e-15);
        assert_eq!(
            convergence_sweep(&fam, xs.view(), &[32], &[1], 0)
                .unwrap()
                .len(),
            1
        );
        assert!(convergence_sweep(&fam, xs.view(), &[64, 16], &[1], 0).is_err());
    }

    #[test]
    fn match_hidden_readout() {
        let fam = ArchFamily {
            template: relu(1, 1, 2.0, 0.1),
            readout: ReadoutWidth::MatchHidden,
        };
        assert_eq!(fam.member(128).output_dim, 128);
    }
}
