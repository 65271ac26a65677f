//! Finite-difference suite over every differentiable op and a tiny network.
//!
//! Checks run in `f64`: central differences of an `f32` loss carry round-off
//! near `1e-4` relative, which swamps small gradient components under the
//! `max(|a|, |n|, 1e-8)` denominator.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::arch::{build_network, Forward, ForwardOptions, HyperParams};
use crate::autodiff::{
    concat_channels, grad_check_with, weighted_sum, GradCheckOptions, GradCheckReport, Var,
};
use crate::error::Result;
use crate::nn::{
    batch_norm, conv3d, conv_kernels, cross_entropy, dropout, relu, softmax_channels,
    transposed_conv3d, upsample, upsamplers, BnConfig, ConvOptions, Mode, RunningStats,
};
use crate::tensor::Tensor;

/// Tolerance for single ops.
pub const OP_TOL: f64 = 1e-3;
/// Tolerance for the end-to-end network.
pub const NETWORK_TOL: f64 = 1e-2;

#[derive(Clone, Debug)]
pub struct SuiteCase {
    pub name: String,
    pub tol: f64,
    pub report: GradCheckReport,
}

impl SuiteCase {
    pub fn pass(&self) -> bool {
        self.report.pass
    }
}

struct Gen(ChaCha8Rng);

impl Gen {
    fn tensor(&mut self, shape: &[usize]) -> Tensor<f64> {
        Tensor::from_fn(shape, |_| self.0.random_range(-1.0..1.0))
    }

    /// Values at least `gap` away from zero.
    fn off_kink(&mut self, shape: &[usize], gap: f64) -> Tensor<f64> {
        Tensor::from_fn(shape, |_| {
            let v: f64 = self.0.random_range(gap..1.0);
            if self.0.random_bool(0.5) {
                v
            } else {
                -v
            }
        })
    }

    fn labels(&mut self, n: usize, classes: u8) -> Vec<u8> {
        (0..n).map(|_| self.0.random_range(0..classes)).collect()
    }
}

fn case<F>(name: &str, tol: f64, inputs: &[Tensor<f64>], opts: GradCheckOptions, f: F) -> Result<SuiteCase>
where
    F: for<'t> Fn(&'t crate::autodiff::Tape<f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>>,
{
    let opts = GradCheckOptions { tol, ..opts };
    Ok(SuiteCase {
        name: name.to_string(),
        tol,
        report: grad_check_with(f, inputs, &opts)?,
    })
}

/// Hyperparameters of the smallest network used for end-to-end checks.
pub fn tiny_hyper() -> HyperParams {
    HyperParams {
        growth_rate: 2,
        stem_channels: 4,
        layers_per_block: 1,
        upsample_path_channels: 2,
        ..Default::default()
    }
}

/// Runs every op-level check plus the tiny network. Each case reports its
/// own tolerance.
pub fn grad_check_suite(seed: u64) -> Result<Vec<SuiteCase>> {
    let mut cases = op_cases(seed)?;
    cases.extend(network_cases(seed)?);
    Ok(cases)
}

pub fn op_cases(seed: u64) -> Result<Vec<SuiteCase>> {
    let mut g = Gen(ChaCha8Rng::seed_from_u64(seed));
    let exact = GradCheckOptions::new(1e-3, OP_TOL);
    let mut out = Vec::new();

    for kernel in conv_kernels::<f64>().names() {
        for (stride, shape) in [(1, [2, 3, 5, 5, 5]), (2, [2, 3, 5, 5, 5])] {
            let k = conv_kernels::<f64>().get(kernel)?;
            let opts = ConvOptions::new(stride, 1);
            let out_e = (5 + 2 - 3) / stride + 1;
            let w = g.tensor(&[2, 2, out_e, out_e, out_e]);
            out.push(case(
                &format!("conv3d {kernel} s={stride}"),
                OP_TOL,
                &[g.tensor(&shape), g.tensor(&[2, 3, 3, 3, 3]), g.tensor(&[2])],
                exact.clone(),
                move |_, v| weighted_sum(conv3d(v[0], v[1], Some(v[2]), opts, &k)?, &w),
            )?);
        }
    }

    let w = g.tensor(&[2, 3, 4, 4, 4]);
    out.push(case(
        "batch_norm train",
        OP_TOL,
        &[g.tensor(&[2, 3, 4, 4, 4]), g.tensor(&[3]), g.tensor(&[3])],
        exact.clone(),
        move |_, v| {
            let mut stats = RunningStats::new(3);
            let y = batch_norm(v[0], v[1], v[2], &mut stats, Mode::Train, &BnConfig::default())?;
            weighted_sum(y, &w)
        },
    )?);

    let w = g.tensor(&[2, 3, 4, 4, 4]);
    out.push(case(
        "relu off-kink",
        OP_TOL,
        &[g.off_kink(&[2, 3, 4, 4, 4], 0.01)],
        exact.clone(),
        move |_, v| weighted_sum(relu(v[0])?, &w),
    )?);

    let labels = g.labels(27, 4);
    out.push(case(
        "softmax + cross_entropy",
        OP_TOL,
        &[g.tensor(&[1, 4, 3, 3, 3])],
        exact.clone(),
        move |_, v| cross_entropy(v[0], &labels),
    )?);

    let w = g.tensor(&[2, 4, 2, 2, 3]);
    out.push(case(
        "softmax_channels",
        OP_TOL,
        &[g.tensor(&[2, 4, 2, 2, 3])],
        exact.clone(),
        move |_, v| weighted_sum(softmax_channels(v[0])?, &w),
    )?);

    for name in upsamplers().names() {
        let up = upsamplers().get(name)?;
        let w = g.tensor(&[1, 2, 6, 6, 6]);
        out.push(case(
            &format!("upsample {name} x2"),
            OP_TOL,
            &[g.tensor(&[1, 2, 3, 3, 3])],
            exact.clone(),
            move |_, v| weighted_sum(upsample(v[0], 2, up.as_ref())?, &w),
        )?);
    }

    let w = g.tensor(&[1, 5, 2, 2, 2]);
    out.push(case(
        "concat_channels",
        OP_TOL,
        &[g.tensor(&[1, 2, 2, 2, 2]), g.tensor(&[1, 3, 2, 2, 2])],
        exact.clone(),
        move |_, v| weighted_sum(concat_channels(&[v[0], v[1]])?, &w),
    )?);

    let w = g.tensor(&[2, 3, 4, 4, 4]);
    let mask_seed = seed ^ 0x5eed;
    out.push(case(
        "dropout train",
        OP_TOL,
        &[g.tensor(&[2, 3, 4, 4, 4])],
        exact.clone(),
        move |_, v| {
            let mut rng = ChaCha8Rng::seed_from_u64(mask_seed);
            weighted_sum(dropout(v[0], 0.2, Mode::Train, &mut rng)?, &w)
        },
    )?);

    let w = g.tensor(&[1, 2, 4, 4, 4]);
    out.push(case(
        "transposed_conv3d x2",
        OP_TOL,
        &[g.tensor(&[1, 3, 2, 2, 2]), g.tensor(&[3, 2, 2, 2, 2]), g.tensor(&[2])],
        exact.clone(),
        move |_, v| weighted_sum(transposed_conv3d(v[0], v[1], Some(v[2]))?, &w),
    )?);

    let w = g.tensor(&[3, 4]);
    out.push(case(
        "elementwise add/sub/mul/max",
        OP_TOL,
        &[g.tensor(&[3, 4]), g.off_kink(&[3, 4], 0.05)],
        exact,
        move |_, v| {
            let a = v[0].mul(v[1])?.add(v[0])?.sub(v[1].mul(0.5)?)?;
            weighted_sum(a.maximum(v[1])?, &w)
        },
    )?);
    Ok(out)
}

/// End-to-end checks of the tiny network on `[1, 2, 16^3]` (inference-mode
/// normalization, since the deepest stage is a single voxel) and on
/// `[4, 2, 16^3]` in train mode with batch statistics and dropout. Smaller
/// train batches saturate the deepest normalization and leave gradients
/// dominated by round-off.
pub fn network_cases(seed: u64) -> Result<Vec<SuiteCase>> {
    let mut out = Vec::new();
    for (name, batch, opts) in [
        ("tiny network infer [1,2,16^3]", 1, ForwardOptions::infer()),
        ("tiny network train [4,2,16^3]", 4, ForwardOptions::train()),
    ] {
        out.push(network_case(name, batch, 16, &opts, seed)?);
    }
    Ok(out)
}

pub fn network_case(name: &str, batch: usize, size: usize, opts: &ForwardOptions, seed: u64) -> Result<SuiteCase> {
    let mut g = Gen(ChaCha8Rng::seed_from_u64(seed.wrapping_add(17)));
    let (spec, store) = build_network(&tiny_hyper(), &mut g.0)?;
    let keys: Vec<String> = store.learnable().into_iter().map(|(k, _, _)| k).collect();
    let mut inputs = vec![g.tensor(&[batch, 2, size, size, size])];
    inputs.extend(store.learnable().into_iter().map(|(_, _, t)| t.cast::<f64>()));
    let labels = g.labels(batch * size * size * size, 4);
    let opts = ForwardOptions {
        conv_kernel: "gemm".into(),
        ..opts.clone()
    };
    let dropout_seed = seed ^ 0xd50;
    let check = GradCheckOptions::new(1e-7, NETWORK_TOL)
        .sampled(3, seed)
        .skipping_kinks();
    case(name, NETWORK_TOL, &inputs, check, move |tape, v| {
        let leaves: BTreeMap<String, Var<'_, f64>> = keys.iter().cloned().zip(v[1..].iter().copied()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(dropout_seed);
        let mut fwd = Forward::with_leaves(&spec, &store, tape, &opts, Some(&mut rng), leaves)?;
        let logits = fwd.run(v[0])?;
        cross_entropy(logits, &labels)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_op_passes() {
        for c in op_cases(3).unwrap() {
            assert!(c.pass(), "{}: {:?}", c.name, c.report);
            assert!(c.report.checked > 0, "{}", c.name);
        }
    }
}
