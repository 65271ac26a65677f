//! Executes a [`NetworkSpec`] on the tape.
//!
//! Descriptors run in order; each reads its sources from an environment
//! slot table. The stage-level entry points (`composite_layer`,
//! `dense_block`, `transition_block`) run a sub-range of the same table.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::RngCore;

use crate::arch::params::{param_key, ParamStore, Params, Slot};
use crate::arch::spec::{LayerKind, NetworkSpec};
use crate::autodiff::{concat_channels, Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{
    batch_norm, conv3d, conv_kernels, dropout, relu, transposed_conv3d, upsample, upsamplers,
    BnConfig, ConvKernel, ConvOptions, Mode, RunningStats, Upsampler,
};
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct ForwardOptions {
    pub mode: Mode,
    /// Registered convolution kernel name.
    pub conv_kernel: String,
    pub bn: BnConfig,
    /// Record parameter leaves as requiring gradients.
    pub trainable: bool,
}

impl ForwardOptions {
    pub fn infer() -> Self {
        ForwardOptions {
            mode: Mode::Infer,
            conv_kernel: "gemm".into(),
            bn: BnConfig::default(),
            trainable: false,
        }
    }

    pub fn train() -> Self {
        ForwardOptions {
            mode: Mode::Train,
            trainable: true,
            ..Self::infer()
        }
    }

    pub fn with_kernel(mut self, name: &str) -> Self {
        self.conv_kernel = name.into();
        self
    }
}

pub struct Forward<'t, 'a, T: Real> {
    spec: &'a NetworkSpec,
    tape: &'t Tape<T>,
    mode: Mode,
    bn: BnConfig,
    kernel: Arc<dyn ConvKernel<T>>,
    upsampler: Option<Arc<dyn Upsampler>>,
    rng: Option<&'a mut dyn RngCore>,
    params: BTreeMap<String, Var<'t, T>>,
    stats: BTreeMap<String, RunningStats>,
    env: Vec<Option<Var<'t, T>>>,
}

impl<'t, 'a, T: Real> Forward<'t, 'a, T> {
    /// Places every learned tensor of `store` on `tape` as a leaf. Dropout in
    /// train mode draws from `rng`.
    pub fn new(
        spec: &'a NetworkSpec,
        store: &ParamStore,
        tape: &'t Tape<T>,
        opts: &ForwardOptions,
        rng: Option<&'a mut dyn RngCore>,
    ) -> Result<Self> {
        let mut params = BTreeMap::new();
        for (key, _, t) in store.learnable() {
            params.insert(key, tape.leaf(t.cast::<T>(), opts.trainable));
        }
        Self::with_leaves(spec, store, tape, opts, rng, params)
    }

    /// Like [`Forward::new`] but reads parameters from caller-owned leaves
    /// keyed like [`ParamStore::learnable`]. `store` still supplies the BN
    /// running statistics.
    pub fn with_leaves(
        spec: &'a NetworkSpec,
        store: &ParamStore,
        tape: &'t Tape<T>,
        opts: &ForwardOptions,
        rng: Option<&'a mut dyn RngCore>,
        params: BTreeMap<String, Var<'t, T>>,
    ) -> Result<Self> {
        store.check_against(spec)?;
        let kernel = conv_kernels::<T>().get(&opts.conv_kernel)?;
        let hp = spec.hyper();
        let upsampler = if hp.uses_deconv() {
            None
        } else {
            Some(upsamplers().get(&hp.upsample_mode)?)
        };
        let mut stats = BTreeMap::new();
        for (name, p) in store.iter() {
            if let Params::BatchNorm { stats: s, .. } = p {
                stats.insert(name.clone(), s.clone());
            }
        }
        Ok(Forward {
            spec,
            tape,
            mode: opts.mode,
            bn: opts.bn,
            kernel,
            upsampler,
            rng,
            params,
            stats,
            env: vec![None; spec.descriptors().len()],
        })
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    /// Leaf holding the parameter `key` (`"<descriptor>.<slot>"`).
    pub fn param(&self, key: &str) -> Option<Var<'t, T>> {
        self.params.get(key).copied()
    }

    /// Full network: `[N, modalities, D, H, W]` to logits `[N, classes, D, H, W]`.
    pub fn run(&mut self, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let [_, c, d, h, w] = x.value().dims5()?;
        let hp = self.spec.hyper();
        if c != hp.num_modalities {
            return Err(Error::ShapeMismatch {
                op: "forward_full",
                lhs: x.shape(),
                rhs: vec![hp.num_modalities],
            });
        }
        let div = hp.size_divisor();
        if [d, h, w].iter().any(|e| e % div != 0) {
            return Err(Error::InvalidShape {
                shape: x.shape(),
                reason: format!("spatial extents must be multiples of {div}"),
            });
        }
        self.env[0] = Some(x);
        self.exec_range(1..self.spec.descriptors().len())?;
        self.slot(self.spec.classifier)
    }

    /// Composite layer `layer` of `block` (both zero-based) on its
    /// concatenated input.
    pub fn composite_layer(&mut self, x: Var<'t, T>, block: usize, layer: usize) -> Result<Var<'t, T>> {
        let spec = self.spec;
        let l = spec
            .blocks
            .get(block)
            .and_then(|b| b.layers.get(layer))
            .ok_or_else(|| Error::invalid(format!("no composite layer {block}.{layer}")))?;
        self.bind(l.input, x)?;
        self.exec_range(l.body.clone())?;
        self.slot(l.output())
    }

    /// Dense block `block` (zero-based): returns the block input concatenated
    /// with every layer output.
    pub fn dense_block(&mut self, x: Var<'t, T>, block: usize) -> Result<Var<'t, T>> {
        let spec = self.spec;
        let b = spec
            .blocks
            .get(block)
            .ok_or_else(|| Error::invalid(format!("no dense block {block}")))?;
        self.bind(b.input, x)?;
        self.exec_range(b.range())?;
        self.slot(b.output)
    }

    /// Transition `index` (zero-based): compression then stride-2 conv.
    pub fn transition_block(&mut self, x: Var<'t, T>, index: usize) -> Result<Var<'t, T>> {
        let spec = self.spec;
        let r = spec
            .transitions
            .get(index)
            .ok_or_else(|| Error::invalid(format!("no transition {index}")))?;
        let source = spec.descriptors()[r.start].sources[0];
        self.bind(source, x)?;
        self.exec_range(r.clone())?;
        self.slot(r.end - 1)
    }

    /// Running statistics after this pass. Unchanged from the store in
    /// infer mode.
    pub fn bn_stats(&self) -> &BTreeMap<String, RunningStats> {
        &self.stats
    }

    pub fn into_bn_updates(self) -> BTreeMap<String, RunningStats> {
        self.stats
    }

    /// Gradients of every parameter after `backward`, keyed like
    /// [`ParamStore::learnable`]. Parameters the loss does not reach get
    /// zeros.
    pub fn take_gradients(&self) -> BTreeMap<String, Tensor<T>> {
        self.params
            .iter()
            .map(|(k, v)| {
                let g = v.take_grad().unwrap_or_else(|| Tensor::zeros(&v.shape()));
                (k.clone(), g)
            })
            .collect()
    }

    fn bind(&mut self, slot: usize, x: Var<'t, T>) -> Result<()> {
        let d = &self.spec.descriptors()[slot];
        let c = x.value().dims5()?[1];
        if c != d.out_channels {
            return Err(Error::ShapeMismatch {
                op: "channel count",
                lhs: x.shape(),
                rhs: vec![d.out_channels],
            });
        }
        self.env[slot] = Some(x);
        Ok(())
    }

    fn slot(&self, i: usize) -> Result<Var<'t, T>> {
        self.env[i].ok_or_else(|| {
            Error::invalid(format!("{} was not computed", self.spec.descriptors()[i].name))
        })
    }

    fn exec_range(&mut self, range: std::ops::Range<usize>) -> Result<()> {
        for i in range {
            let out = self.exec(i)?;
            self.env[i] = Some(out);
        }
        Ok(())
    }

    fn exec(&mut self, i: usize) -> Result<Var<'t, T>> {
        let spec = self.spec;
        let d = &spec.descriptors()[i];
        let inputs = d
            .sources
            .iter()
            .map(|&s| self.slot(s))
            .collect::<Result<Vec<_>>>()?;
        let param = |slot| {
            self.params
                .get(&param_key(&d.name, slot))
                .copied()
                .ok_or_else(|| Error::SpecMismatch(format!("no {} for {}", slot.suffix(), d.name)))
        };
        match d.kind {
            LayerKind::Input => Err(Error::invalid("input descriptor cannot be executed")),
            LayerKind::Conv {
                stride,
                padding,
                bias,
                ..
            } => {
                let x = inputs[0];
                if stride > 1 {
                    let [.., dd, h, w] = x.value().dims5()?;
                    if [dd, h, w].iter().any(|e| e % stride != 0) {
                        return Err(Error::InvalidShape {
                            shape: x.shape(),
                            reason: format!("{}: odd spatial extent before stride {stride}", d.name),
                        });
                    }
                }
                let b = if bias { Some(param(Slot::Bias)?) } else { None };
                conv3d(x, param(Slot::Weight)?, b, ConvOptions::new(stride, padding), &self.kernel)
            }
            LayerKind::TransposedConv { bias, .. } => {
                let b = if bias { Some(param(Slot::Bias)?) } else { None };
                transposed_conv3d(inputs[0], param(Slot::Weight)?, b)
            }
            LayerKind::BatchNorm { relu: with_relu } => {
                let (gamma, beta) = (param(Slot::Gamma)?, param(Slot::Beta)?);
                let stats = self
                    .stats
                    .get_mut(&d.name)
                    .ok_or_else(|| Error::SpecMismatch(format!("no running stats for {}", d.name)))?;
                let y = batch_norm(inputs[0], gamma, beta, stats, self.mode, &self.bn)?;
                if with_relu {
                    relu(y)
                } else {
                    Ok(y)
                }
            }
            LayerKind::Dropout { rate } => {
                if self.mode == Mode::Infer || rate == 0.0 {
                    return Ok(inputs[0]);
                }
                let rng = self
                    .rng
                    .as_deref_mut()
                    .ok_or_else(|| Error::invalid("train-mode dropout needs a random generator"))?;
                dropout(inputs[0], rate, self.mode, rng)
            }
            LayerKind::Concat => {
                if inputs.len() == 1 {
                    Ok(inputs[0])
                } else {
                    concat_channels(&inputs)
                }
            }
            LayerKind::Upsample { factor } => {
                let up = self
                    .upsampler
                    .as_ref()
                    .ok_or_else(|| Error::invalid("no interpolator configured"))?;
                upsample(inputs[0], factor, up.as_ref())
            }
        }
    }
}

/// Runs the whole network on `x` without tracking parameter gradients.
/// Returns the logits and the running statistics after the pass.
pub fn forward_full<'a, T: Real>(
    spec: &'a NetworkSpec,
    store: &ParamStore,
    x: &Tensor<T>,
    opts: &ForwardOptions,
    rng: Option<&'a mut dyn RngCore>,
) -> Result<(Tensor<T>, BTreeMap<String, RunningStats>)> {
    let tape = Tape::new();
    let opts = ForwardOptions {
        trainable: false,
        ..opts.clone()
    };
    let mut fwd = Forward::new(spec, store, &tape, &opts, rng)?;
    let logits = fwd.run(tape.constant(x.clone()))?;
    let out = logits.value().clone();
    Ok((out, fwd.into_bn_updates()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::{build_network, HyperParams};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> HyperParams {
        HyperParams {
            growth_rate: 2,
            stem_channels: 4,
            layers_per_block: 1,
            upsample_path_channels: 2,
            ..Default::default()
        }
    }

    fn input(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn output_shape_follows_input() {
        let (spec, store) = build_network(&tiny(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        for s in [16, 32] {
            let x = input(&[1, 2, s, s, 16], 1);
            let (y, _) = forward_full(&spec, &store, &x, &ForwardOptions::infer(), None).unwrap();
            assert_eq!(y.shape(), &[1, 4, s, s, 16]);
        }
    }

    #[test]
    fn indivisible_extent_rejected() {
        let (spec, store) = build_network(&tiny(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let x = input(&[1, 2, 16, 16, 24], 1);
        assert!(forward_full(&spec, &store, &x, &ForwardOptions::infer(), None).is_err());
    }

    #[test]
    fn infer_is_deterministic_and_pure() {
        let (spec, store) = build_network(&tiny(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let x = input(&[1, 2, 16, 16, 16], 2);
        let (a, sa) = forward_full(&spec, &store, &x, &ForwardOptions::infer(), None).unwrap();
        let (b, _) = forward_full(&spec, &store, &x, &ForwardOptions::infer(), None).unwrap();
        assert_eq!(a, b);
        let Some(Params::BatchNorm { stats, .. }) = store.get("stem.bn1") else {
            panic!()
        };
        assert_eq!(&sa["stem.bn1"], stats);
    }

    #[test]
    fn train_mode_updates_running_stats_and_needs_rng() {
        let (spec, store) = build_network(&tiny(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let x = input(&[2, 2, 16, 16, 16], 3);
        assert!(forward_full(&spec, &store, &x, &ForwardOptions::train(), None).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (_, stats) =
            forward_full(&spec, &store, &x, &ForwardOptions::train(), Some(&mut rng)).unwrap();
        assert_ne!(stats["stem.bn1"], RunningStats::new(4));
    }

    #[test]
    fn kernels_agree_on_the_network() {
        let (spec, store) = build_network(&tiny(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let x = input(&[1, 2, 16, 16, 16], 4).cast::<f64>();
        let run = |k: &str| {
            forward_full(&spec, &store, &x, &ForwardOptions::infer().with_kernel(k), None)
                .unwrap()
                .0
        };
        let (a, b) = (run("gemm"), run("direct"));
        let diff = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(p, q)| (p - q).abs())
            .fold(0.0, f64::max);
        assert!(diff < 1e-10, "{diff}");
    }

    #[test]
    fn deconv_mode_runs() {
        let hp = HyperParams {
            upsample_mode: crate::arch::DECONV_MODE.into(),
            ..tiny()
        };
        let (spec, store) = build_network(&hp, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let x = input(&[1, 2, 16, 16, 16], 1);
        let (y, _) = forward_full(&spec, &store, &x, &ForwardOptions::infer(), None).unwrap();
        assert_eq!(y.shape(), &[1, 4, 16, 16, 16]);
    }
}
