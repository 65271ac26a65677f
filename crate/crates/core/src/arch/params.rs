//! Learned weights and BN running statistics keyed by descriptor name.

use std::collections::BTreeMap;

use rand::RngCore;

use crate::arch::spec::{LayerDescriptor, LayerKind, NetworkSpec};
use crate::error::{Error, Result};
use crate::nn::RunningStats;
use crate::tensor::Tensor;
use crate::train::he_init;

#[derive(Clone, Debug, PartialEq)]
pub enum Params {
    Conv {
        weight: Tensor,
        bias: Option<Tensor>,
    },
    BatchNorm {
        gamma: Tensor,
        beta: Tensor,
        stats: RunningStats,
    },
}

/// Which tensor of a descriptor a parameter key refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Slot {
    Weight,
    Bias,
    Gamma,
    Beta,
}

impl Slot {
    pub fn suffix(self) -> &'static str {
        match self {
            Slot::Weight => "weight",
            Slot::Bias => "bias",
            Slot::Gamma => "gamma",
            Slot::Beta => "beta",
        }
    }

    /// Weight decay applies to convolution weights and biases only.
    pub fn decays(self) -> bool {
        matches!(self, Slot::Weight | Slot::Bias)
    }
}

/// `"<descriptor>.<slot>"`.
pub fn param_key(descriptor: &str, slot: Slot) -> String {
    format!("{descriptor}.{}", slot.suffix())
}

/// Expected weight shape of a weighted descriptor.
pub fn weight_shape(d: &LayerDescriptor) -> Option<Vec<usize>> {
    match d.kind {
        LayerKind::Conv { kernel: k, .. } => Some(vec![d.out_channels, d.in_channels, k, k, k]),
        LayerKind::TransposedConv { factor: f, .. } => {
            Some(vec![d.in_channels, d.out_channels, f, f, f])
        }
        _ => None,
    }
}

fn has_bias(kind: &LayerKind) -> bool {
    matches!(
        kind,
        LayerKind::Conv { bias: true, .. } | LayerKind::TransposedConv { bias: true, .. }
    )
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: BTreeMap<String, Params>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, params: Params) -> Option<Params> {
        self.entries.insert(name.into(), params)
    }

    pub fn get(&self, name: &str) -> Option<&Params> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Params> {
        self.entries.get_mut(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Params)> {
        self.entries.iter()
    }

    /// Every learned tensor with its key and slot, in key order.
    pub fn learnable(&self) -> Vec<(String, Slot, &Tensor)> {
        let mut out = Vec::new();
        for (name, p) in &self.entries {
            match p {
                Params::Conv { weight, bias } => {
                    out.push((param_key(name, Slot::Weight), Slot::Weight, weight));
                    if let Some(b) = bias {
                        out.push((param_key(name, Slot::Bias), Slot::Bias, b));
                    }
                }
                Params::BatchNorm { gamma, beta, .. } => {
                    out.push((param_key(name, Slot::Gamma), Slot::Gamma, gamma));
                    out.push((param_key(name, Slot::Beta), Slot::Beta, beta));
                }
            }
        }
        out
    }

    /// Mutable access to every learned tensor, in the same order as
    /// [`ParamStore::learnable`].
    pub fn learnable_mut(&mut self) -> Vec<(String, Slot, &mut Tensor)> {
        let mut out = Vec::new();
        for (name, p) in &mut self.entries {
            match p {
                Params::Conv { weight, bias } => {
                    out.push((param_key(name, Slot::Weight), Slot::Weight, weight));
                    if let Some(b) = bias {
                        out.push((param_key(name, Slot::Bias), Slot::Bias, b));
                    }
                }
                Params::BatchNorm { gamma, beta, .. } => {
                    out.push((param_key(name, Slot::Gamma), Slot::Gamma, gamma));
                    out.push((param_key(name, Slot::Beta), Slot::Beta, beta));
                }
            }
        }
        out
    }

    /// Total element count of learned tensors.
    pub fn learned_elements(&self) -> usize {
        self.learnable().iter().map(|(_, _, t)| t.numel()).sum()
    }

    /// Replaces BN running statistics, e.g. with those produced by a
    /// train-mode forward pass.
    pub fn apply_bn_updates(&mut self, updates: BTreeMap<String, RunningStats>) -> Result<()> {
        for (name, new) in updates {
            match self.entries.get_mut(&name) {
                Some(Params::BatchNorm { stats, .. }) if stats.channels() == new.channels() => {
                    *stats = new;
                }
                _ => return Err(Error::invalid(format!("no batch norm entry '{name}'"))),
            }
        }
        Ok(())
    }

    /// Every parameterized descriptor has exactly one entry of the right
    /// shape, and nothing else is stored.
    pub fn check_against(&self, spec: &NetworkSpec) -> Result<()> {
        let mismatch = |msg: String| Err(Error::SpecMismatch(msg));
        let mut expected = 0;
        for d in spec.descriptors().iter().filter(|d| d.kind.has_params()) {
            expected += 1;
            let Some(p) = self.entries.get(&d.name) else {
                return mismatch(format!("missing parameters for {}", d.name));
            };
            match (p, &d.kind) {
                (Params::Conv { weight, bias }, kind) if kind.is_weighted() => {
                    if Some(weight.shape().to_vec()) != weight_shape(d) {
                        return mismatch(format!(
                            "{} weight shape {:?}, expected {:?}",
                            d.name,
                            weight.shape(),
                            weight_shape(d)
                        ));
                    }
                    let want_bias = has_bias(kind).then(|| vec![d.out_channels]);
                    if bias.as_ref().map(|b| b.shape().to_vec()) != want_bias {
                        return mismatch(format!("{} bias does not match", d.name));
                    }
                }
                (Params::BatchNorm { gamma, beta, stats }, LayerKind::BatchNorm { .. }) => {
                    let c = d.out_channels;
                    if gamma.shape() != [c] || beta.shape() != [c] || stats.channels() != c {
                        return mismatch(format!("{} batch norm is not {c} channels", d.name));
                    }
                }
                _ => return mismatch(format!("{} has the wrong parameter kind", d.name)),
            }
        }
        if self.entries.len() != expected {
            let orphans: Vec<&String> = self
                .entries
                .keys()
                .filter(|k| spec.descriptor(k).is_none_or(|d| !d.kind.has_params()))
                .collect();
            return mismatch(format!("orphan entries {orphans:?}"));
        }
        Ok(())
    }
}

/// Builds the topology for `hp` and He-initializes its parameters:
/// Gaussian weights with std `sqrt(2 / fan_in)`, zero biases, unit BN
/// scale, zero BN shift.
pub fn build_network(
    hp: &crate::arch::HyperParams,
    rng: &mut dyn RngCore,
) -> Result<(NetworkSpec, ParamStore)> {
    let spec = NetworkSpec::build(hp)?;
    let mut store = ParamStore::new();
    for d in spec.descriptors() {
        let params = match d.kind {
            LayerKind::Conv { kernel, bias, .. } => Params::Conv {
                weight: he_init(
                    &weight_shape(d).expect("conv shape"),
                    d.in_channels * kernel.pow(3),
                    rng,
                )?,
                bias: bias.then(|| Tensor::zeros(&[d.out_channels])),
            },
            LayerKind::TransposedConv { bias, .. } => Params::Conv {
                weight: he_init(&weight_shape(d).expect("deconv shape"), d.in_channels, rng)?,
                bias: bias.then(|| Tensor::zeros(&[d.out_channels])),
            },
            LayerKind::BatchNorm { .. } => Params::BatchNorm {
                gamma: Tensor::full(&[d.out_channels], 1.0),
                beta: Tensor::zeros(&[d.out_channels]),
                stats: RunningStats::new(d.out_channels),
            },
            _ => continue,
        };
        store.insert(d.name.clone(), params);
    }
    store.check_against(&spec)?;
    Ok((spec, store))
}
