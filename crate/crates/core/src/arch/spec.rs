//! Layer-descriptor form of the network.
//!
//! The builder emits one descriptor per op in execution order. Each one
//! names the earlier descriptors it reads from, so channel bookkeeping and
//! spatial scale can be checked without running anything.

use std::fmt::Write as _;
use std::ops::Range;

use crate::arch::hyper::{HyperParams, BOTTLENECK_FACTOR, STEM_LAYERS};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub enum LayerKind {
    Input,
    Conv {
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
    },
    /// Batch normalization, optionally followed by ReLU.
    BatchNorm { relu: bool },
    Dropout { rate: f64 },
    Concat,
    Upsample { factor: usize },
    TransposedConv { factor: usize, bias: bool },
}

impl LayerKind {
    pub fn label(&self) -> &'static str {
        match self {
            LayerKind::Input => "input",
            LayerKind::Conv { .. } => "conv",
            LayerKind::BatchNorm { relu: true } => "bn_relu",
            LayerKind::BatchNorm { relu: false } => "bn",
            LayerKind::Dropout { .. } => "dropout",
            LayerKind::Concat => "concat",
            LayerKind::Upsample { .. } => "upsample",
            LayerKind::TransposedConv { .. } => "deconv",
        }
    }

    /// Convolutions (including transposed) carry weights and count toward
    /// depth.
    pub fn is_weighted(&self) -> bool {
        matches!(self, LayerKind::Conv { .. } | LayerKind::TransposedConv { .. })
    }

    pub fn has_params(&self) -> bool {
        self.is_weighted() || matches!(self, LayerKind::BatchNorm { .. })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerDescriptor {
    pub name: String,
    pub kind: LayerKind,
    pub in_channels: usize,
    pub out_channels: usize,
    /// Indices of the descriptors this one reads, in concatenation order.
    pub sources: Vec<usize>,
    /// Output resolution as a divisor of the input resolution.
    pub scale: usize,
}

impl LayerDescriptor {
    /// Learned parameter count: conv `C_out * C_in * k^3 (+ C_out)`, BN
    /// `2 * C`. Running statistics are not learned and are excluded.
    pub fn param_count(&self) -> usize {
        match self.kind {
            LayerKind::Conv { kernel, bias, .. } => {
                self.out_channels * self.in_channels * kernel.pow(3)
                    + if bias { self.out_channels } else { 0 }
            }
            LayerKind::TransposedConv { factor, bias } => {
                self.out_channels * self.in_channels * factor.pow(3)
                    + if bias { self.out_channels } else { 0 }
            }
            LayerKind::BatchNorm { .. } => 2 * self.out_channels,
            _ => 0,
        }
    }
}

/// One composite layer: the concatenation feeding it and the op range
/// BN-ReLU-conv1-BN-ReLU-conv3-dropout.
#[derive(Clone, Debug, PartialEq)]
pub struct CompositeSpec {
    pub input: usize,
    pub body: Range<usize>,
}

impl CompositeSpec {
    pub fn output(&self) -> usize {
        self.body.end - 1
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockSpec {
    /// Descriptor whose output enters the block.
    pub input: usize,
    pub layers: Vec<CompositeSpec>,
    /// Concatenation of the block input and every layer output.
    pub output: usize,
    pub scale: usize,
}

impl BlockSpec {
    pub fn range(&self) -> Range<usize> {
        self.layers[0].input..self.output + 1
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FusionPath {
    pub source: usize,
    pub range: Range<usize>,
    pub scale: usize,
}

impl FusionPath {
    /// Descriptor that produces the full-resolution path output.
    pub fn output(&self) -> usize {
        if self.range.is_empty() {
            self.source
        } else {
            self.range.end - 1
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkSpec {
    hp: HyperParams,
    descriptors: Vec<LayerDescriptor>,
    /// Full-resolution stem output (the first fusion source).
    pub stem_output: usize,
    /// Stem ops after the input, ending with the stride-2 conv.
    pub stem: Range<usize>,
    pub blocks: Vec<BlockSpec>,
    pub transitions: Vec<Range<usize>>,
    /// BN-ReLU applied to the last block output.
    pub final_norm: usize,
    pub fusion: Vec<FusionPath>,
    pub fusion_concat: usize,
    pub classifier: usize,
}

struct Builder {
    descriptors: Vec<LayerDescriptor>,
}

impl Builder {
    fn push(&mut self, name: String, kind: LayerKind, sources: Vec<usize>, out: Option<usize>) -> usize {
        let in_channels: usize = sources.iter().map(|&s| self.descriptors[s].out_channels).sum();
        let src_scale = sources.first().map_or(1, |&s| self.descriptors[s].scale);
        let scale = match kind {
            LayerKind::Conv { stride, .. } => src_scale * stride,
            LayerKind::Upsample { factor } | LayerKind::TransposedConv { factor, .. } => {
                src_scale / factor
            }
            _ => src_scale,
        };
        self.descriptors.push(LayerDescriptor {
            name,
            kind,
            in_channels,
            out_channels: out.unwrap_or(in_channels),
            sources,
            scale,
        });
        self.descriptors.len() - 1
    }

    fn conv(&mut self, name: String, src: usize, out: usize, kernel: usize, stride: usize, bias: bool) -> usize {
        let kind = LayerKind::Conv {
            kernel,
            stride,
            padding: (kernel - 1) / 2,
            bias,
        };
        self.push(name, kind, vec![src], Some(out))
    }

    fn bn_relu(&mut self, name: String, src: usize) -> usize {
        self.push(name, LayerKind::BatchNorm { relu: true }, vec![src], None)
    }

    fn out(&self, i: usize) -> usize {
        self.descriptors[i].out_channels
    }
}

impl NetworkSpec {
    pub fn build(hp: &HyperParams) -> Result<Self> {
        hp.validate()?;
        let k = hp.growth_rate;
        let k0 = hp.stem_channels;
        let mut b = Builder {
            descriptors: Vec::new(),
        };
        let input = b.push("input".into(), LayerKind::Input, vec![], Some(hp.num_modalities));

        let mut x = input;
        for i in 1..=STEM_LAYERS {
            x = b.conv(format!("stem.conv{i}"), x, k0, 3, 1, false);
            x = b.bn_relu(format!("stem.bn{i}"), x);
        }
        let stem_output = x;
        x = b.conv("stem.down".into(), x, k0, 3, 2, false);
        let stem = input + 1..x + 1;

        let mut blocks = Vec::new();
        let mut transitions = Vec::new();
        for bi in 1..=hp.num_blocks {
            let block_in = x;
            let scale = b.descriptors[block_in].scale;
            let mut feeds = vec![block_in];
            let mut layers = Vec::new();
            for li in 1..=hp.layers_per_block {
                let p = format!("block{bi}.layer{li}");
                let cat = b.push(format!("{p}.concat"), LayerKind::Concat, feeds.clone(), None);
                let h = b.bn_relu(format!("{p}.bn1"), cat);
                let h = b.conv(format!("{p}.conv1"), h, BOTTLENECK_FACTOR * k, 1, 1, false);
                let h = b.bn_relu(format!("{p}.bn2"), h);
                let h = b.conv(format!("{p}.conv2"), h, k, 3, 1, false);
                let h = b.push(
                    format!("{p}.dropout"),
                    LayerKind::Dropout {
                        rate: hp.dropout_rate,
                    },
                    vec![h],
                    None,
                );
                layers.push(CompositeSpec {
                    input: cat,
                    body: cat + 1..h + 1,
                });
                feeds.push(h);
            }
            let output = b.push(format!("block{bi}.concat"), LayerKind::Concat, feeds, None);
            blocks.push(BlockSpec {
                input: block_in,
                layers,
                output,
                scale,
            });
            x = output;
            if bi < hp.num_blocks {
                let p = format!("transition{bi}");
                let m = b.out(x);
                let h = b.bn_relu(format!("{p}.bn1"), x);
                let start = h;
                let h = b.conv(format!("{p}.conv1"), h, hp.compressed(m), 1, 1, false);
                let h = b.bn_relu(format!("{p}.bn2"), h);
                let c = b.out(h);
                x = b.conv(format!("{p}.down"), h, c, 3, 2, false);
                transitions.push(start..x + 1);
            }
        }
        let final_norm = b.bn_relu("final.bn".into(), x);

        let mut fusion = vec![FusionPath {
            source: stem_output,
            range: final_norm + 1..final_norm + 1,
            scale: 1,
        }];
        for (bi, block) in blocks.iter().enumerate() {
            let source = if bi + 1 == blocks.len() { final_norm } else { block.output };
            let scale = b.descriptors[source].scale;
            let p = format!("fusion{}", bi + 1);
            let reduced = b.conv(format!("{p}.reduce"), source, hp.upsample_path_channels, 1, 1, true);
            let up = if hp.uses_deconv() {
                b.push(
                    format!("{p}.deconv"),
                    LayerKind::TransposedConv {
                        factor: scale,
                        bias: true,
                    },
                    vec![reduced],
                    Some(hp.upsample_path_channels),
                )
            } else {
                b.push(
                    format!("{p}.upsample"),
                    LayerKind::Upsample { factor: scale },
                    vec![reduced],
                    None,
                )
            };
            fusion.push(FusionPath {
                source,
                range: reduced..up + 1,
                scale,
            });
        }
        let feeds = fusion.iter().map(FusionPath::output).collect();
        let fusion_concat = b.push("fusion.concat".into(), LayerKind::Concat, feeds, None);
        let classifier = b.conv("classifier".into(), fusion_concat, hp.num_classes, 1, 1, true);

        let spec = NetworkSpec {
            hp: hp.clone(),
            descriptors: b.descriptors,
            stem_output,
            stem,
            blocks,
            transitions,
            final_norm,
            fusion,
            fusion_concat,
            classifier,
        };
        spec.check_closed()?;
        Ok(spec)
    }

    pub fn hyper(&self) -> &HyperParams {
        &self.hp
    }

    pub fn descriptors(&self) -> &[LayerDescriptor] {
        &self.descriptors
    }

    pub fn descriptor(&self, name: &str) -> Option<&LayerDescriptor> {
        self.descriptors.iter().find(|d| d.name == name)
    }

    /// Verifies channel and scale bookkeeping of every descriptor and the
    /// fusion wiring.
    pub fn check_closed(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::UnclosedSpec(msg));
        for (i, d) in self.descriptors.iter().enumerate() {
            if d.sources.iter().any(|&s| s >= i) {
                return fail(format!("{} reads a later descriptor", d.name));
            }
            let summed: usize = d.sources.iter().map(|&s| self.descriptors[s].out_channels).sum();
            let expected_sources = match d.kind {
                LayerKind::Input => 0..=0,
                LayerKind::Concat => 1..=usize::MAX,
                _ => 1..=1,
            };
            if !expected_sources.contains(&d.sources.len()) {
                return fail(format!("{} has {} sources", d.name, d.sources.len()));
            }
            if !matches!(d.kind, LayerKind::Input) && d.in_channels != summed {
                return fail(format!(
                    "{} declares {} input channels but its sources provide {summed}",
                    d.name, d.in_channels
                ));
            }
            let preserves = matches!(
                d.kind,
                LayerKind::BatchNorm { .. }
                    | LayerKind::Dropout { .. }
                    | LayerKind::Concat
                    | LayerKind::Upsample { .. }
            );
            if preserves && d.in_channels != d.out_channels {
                return fail(format!("{} changes channel count", d.name));
            }
            if d.out_channels == 0 {
                return fail(format!("{} emits no channels", d.name));
            }
            if let Some(&first) = d.sources.first() {
                let s = self.descriptors[first].scale;
                if d.sources.iter().any(|&j| self.descriptors[j].scale != s) {
                    return fail(format!("{} concatenates mismatched resolutions", d.name));
                }
            }
        }
        let concat = &self.descriptors[self.fusion_concat];
        let mut allowed = vec![self.stem_output];
        allowed.extend(self.blocks.iter().map(|b| b.output));
        let roots: Vec<usize> = self
            .fusion
            .iter()
            .map(|p| {
                if p.source == self.final_norm {
                    self.blocks.last().map_or(p.source, |b| b.output)
                } else {
                    p.source
                }
            })
            .collect();
        if roots != allowed {
            return fail("fusion sources must be the stem output and each block output".into());
        }
        let outputs: Vec<usize> = self.fusion.iter().map(FusionPath::output).collect();
        if concat.sources != outputs || concat.scale != 1 {
            return fail("fusion concatenation is not wired to full-resolution paths".into());
        }
        Ok(())
    }

    /// Stable 64-bit FNV-1a fingerprint of the parameterized structure.
    pub fn hash(&self) -> u64 {
        let mut text = String::new();
        for d in &self.descriptors {
            let shape = match d.kind {
                LayerKind::Conv {
                    kernel,
                    stride,
                    padding,
                    bias,
                } => format!("{kernel},{stride},{padding},{bias}"),
                LayerKind::TransposedConv { factor, bias } => format!("{factor},{bias}"),
                LayerKind::Upsample { factor } => factor.to_string(),
                _ => String::new(),
            };
            let _ = writeln!(
                text,
                "{}|{}|{}|{}|{:?}|{shape}",
                d.name,
                d.kind.label(),
                d.in_channels,
                d.out_channels,
                d.sources
            );
        }
        fnv1a(text.as_bytes())
    }

    /// Output channels after the stem and after each block and transition.
    pub fn channel_trace(&self) -> Vec<(String, usize)> {
        let mut trace = vec![("stem".to_string(), self.descriptors[self.stem_output].out_channels)];
        for (i, block) in self.blocks.iter().enumerate() {
            trace.push((format!("block{}", i + 1), self.descriptors[block.output].out_channels));
            if let Some(t) = self.transitions.get(i) {
                trace.push((
                    format!("transition{}", i + 1),
                    self.descriptors[t.end - 1].out_channels,
                ));
            }
        }
        trace
    }

    /// Resolution divisor of the stem and each block.
    pub fn stage_scales(&self) -> Vec<usize> {
        let mut s = vec![self.descriptors[self.stem_output].scale];
        s.extend(self.blocks.iter().map(|b| b.scale));
        s
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}
