//! Depth, parameter and channel accounting of a [`NetworkSpec`].

use std::fmt::Write as _;

use crate::arch::spec::NetworkSpec;
use crate::error::Result;

/// Published depth of the reference topology.
pub const REFERENCE_DEPTH: usize = 47;
/// Published learned-parameter total of the reference topology.
pub const REFERENCE_PARAMS: usize = 1_550_000;
/// Parameter total of the larger comparison network; a compact model must
/// stay below it.
pub const COMPARISON_PARAMS: usize = 4_340_000;

#[derive(Clone, Debug, PartialEq)]
pub struct DescriptorParams {
    pub name: String,
    pub kind: &'static str,
    pub params: usize,
}

/// Input channels of one composite layer, measured from the spec and
/// predicted by `c_in + (l - 1) * k`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerInput {
    pub block: usize,
    pub layer: usize,
    pub measured: usize,
    pub expected: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AuditReport {
    pub weighted_layer_count: usize,
    pub channel_trace: Vec<(String, usize)>,
    pub layer_inputs: Vec<LayerInput>,
    pub per_descriptor: Vec<DescriptorParams>,
    pub total_params: usize,
}

pub fn audit(spec: &NetworkSpec) -> Result<AuditReport> {
    spec.check_closed()?;
    let d = spec.descriptors();
    let k = spec.hyper().growth_rate;
    let weighted_layer_count = d.iter().filter(|x| x.kind.is_weighted()).count();
    let per_descriptor: Vec<DescriptorParams> = d
        .iter()
        .filter(|x| x.kind.has_params())
        .map(|x| DescriptorParams {
            name: x.name.clone(),
            kind: x.kind.label(),
            params: x.param_count(),
        })
        .collect();
    let total_params = per_descriptor.iter().map(|p| p.params).sum();
    let mut layer_inputs = Vec::new();
    for (bi, block) in spec.blocks.iter().enumerate() {
        let c0 = d[block.input].out_channels;
        for (li, layer) in block.layers.iter().enumerate() {
            layer_inputs.push(LayerInput {
                block: bi + 1,
                layer: li + 1,
                measured: d[layer.body.start].in_channels,
                expected: c0 + li * k,
            });
        }
    }
    Ok(AuditReport {
        weighted_layer_count,
        channel_trace: spec.channel_trace(),
        layer_inputs,
        per_descriptor,
        total_params,
    })
}

impl AuditReport {
    pub fn params_deviation(&self) -> i64 {
        self.total_params as i64 - REFERENCE_PARAMS as i64
    }

    pub fn params_deviation_percent(&self) -> f64 {
        100.0 * self.params_deviation() as f64 / REFERENCE_PARAMS as f64
    }

    pub fn feature_formula_holds(&self) -> bool {
        self.layer_inputs.iter().all(|l| l.measured == l.expected)
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "layers: {}", self.weighted_layer_count);
        let _ = writeln!(s, "total params: {}", self.total_params);
        let _ = writeln!(
            s,
            "reference params: {} (deviation {:+}, {:+.1}%)",
            REFERENCE_PARAMS,
            self.params_deviation(),
            self.params_deviation_percent()
        );
        let trace: Vec<String> = self.channel_trace.iter().map(|(_, c)| c.to_string()).collect();
        let _ = writeln!(s, "channel trace: {}", trace.join(" -> "));
        for (stage, c) in &self.channel_trace {
            let _ = writeln!(s, "  {stage:<12} {c:>5}");
        }
        let _ = writeln!(s, "composite layer inputs (measured / c_in + (l-1)k):");
        for l in &self.layer_inputs {
            let mark = if l.measured == l.expected { "ok" } else { "MISMATCH" };
            let _ = writeln!(
                s,
                "  block{} layer{}: {:>4} / {:>4} {mark}",
                l.block, l.layer, l.measured, l.expected
            );
        }
        let _ = writeln!(s, "parameters per descriptor:");
        for p in &self.per_descriptor {
            let _ = writeln!(s, "  {:<28} {:<8} {:>9}", p.name, p.kind, p.params);
        }
        s
    }
}
