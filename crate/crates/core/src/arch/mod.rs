//! The densely connected segmentation network: topology, parameters,
//! execution, auditing and checkpoints.

mod audit;
mod checkpoint;
mod forward;
mod hyper;
mod params;
mod spec;

pub use audit::{
    audit, AuditReport, DescriptorParams, LayerInput, COMPARISON_PARAMS, REFERENCE_DEPTH,
    REFERENCE_PARAMS,
};
pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint,
    store_from_checkpoint, CheckpointEntry, RawCheckpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
    FLAG_RUNNING_STAT,
};
pub use forward::{forward_full, Forward, ForwardOptions};
pub use hyper::{HyperParams, BOTTLENECK_FACTOR, DECONV_MODE, STEM_LAYERS};
pub use params::{build_network, param_key, weight_shape, ParamStore, Params, Slot};
pub use spec::{
    BlockSpec, CompositeSpec, FusionPath, LayerDescriptor, LayerKind, NetworkSpec,
};
