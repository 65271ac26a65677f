//! Neural-network primitives recorded on the autodiff tape.

mod activation;
mod batchnorm;
mod conv;
mod deconv;
mod softmax;
mod upsample;

pub use activation::{dropout, relu};
pub use batchnorm::{batch_norm, BnConfig, RunningStats};
pub use conv::{
    conv3d, conv_kernels, output_extent, ConvGeometry, ConvKernel, ConvOptions, DirectConv,
    GemmConv,
};
pub use deconv::transposed_conv3d;
pub use softmax::{cross_entropy, softmax_channels, softmax_tensor};
pub use upsample::{upsample, upsamplers, Nearest, Tap, Trilinear, Upsampler};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Mode {
    Train,
    Infer,
}
