use crate::error::{Error, Result};
use crate::nn::upsamplers;

/// Up-sampling mode name that selects a learned transposed convolution
/// instead of a registered interpolator.
pub const DECONV_MODE: &str = "deconv";

/// Topology hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct HyperParams {
    /// Feature maps added by each composite layer (`k`).
    pub growth_rate: usize,
    /// Width of the stem (`k0`).
    pub stem_channels: usize,
    /// Transition compression factor `theta` in `(0, 1]`.
    pub compression: f64,
    pub num_blocks: usize,
    pub layers_per_block: usize,
    pub dropout_rate: f64,
    pub num_classes: usize,
    pub num_modalities: usize,
    /// Channels of each fusion path after its 1x1x1 reduction.
    pub upsample_path_channels: usize,
    /// A registered interpolator name or [`DECONV_MODE`].
    pub upsample_mode: String,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            growth_rate: 16,
            stem_channels: 32,
            compression: 0.5,
            num_blocks: 4,
            layers_per_block: 4,
            dropout_rate: 0.2,
            num_classes: 4,
            num_modalities: 2,
            upsample_path_channels: 16,
            upsample_mode: "nearest".into(),
        }
    }
}

/// Bottleneck width as a multiple of the growth rate.
pub const BOTTLENECK_FACTOR: usize = 4;
pub const STEM_LAYERS: usize = 3;

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidHyperParams(msg));
        for (name, v) in [
            ("growth_rate", self.growth_rate),
            ("stem_channels", self.stem_channels),
            ("num_blocks", self.num_blocks),
            ("layers_per_block", self.layers_per_block),
            ("num_classes", self.num_classes),
            ("num_modalities", self.num_modalities),
            ("upsample_path_channels", self.upsample_path_channels),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if !(self.compression > 0.0 && self.compression <= 1.0) {
            return bad(format!("compression {} outside (0, 1]", self.compression));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout_rate {} outside [0, 1)", self.dropout_rate));
        }
        if self.num_classes > u8::MAX as usize + 1 {
            return bad(format!("num_classes {} exceeds label range", self.num_classes));
        }
        if self.num_blocks > 8 {
            return bad(format!("num_blocks {} is too deep", self.num_blocks));
        }
        if self.upsample_mode != DECONV_MODE && upsamplers().get(&self.upsample_mode).is_err() {
            return bad(format!(
                "upsample_mode '{}' is not one of {:?} or '{DECONV_MODE}'",
                self.upsample_mode,
                upsamplers().names()
            ));
        }
        let mut c = self.stem_channels;
        for b in 0..self.num_blocks {
            c += self.layers_per_block * self.growth_rate;
            if b + 1 < self.num_blocks {
                c = self.compressed(c);
                if c == 0 {
                    return bad(format!("transition {} compresses to zero channels", b + 1));
                }
            }
        }
        Ok(())
    }

    /// Channels after compressing `m` maps: `floor(m * theta)`.
    pub fn compressed(&self, m: usize) -> usize {
        (m as f64 * self.compression + 1e-9).floor() as usize
    }

    /// Input extents must be multiples of this.
    pub fn size_divisor(&self) -> usize {
        1 << self.num_blocks
    }

    pub fn uses_deconv(&self) -> bool {
        self.upsample_mode == DECONV_MODE
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let hp = HyperParams::default();
        hp.validate().unwrap();
        assert_eq!(hp.size_divisor(), 16);
        assert_eq!(hp.compressed(96), 48);
        assert_eq!(hp.compressed(113), 56);
    }

    #[test]
    fn invalid_settings_rejected() {
        let cases: Vec<fn(&mut HyperParams)> = vec![
            |h| h.layers_per_block = 0,
            |h| h.compression = 0.0,
            |h| h.compression = 1.5,
            |h| h.dropout_rate = 1.0,
            |h| h.upsample_mode = "cubic".into(),
            |h| {
                h.compression = 0.01;
                h.stem_channels = 1;
                h.growth_rate = 1;
                h.layers_per_block = 1;
            },
        ];
        for edit in cases {
            let mut hp = HyperParams::default();
            edit(&mut hp);
            assert!(matches!(hp.validate(), Err(Error::InvalidHyperParams(_))), "{hp:?}");
        }
    }

    #[test]
    fn deconv_mode_is_accepted() {
        let hp = HyperParams {
            upsample_mode: DECONV_MODE.into(),
            ..Default::default()
        };
        hp.validate().unwrap();
        assert!(hp.uses_deconv());
    }
}
