use rand::RngCore;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// I.i.d. zero-mean Gaussian with standard deviation `sqrt(2 / fan_in)`.
pub fn he_init(shape: &[usize], fan_in: usize, rng: &mut dyn RngCore) -> Result<Tensor> {
    if fan_in == 0 {
        return Err(Error::invalid("he_init fan_in must be positive"));
    }
    let std = (2.0 / fan_in as f64).sqrt();
    let normal = Normal::new(0.0, std).map_err(|e| Error::invalid(e.to_string()))?;
    let numel: usize = shape.iter().product();
    let data = (0..numel).map(|_| normal.sample(rng) as f32).collect();
    Tensor::new(shape, data)
}
