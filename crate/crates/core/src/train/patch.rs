use rand::{Rng, RngCore};

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::volume::{voxel_index, Sample, Volume};

/// A cropped training example: `[1, modalities, s, s, s]` input plus the
/// matching labels in row-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct Patch {
    pub input: Tensor,
    pub labels: Vec<u8>,
    pub corner: [usize; 3],
}

/// Copies the `size^3` block at `corner` out of `v`.
pub fn crop(v: &Volume, corner: [usize; 3], size: usize) -> Vec<f32> {
    crop_with(v.dims(), v.data(), corner, size)
}

pub(crate) fn crop_with<T: Copy>(dims: [usize; 3], data: &[T], corner: [usize; 3], size: usize) -> Vec<T> {
    let [z0, y0, x0] = corner;
    let mut out = Vec::with_capacity(size * size * size);
    for z in z0..z0 + size {
        for y in y0..y0 + size {
            let i = voxel_index(dims, z, y, x0);
            out.extend_from_slice(&data[i..i + size]);
        }
    }
    out
}

/// Draws a crop corner uniformly over all valid positions and extracts the
/// modalities (stacked as channels in sample order) and labels.
pub fn sample_patch(s: &Sample, size: usize, rng: &mut dyn RngCore) -> Result<Patch> {
    let dims = s.dims();
    if size == 0 || dims.iter().any(|&d| d < size) {
        return Err(Error::invalid(format!(
            "volume {dims:?} is smaller than patch size {size}"
        )));
    }
    let corner = dims.map(|d| rng.random_range(0..=d - size));
    patch_at(s, corner, size)
}

pub fn patch_at(s: &Sample, corner: [usize; 3], size: usize) -> Result<Patch> {
    let dims = s.dims();
    if (0..3).any(|a| corner[a] + size > dims[a]) {
        return Err(Error::invalid(format!(
            "patch at {corner:?} of size {size} leaves volume {dims:?}"
        )));
    }
    let mut data = Vec::with_capacity(s.modalities().len() * size.pow(3));
    for m in s.modalities() {
        data.extend(crop(m, corner, size));
    }
    let input = Tensor::new(&[1, s.modalities().len(), size, size, size], data)?;
    let labels = crop_with(dims, s.labels().labels(), corner, size);
    Ok(Patch {
        input,
        labels,
        corner,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::LabelVolume;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample(d: usize) -> Sample {
        let n = d * d * d;
        let t1 = Volume::new([d; 3], [1.0; 3], (0..n).map(|i| i as f32).collect()).unwrap();
        let t2 = Volume::new([d; 3], [1.0; 3], (0..n).map(|i| -(i as f32)).collect()).unwrap();
        let l = LabelVolume::new([d; 3], [1.0; 3], (0..n).map(|i| (i % 4) as u8).collect()).unwrap();
        Sample::new(vec![t1, t2], l).unwrap()
    }

    #[test]
    fn exact_fit_has_one_crop() {
        let s = sample(4);
        let p = sample_patch(&s, 4, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(p.corner, [0, 0, 0]);
        assert_eq!(&p.input.data()[..64], s.modalities()[0].data());
        assert_eq!(&p.input.data()[64..], s.modalities()[1].data());
        assert_eq!(p.labels, s.labels().labels());
    }

    #[test]
    fn labels_follow_the_crop() {
        let s = sample(6);
        let p = patch_at(&s, [1, 2, 3], 3).unwrap();
        assert_eq!(p.input.data()[0], s.modalities()[0].get(1, 2, 3));
        assert_eq!(p.labels[26], s.labels().get(3, 4, 5));
    }

    #[test]
    fn too_small_volume_rejected() {
        assert!(sample_patch(&sample(4), 5, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn same_seed_same_crop() {
        let s = sample(8);
        let a = sample_patch(&s, 4, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = sample_patch(&s, 4, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);
    }
}
