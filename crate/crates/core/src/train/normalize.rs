use crate::error::{Error, Result};
use crate::volume::Volume;

/// Standard deviations below this map the volume to all zeros.
pub const MIN_STD: f64 = 1e-8;

/// Zero mean, unit population variance over the whole volume.
pub fn normalize_volume(v: &Volume) -> Result<Volume> {
    let n = v.len();
    if n < 2 {
        return Err(Error::invalid(format!(
            "normalization needs at least 2 voxels, got {n}"
        )));
    }
    let mean = v.data().iter().map(|&x| x as f64).sum::<f64>() / n as f64;
    let var = v
        .data()
        .iter()
        .map(|&x| (x as f64 - mean).powi(2))
        .sum::<f64>()
        / n as f64;
    let std = var.sqrt();
    let data = if std < MIN_STD {
        vec![0.0; n]
    } else {
        v.data()
            .iter()
            .map(|&x| ((x as f64 - mean) / std) as f32)
            .collect()
    };
    v.with_data(data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn moments(v: &Volume) -> (f64, f64) {
        let n = v.len() as f64;
        let m = v.data().iter().map(|&x| x as f64).sum::<f64>() / n;
        let s = (v.data().iter().map(|&x| (x as f64 - m).powi(2)).sum::<f64>() / n).sqrt();
        (m, s)
    }

    fn random(seed: u64) -> Volume {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..6 * 7 * 8).map(|_| rng.random_range(-3.0..10.0)).collect();
        Volume::new([6, 7, 8], [1.0; 3], data).unwrap()
    }

    #[test]
    fn standardizes() {
        let (m, s) = moments(&normalize_volume(&random(1)).unwrap());
        assert!(m.abs() < 1e-5 && (s - 1.0).abs() < 1e-4, "{m} {s}");
    }

    #[test]
    fn constant_volume_maps_to_zeros() {
        let v = Volume::new([2, 2, 2], [1.0; 3], vec![4.5; 8]).unwrap();
        assert!(normalize_volume(&v).unwrap().data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn affine_invariant_and_idempotent() {
        let v = random(2);
        let w = v.with_data(v.data().iter().map(|&x| 3.5 * x - 2.0).collect()).unwrap();
        let (a, b) = (normalize_volume(&v).unwrap(), normalize_volume(&w).unwrap());
        let twice = normalize_volume(&a).unwrap();
        for ((p, q), r) in a.data().iter().zip(b.data()).zip(twice.data()) {
            assert!((p - q).abs() < 1e-4 && (p - r).abs() < 1e-4);
        }
    }

    #[test]
    fn single_voxel_rejected() {
        let v = Volume::new([1, 1, 1], [1.0; 3], vec![1.0]).unwrap();
        assert!(normalize_volume(&v).is_err());
    }
}
