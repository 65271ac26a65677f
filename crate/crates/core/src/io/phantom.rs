//! Deterministic synthetic head phantoms.
//!
//! Three concentric axis-aligned ellipsoids with seeded center and radii:
//! WM inside GM inside CSF, background elsewhere. T1 and T2 use opposite
//! tissue contrast; Gaussian noise is added to both.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::io::atomic_write;
use crate::io::manifest::{manifest_text, ManifestEntry};
use crate::io::vvol::{write_labels, write_volume};
use crate::volume::{voxel_index, LabelVolume, Sample, Volume};

pub const MIN_PHANTOM_DIM: usize = 32;
/// Per-class intensity, indexed BG, CSF, GM, WM.
pub const T1_LEVELS: [f32; 4] = [0.0, 0.3, 0.6, 0.9];
pub const T2_LEVELS: [f32; 4] = [0.0, 0.9, 0.5, 0.3];

pub fn gen_phantom(seed: u64, dims: [usize; 3], noise_sigma: f32) -> Result<Sample> {
    if dims.iter().any(|&d| d < MIN_PHANTOM_DIM) {
        return Err(Error::invalid(format!(
            "phantom dims {dims:?} must be at least {MIN_PHANTOM_DIM} per axis"
        )));
    }
    if !(noise_sigma.is_finite() && noise_sigma >= 0.0) {
        return Err(Error::invalid(format!("noise sigma {noise_sigma} must be >= 0")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let half = dims.map(|d| d as f64 / 2.0);
    let center: [f64; 3] = std::array::from_fn(|a| half[a] + rng.random_range(-0.04..0.04) * dims[a] as f64 - 0.5);
    let outer: [f64; 3] = std::array::from_fn(|a| half[a] * rng.random_range(0.75..0.9));
    let gm_scale = rng.random_range(0.78..0.85);
    let wm_scale = rng.random_range(0.5..0.6);

    let n = dims.iter().product();
    let mut labels = vec![0u8; n];
    for z in 0..dims[0] {
        for y in 0..dims[1] {
            for x in 0..dims[2] {
                let p = [z, y, x];
                // squared ellipsoidal radius relative to the outer shell
                let r2: f64 = (0..3).map(|a| ((p[a] as f64 - center[a]) / outer[a]).powi(2)).sum();
                labels[voxel_index(dims, z, y, x)] = if r2 <= wm_scale * wm_scale {
                    3
                } else if r2 <= gm_scale * gm_scale {
                    2
                } else if r2 <= 1.0 {
                    1
                } else {
                    0
                };
            }
        }
    }
    let mut t1: Vec<f32> = labels.iter().map(|&l| T1_LEVELS[l as usize]).collect();
    let mut t2: Vec<f32> = labels.iter().map(|&l| T2_LEVELS[l as usize]).collect();
    if noise_sigma > 0.0 {
        let noise = Normal::new(0.0f32, noise_sigma).map_err(|e| Error::invalid(e.to_string()))?;
        for v in t1.iter_mut().chain(t2.iter_mut()) {
            *v += noise.sample(&mut rng);
        }
    }
    let spacing = [1.0; 3];
    Sample::new(
        vec![Volume::new(dims, spacing, t1)?, Volume::new(dims, spacing, t2)?],
        LabelVolume::new(dims, spacing, labels)?,
    )
}

/// Writes `count` cubic phantoms (seeds `seed, seed + 1, ...`) as VVOL
/// files plus `manifest.csv` into `dir`. Returns the manifest path.
pub fn write_phantom_dataset(dir: &Path, count: usize, size: usize, seed: u64, noise_sigma: f32) -> Result<std::path::PathBuf> {
    if count == 0 {
        return Err(Error::invalid("count must be positive"));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(count);
    for i in 0..count {
        let s = gen_phantom(seed.wrapping_add(i as u64), [size; 3], noise_sigma)?;
        let id = format!("phantom{i:03}");
        let e = ManifestEntry {
            t1: format!("{id}_t1.vvol").into(),
            t2: format!("{id}_t2.vvol").into(),
            labels: format!("{id}_labels.vvol").into(),
            sample_id: id,
        };
        write_volume(&dir.join(&e.t1), &s.modalities()[0])?;
        write_volume(&dir.join(&e.t2), &s.modalities()[1])?;
        write_labels(&dir.join(&e.labels), s.labels())?;
        entries.push(e);
    }
    let path = dir.join("manifest.csv");
    atomic_write(&path, manifest_text(&entries).as_bytes())?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::manifest::load_dataset;

    #[test]
    fn deterministic_and_seed_dependent() {
        let a = gen_phantom(3, [32; 3], 0.05).unwrap();
        assert_eq!(a, gen_phantom(3, [32; 3], 0.05).unwrap());
        assert_ne!(a.labels(), gen_phantom(4, [32; 3], 0.05).unwrap().labels());
    }

    #[test]
    fn noiseless_intensities_are_class_constants() {
        let s = gen_phantom(1, [32, 40, 36], 0.0).unwrap();
        for (i, &l) in s.labels().labels().iter().enumerate() {
            assert_eq!(s.modalities()[0].data()[i], T1_LEVELS[l as usize]);
            assert_eq!(s.modalities()[1].data()[i], T2_LEVELS[l as usize]);
        }
    }

    #[test]
    fn every_class_present_at_64() {
        for seed in 0..5 {
            let s = gen_phantom(seed, [64; 3], 0.05).unwrap();
            let h = s.labels().histogram();
            let n = 64usize.pow(3) as f64;
            assert!(h.iter().all(|&c| c as f64 / n >= 0.01), "seed {seed}: {h:?}");
        }
    }

    #[test]
    fn too_small_rejected() {
        assert!(gen_phantom(0, [31, 64, 64], 0.0).is_err());
        assert!(gen_phantom(0, [32; 3], -1.0).is_err());
    }

    #[test]
    fn dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = write_phantom_dataset(dir.path(), 2, 32, 7, 0.05).unwrap();
        let data = load_dataset(&m).unwrap();
        assert_eq!(data.len(), 2);
        assert_eq!(data[1].1, gen_phantom(8, [32; 3], 0.05).unwrap());
    }
}
