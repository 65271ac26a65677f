//! Full-volume prediction by overlapped patch voting.

use rayon::prelude::*;

use crate::arch::{forward_full, ForwardOptions, NetworkSpec, ParamStore};
use crate::error::{Error, Result};
use crate::eval::vote::{argmax_strided, vote_strategies, VoteGrid, DEFAULT_VOTE};
use crate::tensor::Tensor;
use crate::train::{crop, normalize_volume};
use crate::volume::{check_same_grid, LabelVolume, Sample, Volume};

pub const DEFAULT_PATCH: usize = 64;

#[derive(Clone, Debug, PartialEq)]
pub struct WindowOptions {
    pub patch: usize,
    pub stride: usize,
    pub vote: String,
    pub conv_kernel: String,
}

impl WindowOptions {
    /// Stride defaults to half the patch.
    pub fn new(patch: usize) -> Self {
        WindowOptions {
            patch,
            stride: (patch / 2).max(1),
            vote: DEFAULT_VOTE.into(),
            conv_kernel: "gemm".into(),
        }
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn with_vote(mut self, vote: &str) -> Self {
        self.vote = vote.into();
        self
    }
}

impl Default for WindowOptions {
    fn default() -> Self {
        Self::new(DEFAULT_PATCH)
    }
}

/// Patch start positions along one axis: multiples of `stride`, with the
/// last one moved back so the final patch ends at the edge.
pub fn tile_starts(len: usize, patch: usize, stride: usize) -> Vec<usize> {
    let last = len - patch;
    let mut out: Vec<usize> = (0..=last).step_by(stride).collect();
    if out.last() != Some(&last) {
        out.push(last);
    }
    out
}

pub fn tile_corners(dims: [usize; 3], patch: usize, stride: usize) -> Vec<[usize; 3]> {
    let [zs, ys, xs] = dims.map(|d| tile_starts(d, patch, stride));
    let mut out = Vec::with_capacity(zs.len() * ys.len() * xs.len());
    for &z in &zs {
        for &y in &ys {
            for &x in &xs {
                out.push([z, y, x]);
            }
        }
    }
    out
}

fn infer_opts(opts: &WindowOptions) -> ForwardOptions {
    ForwardOptions::infer().with_kernel(&opts.conv_kernel)
}

fn normalized(modalities: &[Volume]) -> Result<Vec<Volume>> {
    check_same_grid(modalities)?;
    modalities.iter().map(normalize_volume).collect()
}

/// Predicts labels for raw modalities. Each modality is normalized over the
/// whole volume before tiling.
pub fn sliding_window_predict(
    spec: &NetworkSpec,
    store: &ParamStore,
    modalities: &[Volume],
    opts: &WindowOptions,
) -> Result<LabelVolume> {
    let (p, s) = (opts.patch, opts.stride);
    if p == 0 || s == 0 || s > p {
        return Err(Error::invalid(format!("stride {s} must lie in [1, patch {p}]")));
    }
    let hp = spec.hyper();
    if modalities.len() != hp.num_modalities {
        return Err(Error::invalid(format!(
            "{} modalities supplied, network expects {}",
            modalities.len(),
            hp.num_modalities
        )));
    }
    let vols = normalized(modalities)?;
    let dims = vols[0].dims();
    if dims.iter().any(|&d| d < p) {
        return Err(Error::invalid(format!("patch {p} is larger than volume {dims:?}")));
    }
    let vote = vote_strategies().get(&opts.vote)?;
    let classes = hp.num_classes;
    let fopts = infer_opts(opts);
    let corners = tile_corners(dims, p, s);
    let mut grid = VoteGrid::new(dims, classes);
    // Run a thread-pool's worth of patches at a time and merge them in tile
    // order, so the result does not depend on scheduling.
    let wave = rayon::current_num_threads().max(1);
    for chunk in corners.chunks(wave) {
        let votes = chunk
            .par_iter()
            .map(|&corner| {
                let mut data = Vec::with_capacity(vols.len() * p * p * p);
                for v in &vols {
                    data.extend(crop(v, corner, p));
                }
                let x = Tensor::new(&[1, vols.len(), p, p, p], data)?;
                let (logits, _) = forward_full(spec, store, &x, &fopts, None)?;
                let mut out = vec![0.0; logits.numel()];
                vote.votes(logits.data(), classes, &mut out);
                Ok(out)
            })
            .collect::<Result<Vec<_>>>()?;
        for (corner, v) in chunk.iter().zip(votes) {
            grid.add_patch(*corner, p, &v)?;
        }
    }
    LabelVolume::new(dims, vols[0].spacing(), grid.finalize()?)
}

pub fn predict_sample(spec: &NetworkSpec, store: &ParamStore, sample: &Sample, opts: &WindowOptions) -> Result<LabelVolume> {
    sliding_window_predict(spec, store, sample.modalities(), opts)
}

/// Argmax of one forward pass over the whole normalized volume.
pub fn single_pass_predict(
    spec: &NetworkSpec,
    store: &ParamStore,
    modalities: &[Volume],
    conv_kernel: &str,
) -> Result<LabelVolume> {
    let vols = normalized(modalities)?;
    let dims = vols[0].dims();
    let mut data = Vec::with_capacity(vols.len() * vols[0].len());
    for v in &vols {
        data.extend_from_slice(v.data());
    }
    let x = Tensor::new(&[1, vols.len(), dims[0], dims[1], dims[2]], data)?;
    let opts = ForwardOptions::infer().with_kernel(conv_kernel);
    let (logits, _) = forward_full(spec, store, &x, &opts, None)?;
    let n = vols[0].len();
    let classes = spec.hyper().num_classes;
    let labels = (0..n)
        .map(|i| argmax_strided(logits.data(), classes, i, n) as u8)
        .collect();
    LabelVolume::new(dims, vols[0].spacing(), labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::build_network;
    use crate::verify::tiny_hyper;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_modalities(dims: [usize; 3], seed: u64) -> Vec<Volume> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = dims.iter().product();
        (0..2)
            .map(|_| {
                let data = (0..n).map(|_| rng.random_range(-1.0..3.0)).collect();
                Volume::new(dims, [1.0; 3], data).unwrap()
            })
            .collect()
    }

    #[test]
    fn tiling_arithmetic() {
        assert_eq!(tile_starts(128, 64, 64), [0, 64]);
        assert_eq!(tile_starts(100, 64, 32), [0, 32, 36]);
        assert_eq!(tile_starts(64, 64, 7), [0]);
        assert_eq!(tile_corners([128; 3], 64, 64).len(), 8);
        let mut cover = vec![0u32; 128usize.pow(3)];
        for c in tile_corners([128; 3], 64, 64) {
            for z in c[0]..c[0] + 64 {
                for y in c[1]..c[1] + 64 {
                    for x in c[2]..c[2] + 64 {
                        cover[(z * 128 + y) * 128 + x] += 1;
                    }
                }
            }
        }
        assert!(cover.iter().all(|&c| c == 1));
    }

    #[test]
    fn one_tile_equals_single_pass() {
        let (spec, store) = build_network(&tiny_hyper(), &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let mods = random_modalities([16; 3], 1);
        let want = single_pass_predict(&spec, &store, &mods, "gemm").unwrap();
        for vote in ["majority", "mean_prob"] {
            for stride in [1, 5, 16] {
                let opts = WindowOptions::new(16).with_stride(stride).with_vote(vote);
                assert_eq!(sliding_window_predict(&spec, &store, &mods, &opts).unwrap(), want);
            }
        }
    }

    #[test]
    fn non_overlapping_majority_is_tile_stitching() {
        let (spec, store) = build_network(&tiny_hyper(), &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let mods = random_modalities([16, 32, 16], 2);
        let got = sliding_window_predict(&spec, &store, &mods, &WindowOptions::new(16).with_stride(16)).unwrap();
        let norm: Vec<Volume> = mods.iter().map(|m| normalize_volume(m).unwrap()).collect();
        for y0 in [0, 16] {
            let mut data = Vec::new();
            for v in &norm {
                data.extend(crop(v, [0, y0, 0], 16));
            }
            let x = Tensor::new(&[1, 2, 16, 16, 16], data).unwrap();
            let (logits, _) = forward_full(&spec, &store, &x, &ForwardOptions::infer(), None).unwrap();
            let n = 16 * 16 * 16;
            for z in 0..16 {
                for y in 0..16 {
                    for x in 0..16 {
                        let i = (z * 16 + y) * 16 + x;
                        let want = argmax_strided(logits.data(), 4, i, n) as u8;
                        assert_eq!(got.get(z, y0 + y, x), want);
                    }
                }
            }
        }
    }

    #[test]
    fn bad_arguments_rejected() {
        let (spec, store) = build_network(&tiny_hyper(), &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let mods = random_modalities([16; 3], 1);
        assert!(sliding_window_predict(&spec, &store, &mods, &WindowOptions::new(32)).is_err());
        assert!(sliding_window_predict(&spec, &store, &mods, &WindowOptions::new(16).with_stride(17)).is_err());
        assert!(sliding_window_predict(&spec, &store, &mods, &WindowOptions::new(16).with_vote("x")).is_err());
        assert!(sliding_window_predict(&spec, &store, &mods[..1], &WindowOptions::new(16)).is_err());
        let other = random_modalities([16, 16, 32], 1);
        let mixed = vec![mods[0].clone(), other[1].clone()];
        assert!(sliding_window_predict(&spec, &store, &mixed, &WindowOptions::new(16)).is_err());
    }
}
