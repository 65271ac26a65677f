//! Patch-voting rules and the per-voxel accumulation grid.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::registry::{Registry, Strategy};
use crate::volume::voxel_index;

/// Turns one patch's logits into per-voxel vote contributions.
pub trait VoteStrategy: Strategy {
    /// `logits` is channel-major `[classes, voxels]`; `out` has the same
    /// layout and receives each class's contribution.
    fn votes(&self, logits: &[f32], classes: usize, out: &mut [f64]);
}

pub const DEFAULT_VOTE: &str = "majority";

pub fn vote_strategies() -> Registry<dyn VoteStrategy> {
    Registry::<dyn VoteStrategy>::new("vote strategy")
        .with(Arc::new(Majority))
        .with(Arc::new(MeanProb))
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax_strided<T: PartialOrd + Copy>(v: &[T], classes: usize, voxel: usize, n: usize) -> usize {
    let mut best = 0;
    for c in 1..classes {
        if v[c * n + voxel] > v[best * n + voxel] {
            best = c;
        }
    }
    best
}

/// One vote for the argmax class of each voxel.
#[derive(Debug, Default, Clone, Copy)]
pub struct Majority;

impl Strategy for Majority {
    fn name(&self) -> &'static str {
        "majority"
    }

    fn describe(&self) -> &'static str {
        "one vote per covering patch for its argmax class"
    }
}

impl VoteStrategy for Majority {
    fn votes(&self, logits: &[f32], classes: usize, out: &mut [f64]) {
        let n = logits.len() / classes;
        out.fill(0.0);
        for i in 0..n {
            out[argmax_strided(logits, classes, i, n) * n + i] = 1.0;
        }
    }
}

/// Softmax probabilities, summed over covering patches.
#[derive(Debug, Default, Clone, Copy)]
pub struct MeanProb;

impl Strategy for MeanProb {
    fn name(&self) -> &'static str {
        "mean_prob"
    }

    fn describe(&self) -> &'static str {
        "sum of softmax probabilities over covering patches"
    }
}

impl VoteStrategy for MeanProb {
    fn votes(&self, logits: &[f32], classes: usize, out: &mut [f64]) {
        let n = logits.len() / classes;
        for i in 0..n {
            let max = (0..classes)
                .map(|c| logits[c * n + i] as f64)
                .fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for c in 0..classes {
                let e = (logits[c * n + i] as f64 - max).exp();
                out[c * n + i] = e;
                sum += e;
            }
            for c in 0..classes {
                out[c * n + i] /= sum;
            }
        }
    }
}

/// Per-voxel, per-class vote totals plus a coverage count.
#[derive(Clone, Debug, PartialEq)]
pub struct VoteGrid {
    dims: [usize; 3],
    classes: usize,
    scores: Vec<f64>,
    coverage: Vec<u32>,
}

impl VoteGrid {
    pub fn new(dims: [usize; 3], classes: usize) -> Self {
        let n = dims.iter().product::<usize>();
        VoteGrid {
            dims,
            classes,
            scores: vec![0.0; n * classes],
            coverage: vec![0; n],
        }
    }

    pub fn coverage(&self) -> &[u32] {
        &self.coverage
    }

    /// Adds a cubic patch of contributions laid out `[classes, s, s, s]`.
    pub fn add_patch(&mut self, corner: [usize; 3], size: usize, votes: &[f64]) -> Result<()> {
        let n = size * size * size;
        if votes.len() != n * self.classes || (0..3).any(|a| corner[a] + size > self.dims[a]) {
            return Err(Error::invalid(format!(
                "patch at {corner:?} of size {size} does not fit vote grid {:?}",
                self.dims
            )));
        }
        let [z0, y0, x0] = corner;
        let mut p = 0;
        for z in 0..size {
            for y in 0..size {
                for x in 0..size {
                    let v = voxel_index(self.dims, z0 + z, y0 + y, x0 + x);
                    self.coverage[v] += 1;
                    for c in 0..self.classes {
                        self.scores[v * self.classes + c] += votes[c * n + p];
                    }
                    p += 1;
                }
            }
        }
        Ok(())
    }

    /// Argmax class per voxel with lowest-index tie-break. Fails if any voxel
    /// received no patch.
    pub fn finalize(&self) -> Result<Vec<u8>> {
        if let Some(i) = self.coverage.iter().position(|&c| c == 0) {
            return Err(Error::invalid(format!("voxel {i} is not covered by any patch")));
        }
        Ok(self
            .scores
            .chunks_exact(self.classes)
            .map(|row| argmax_strided(row, self.classes, 0, 1) as u8)
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn majority_is_one_hot_argmax_with_low_tie() {
        let logits = [1.0, 3.0, 3.0, 3.0, 0.0, 2.0];
        let mut out = vec![9.0; 6];
        Majority.votes(&logits, 3, &mut out);
        assert_eq!(out, [0.0, 1.0, 1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn mean_prob_sums_to_one() {
        let logits = [0.5, -1.0, 2.0, 0.0, 1.0, 3.0];
        let mut out = vec![0.0; 6];
        MeanProb.votes(&logits, 2, &mut out);
        for i in 0..3 {
            assert!((out[i] + out[3 + i] - 1.0).abs() < 1e-12);
        }
        assert!(out[0] > out[3]);
    }

    #[test]
    fn agreeing_patches_win_and_ties_go_low() {
        let mut g = VoteGrid::new([1, 1, 2], 2);
        g.add_patch([0, 0, 0], 1, &[0.3, 0.7]).unwrap();
        g.add_patch([0, 0, 0], 1, &[0.4, 0.6]).unwrap();
        g.add_patch([0, 0, 1], 1, &[0.5, 0.5]).unwrap();
        assert_eq!(g.finalize().unwrap(), [1, 0]);
    }

    #[test]
    fn uncovered_voxel_is_an_error() {
        let mut g = VoteGrid::new([1, 1, 2], 2);
        g.add_patch([0, 0, 0], 1, &[1.0, 0.0]).unwrap();
        assert!(g.finalize().is_err());
        assert!(g.add_patch([0, 0, 2], 1, &[1.0, 0.0]).is_err());
    }

    #[test]
    fn registry_lookup() {
        assert_eq!(vote_strategies().names(), ["majority", "mean_prob"]);
        assert!(vote_strategies().get("median").is_err());
    }
}
