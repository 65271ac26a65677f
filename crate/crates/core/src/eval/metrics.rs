//! Overlap and surface-distance metrics between label volumes.
//!
//! Distances are between voxel centers, scaled per axis by the voxel
//! spacing. Nearest-surface distances come from an exact separable squared
//! distance transform, so they agree with an all-pairs search.

use crate::error::{Error, Result};
use crate::volume::{voxel_index, LabelVolume};

/// A binary volume.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    dims: [usize; 3],
    bits: Vec<bool>,
}

impl Mask {
    pub fn new(dims: [usize; 3], bits: Vec<bool>) -> Result<Self> {
        if bits.len() != dims.iter().product::<usize>() {
            return Err(Error::InvalidShape {
                shape: dims.to_vec(),
                reason: format!("mask has {} voxels", bits.len()),
            });
        }
        Ok(Mask { dims, bits })
    }

    pub fn of_class(labels: &LabelVolume, class: u8) -> Self {
        Mask {
            dims: labels.dims(),
            bits: labels.mask(class),
        }
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.contains(&true)
    }

    fn at(&self, z: isize, y: isize, x: isize) -> bool {
        let [d, h, w] = self.dims;
        if z < 0 || y < 0 || x < 0 || z >= d as isize || y >= h as isize || x >= w as isize {
            return false;
        }
        self.bits[voxel_index(self.dims, z as usize, y as usize, x as usize)]
    }
}

fn check_dims(a: [usize; 3], b: [usize; 3]) -> Result<()> {
    if a != b {
        return Err(Error::ShapeMismatch {
            op: "metric",
            lhs: a.to_vec(),
            rhs: b.to_vec(),
        });
    }
    Ok(())
}

/// `2|P ∩ G| / (|P| + |G|)` for one class; 1 when the class is absent from
/// both.
pub fn dice(pred: &LabelVolume, gt: &LabelVolume, class: u8) -> Result<f64> {
    check_dims(pred.dims(), gt.dims())?;
    let (mut p, mut g, mut both) = (0usize, 0usize, 0usize);
    for (&a, &b) in pred.labels().iter().zip(gt.labels()) {
        let (ia, ib) = (a == class, b == class);
        p += ia as usize;
        g += ib as usize;
        both += (ia && ib) as usize;
    }
    if p + g == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * both as f64 / (p + g) as f64)
}

const NEIGHBORS: [[isize; 3]; 6] = [
    [-1, 0, 0],
    [1, 0, 0],
    [0, -1, 0],
    [0, 1, 0],
    [0, 0, -1],
    [0, 0, 1],
];

/// Mask voxels with at least one 6-neighbor outside the mask, in row-major
/// order. Positions beyond the volume count as outside.
pub fn extract_surface(mask: &Mask) -> Vec<[usize; 3]> {
    let [d, h, w] = mask.dims;
    let mut out = Vec::new();
    for z in 0..d {
        for y in 0..h {
            for x in 0..w {
                if !mask.bits[voxel_index(mask.dims, z, y, x)] {
                    continue;
                }
                let (zi, yi, xi) = (z as isize, y as isize, x as isize);
                if NEIGHBORS.iter().any(|[dz, dy, dx]| !mask.at(zi + dz, yi + dy, xi + dx)) {
                    out.push([z, y, x]);
                }
            }
        }
    }
    out
}

fn sq_spacing(spacing: [f32; 3]) -> [f64; 3] {
    spacing.map(|s| s as f64 * s as f64)
}

/// Squared spacing-scaled distance, summed in the same order as the
/// distance transform (x, then y, then z).
fn sq_dist(p: [usize; 3], q: [usize; 3], s2: [f64; 3]) -> f64 {
    let d = |a: usize, b: usize| {
        let t = a.abs_diff(b) as f64;
        t * t
    };
    s2[0] * d(p[0], q[0]) + (s2[1] * d(p[1], q[1]) + s2[2] * d(p[2], q[2]))
}

/// Lower envelope of parabolas `s2 (p - q)^2 + f(q)` along one line.
/// Infinite entries are not sites.
fn dt_line(f: &mut [f64], s2: f64, v: &mut Vec<usize>, bounds: &mut Vec<f64>, out: &mut Vec<f64>) {
    v.clear();
    bounds.clear();
    for q in 0..f.len() {
        if !f[q].is_finite() {
            continue;
        }
        let key = |i: usize| f[i] + s2 * (i * i) as f64;
        loop {
            let Some(&top) = v.last() else {
                v.push(q);
                break;
            };
            let s = (key(q) - key(top)) / (2.0 * s2 * (q - top) as f64);
            if bounds.last().is_some_and(|&b| s <= b) {
                v.pop();
                bounds.pop();
            } else {
                bounds.push(s);
                v.push(q);
                break;
            }
        }
    }
    if v.is_empty() {
        return;
    }
    out.clear();
    let mut k = 0;
    for p in 0..f.len() {
        while k < bounds.len() && bounds[k] < p as f64 {
            k += 1;
        }
        let q = v[k];
        let t = p.abs_diff(q) as f64;
        out.push(s2 * (t * t) + f[q]);
    }
    f.copy_from_slice(out);
}

/// Squared distance from every voxel to the nearest site, infinite when
/// there are no sites.
pub fn squared_distance_transform(dims: [usize; 3], sites: &[[usize; 3]], spacing: [f32; 3]) -> Vec<f64> {
    let [d, h, w] = dims;
    let s2 = sq_spacing(spacing);
    let mut g = vec![f64::INFINITY; d * h * w];
    for &p in sites {
        g[voxel_index(dims, p[0], p[1], p[2])] = 0.0;
    }
    let (mut v, mut b, mut o) = (Vec::new(), Vec::new(), Vec::new());
    let mut line = Vec::new();
    // x lines are contiguous
    for row in g.chunks_exact_mut(w) {
        dt_line(row, s2[2], &mut v, &mut b, &mut o);
    }
    for z in 0..d {
        for x in 0..w {
            line.clear();
            line.extend((0..h).map(|y| g[voxel_index(dims, z, y, x)]));
            dt_line(&mut line, s2[1], &mut v, &mut b, &mut o);
            for (y, &val) in line.iter().enumerate() {
                g[voxel_index(dims, z, y, x)] = val;
            }
        }
    }
    for y in 0..h {
        for x in 0..w {
            line.clear();
            line.extend((0..d).map(|z| g[voxel_index(dims, z, y, x)]));
            dt_line(&mut line, s2[0], &mut v, &mut b, &mut o);
            for (z, &val) in line.iter().enumerate() {
                g[voxel_index(dims, z, y, x)] = val;
            }
        }
    }
    g
}

/// Distance from each point of `from` to the nearest point of `to`.
fn nearest_distances(dims: [usize; 3], from: &[[usize; 3]], to: &[[usize; 3]], spacing: [f32; 3]) -> Vec<f64> {
    let g = squared_distance_transform(dims, to, spacing);
    from.iter()
        .map(|p| g[voxel_index(dims, p[0], p[1], p[2])].sqrt())
        .collect()
}

/// The same quantity by exhaustive search.
pub fn nearest_distances_brute(from: &[[usize; 3]], to: &[[usize; 3]], spacing: [f32; 3]) -> Vec<f64> {
    let s2 = sq_spacing(spacing);
    from.iter()
        .map(|&p| {
            to.iter()
                .map(|&q| sq_dist(p, q, s2))
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .collect()
}

/// Both directed nearest-surface distance lists, or an empty-structure
/// error when either mask is empty.
fn directed(a: &Mask, b: &Mask, spacing: [f32; 3], brute: bool) -> Result<(Vec<f64>, Vec<f64>)> {
    check_dims(a.dims, b.dims)?;
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyStructure);
    }
    let (sa, sb) = (extract_surface(a), extract_surface(b));
    Ok(if brute {
        (
            nearest_distances_brute(&sa, &sb, spacing),
            nearest_distances_brute(&sb, &sa, spacing),
        )
    } else {
        (
            nearest_distances(a.dims, &sa, &sb, spacing),
            nearest_distances(a.dims, &sb, &sa, spacing),
        )
    })
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn mhd_of(ab: &[f64], ba: &[f64]) -> f64 {
    mean(ab).max(mean(ba))
}

fn asd_of(ab: &[f64], ba: &[f64]) -> f64 {
    (ab.iter().sum::<f64>() + ba.iter().sum::<f64>()) / (ab.len() + ba.len()) as f64
}

/// Modified Hausdorff distance: the larger of the two directed mean
/// nearest-surface distances, in mm.
pub fn mhd(a: &Mask, b: &Mask, spacing: [f32; 3]) -> Result<f64> {
    let (ab, ba) = directed(a, b, spacing, false)?;
    Ok(mhd_of(&ab, &ba))
}

/// Average surface distance over the union of both surfaces, in mm.
pub fn asd(a: &Mask, b: &Mask, spacing: [f32; 3]) -> Result<f64> {
    let (ab, ba) = directed(a, b, spacing, false)?;
    Ok(asd_of(&ab, &ba))
}

/// `(mhd, asd)` from one pair of distance transforms.
pub fn surface_distances(a: &Mask, b: &Mask, spacing: [f32; 3]) -> Result<(f64, f64)> {
    let (ab, ba) = directed(a, b, spacing, false)?;
    Ok((mhd_of(&ab, &ba), asd_of(&ab, &ba)))
}

/// All-pairs reference for [`surface_distances`].
pub fn surface_distances_brute(a: &Mask, b: &Mask, spacing: [f32; 3]) -> Result<(f64, f64)> {
    let (ab, ba) = directed(a, b, spacing, true)?;
    Ok((mhd_of(&ab, &ba), asd_of(&ab, &ba)))
}
