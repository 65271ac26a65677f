//! Intensity and label grids with physical voxel spacing.

use crate::error::{Error, Result};

/// Number of tissue classes: background, CSF, gray matter, white matter.
pub const NUM_CLASSES: usize = 4;
pub const CLASS_NAMES: [&str; NUM_CLASSES] = ["BG", "CSF", "GM", "WM"];

fn check_grid(dims: [usize; 3], spacing: [f32; 3], len: usize) -> Result<()> {
    if dims.contains(&0) {
        return Err(Error::invalid(format!("volume dims {dims:?} must be positive")));
    }
    if !spacing.iter().all(|s| s.is_finite() && *s > 0.0) {
        return Err(Error::invalid(format!("voxel spacing {spacing:?} must be positive")));
    }
    let expected = dims.iter().product::<usize>();
    if len != expected {
        return Err(Error::InvalidShape {
            shape: dims.to_vec(),
            reason: format!("{len} voxels supplied, {expected} expected"),
        });
    }
    Ok(())
}

/// Row-major `[D, H, W]` voxel index.
#[inline]
pub fn voxel_index(dims: [usize; 3], z: usize, y: usize, x: usize) -> usize {
    (z * dims[1] + y) * dims[2] + x
}

/// One imaging modality.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    dims: [usize; 3],
    spacing: [f32; 3],
    data: Vec<f32>,
}

impl Volume {
    pub fn new(dims: [usize; 3], spacing: [f32; 3], data: Vec<f32>) -> Result<Self> {
        check_grid(dims, spacing, data.len())?;
        Ok(Volume { dims, spacing, data })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f32; 3] {
        self.spacing
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn get(&self, z: usize, y: usize, x: usize) -> f32 {
        self.data[voxel_index(self.dims, z, y, x)]
    }

    /// Same grid, new values.
    pub fn with_data(&self, data: Vec<f32>) -> Result<Self> {
        Volume::new(self.dims, self.spacing, data)
    }
}

/// Per-voxel tissue class.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelVolume {
    dims: [usize; 3],
    spacing: [f32; 3],
    labels: Vec<u8>,
}

impl LabelVolume {
    pub fn new(dims: [usize; 3], spacing: [f32; 3], labels: Vec<u8>) -> Result<Self> {
        check_grid(dims, spacing, labels.len())?;
        if let Some(&label) = labels.iter().find(|&&l| l as usize >= NUM_CLASSES) {
            return Err(Error::LabelOutOfRange {
                label,
                classes: NUM_CLASSES,
            });
        }
        Ok(LabelVolume {
            dims,
            spacing,
            labels,
        })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f32; 3] {
        self.spacing
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn get(&self, z: usize, y: usize, x: usize) -> u8 {
        self.labels[voxel_index(self.dims, z, y, x)]
    }

    /// Binary mask of one class.
    pub fn mask(&self, class: u8) -> Vec<bool> {
        self.labels.iter().map(|&l| l == class).collect()
    }

    /// Voxel count per class.
    pub fn histogram(&self) -> [usize; NUM_CLASSES] {
        let mut h = [0; NUM_CLASSES];
        for &l in &self.labels {
            h[l as usize] += 1;
        }
        h
    }
}

/// A training or evaluation subject: co-registered modalities (T1 then T2)
/// plus the tissue labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    modalities: Vec<Volume>,
    labels: LabelVolume,
}

impl Sample {
    pub fn new(modalities: Vec<Volume>, labels: LabelVolume) -> Result<Self> {
        if modalities.is_empty() {
            return Err(Error::invalid("sample needs at least one modality"));
        }
        for (i, m) in modalities.iter().enumerate() {
            if m.dims() != labels.dims() || m.spacing() != labels.spacing() {
                return Err(Error::invalid(format!(
                    "modality {i} grid {:?} @ {:?} differs from labels {:?} @ {:?}",
                    m.dims(),
                    m.spacing(),
                    labels.dims(),
                    labels.spacing()
                )));
            }
        }
        Ok(Sample { modalities, labels })
    }

    pub fn modalities(&self) -> &[Volume] {
        &self.modalities
    }

    pub fn labels(&self) -> &LabelVolume {
        &self.labels
    }

    pub fn dims(&self) -> [usize; 3] {
        self.labels.dims()
    }

    pub fn spacing(&self) -> [f32; 3] {
        self.labels.spacing()
    }
}

/// Checks that modalities share one grid, for inference inputs that carry
/// no labels.
pub fn check_same_grid(modalities: &[Volume]) -> Result<()> {
    let Some(first) = modalities.first() else {
        return Err(Error::invalid("no modalities supplied"));
    };
    for (i, m) in modalities.iter().enumerate().skip(1) {
        if m.dims() != first.dims() || m.spacing() != first.spacing() {
            return Err(Error::invalid(format!(
                "modality {i} grid {:?} @ {:?} differs from modality 0 grid {:?} @ {:?}",
                m.dims(),
                m.spacing(),
                first.dims(),
                first.spacing()
            )));
        }
    }
    Ok(())
}
