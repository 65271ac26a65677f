//! Per-tissue metrics of a predicted segmentation.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::eval::metrics::{dice, surface_distances, Mask};
use crate::volume::{LabelVolume, CLASS_NAMES};

/// Tissue classes reported; background is excluded.
pub const TISSUES: [u8; 3] = [1, 2, 3];

#[derive(Clone, Debug, PartialEq)]
pub struct ClassMetrics {
    pub class: u8,
    pub dsc: f64,
    /// `None` when the class is absent from the prediction or the ground
    /// truth, so no surface distance is defined.
    pub mhd_mm: Option<f64>,
    pub asd_mm: Option<f64>,
}

impl ClassMetrics {
    pub fn name(&self) -> &'static str {
        CLASS_NAMES[self.class as usize]
    }

    pub fn empty_structure(&self) -> bool {
        self.mhd_mm.is_none()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub classes: Vec<ClassMetrics>,
    pub average_dsc: f64,
}

pub fn average(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

pub fn evaluate(pred: &LabelVolume, gt: &LabelVolume) -> Result<MetricsReport> {
    if pred.dims() != gt.dims() {
        return Err(Error::ShapeMismatch {
            op: "evaluate",
            lhs: pred.dims().to_vec(),
            rhs: gt.dims().to_vec(),
        });
    }
    if pred.spacing() != gt.spacing() {
        return Err(Error::invalid(format!(
            "prediction spacing {:?} differs from ground truth {:?}",
            pred.spacing(),
            gt.spacing()
        )));
    }
    let mut classes = Vec::new();
    for c in TISSUES {
        let dsc = dice(pred, gt, c)?;
        let (mhd_mm, asd_mm) =
            match surface_distances(&Mask::of_class(pred, c), &Mask::of_class(gt, c), gt.spacing()) {
                Ok((m, a)) => (Some(m), Some(a)),
                Err(Error::EmptyStructure) => (None, None),
                Err(e) => return Err(e),
            };
        classes.push(ClassMetrics {
            class: c,
            dsc,
            mhd_mm,
            asd_mm,
        });
    }
    let average_dsc = average(&classes.iter().map(|c| c.dsc).collect::<Vec<_>>());
    Ok(MetricsReport {
        classes,
        average_dsc,
    })
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "empty".to_string(), |x| format!("{x:.6}"))
}

impl MetricsReport {
    /// `class,dsc,mhd_mm,asd_mm` rows, one per tissue, then the average DSC.
    /// Undefined distances are written as `empty`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("class,dsc,mhd_mm,asd_mm\n");
        for c in &self.classes {
            let _ = writeln!(s, "{},{:.6},{},{}", c.name(), c.dsc, cell(c.mhd_mm), cell(c.asd_mm));
        }
        let _ = writeln!(s, "average,{:.6},,", self.average_dsc);
        s
    }

    pub fn to_table(&self) -> String {
        let mut s = format!("{:<8} {:>8} {:>10} {:>10}\n", "class", "DSC", "MHD (mm)", "ASD (mm)");
        for c in &self.classes {
            let _ = writeln!(
                s,
                "{:<8} {:>8.4} {:>10} {:>10}",
                c.name(),
                c.dsc,
                c.mhd_mm.map_or("empty".into(), |v| format!("{v:.4}")),
                c.asd_mm.map_or("empty".into(), |v| format!("{v:.4}")),
            );
        }
        let _ = writeln!(s, "{:<8} {:>8.4}", "average", self.average_dsc);
        s
    }
}
