use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use super::encoder::VisualFeatureGrid;
use crate::error::{Error, Result};

/// Axis-aligned box in normalized image coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self> {
        let b = Self {
            x_min,
            y_min,
            x_max,
            y_max,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let coords = [self.x_min, self.y_min, self.x_max, self.y_max];
        if coords.iter().any(|c| !c.is_finite() || *c < 0.0 || *c > 1.0) {
            return Err(Error::input(format!("box {self:?} is not normalized to [0,1]")));
        }
        if self.x_min >= self.x_max || self.y_min >= self.y_max {
            return Err(Error::input(format!("box {self:?} has empty extent")));
        }
        Ok(())
    }

    /// Positive-area overlap with the half-open rectangle `[x0,x1) x [y0,y1)`.
    pub fn overlaps(&self, x0: f64, y0: f64, x1: f64, y1: f64) -> bool {
        let w = self.x_max.min(x1) - self.x_min.max(x0);
        let h = self.y_max.min(y1) - self.y_min.max(y0);
        w > 0.0 && h > 0.0
    }
}

/// Up to two boxes attached to a sample.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BBoxSet {
    pub boxes: Vec<BBox>,
}

impl BBoxSet {
    pub const MAX_BOXES: usize = 2;

    pub fn new(boxes: Vec<BBox>) -> Result<Self> {
        let set = Self { boxes };
        set.validate()?;
        Ok(set)
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.boxes.len() > Self::MAX_BOXES {
            return Err(Error::input(format!(
                "{} boxes given, at most {} supported",
                self.boxes.len(),
                Self::MAX_BOXES
            )));
        }
        self.boxes.iter().try_for_each(BBox::validate)
    }
}

/// Binary patch mask in row-major order: patch `(i, j)` covers
/// `[j/gw, (j+1)/gw) x [i/gh, (i+1)/gh)` and is set iff that rectangle
/// overlaps some box with positive area.
pub fn patch_mask(boxes: &BBoxSet, grid: (usize, usize)) -> Vec<bool> {
    let (gh, gw) = grid;
    let mut mask = vec![false; gh * gw];
    for i in 0..gh {
        let y0 = i as f64 / gh as f64;
        let y1 = (i + 1) as f64 / gh as f64;
        for j in 0..gw {
            let x0 = j as f64 / gw as f64;
            let x1 = (j + 1) as f64 / gw as f64;
            mask[i * gw + j] = boxes.boxes.iter().any(|b| b.overlaps(x0, y0, x1, y1));
        }
    }
    mask
}

/// Returns `z + M * p_bbox`. Unmasked patches are copied bit-for-bit.
pub fn embed_bboxes(z: &VisualFeatureGrid, boxes: &BBoxSet, p_bbox: &Array2<f64>) -> Result<VisualFeatureGrid> {
    boxes.validate()?;
    if p_bbox.dim() != (1, z.dim()) {
        return Err(Error::input(format!(
            "bbox embedding has shape {:?}, grid dim is {}",
            p_bbox.dim(),
            z.dim()
        )));
    }
    if boxes.is_empty() {
        return Ok(z.clone());
    }
    let mask = patch_mask(boxes, z.grid());
    let mut rows = z.to_rows();
    let p = p_bbox.row(0);
    for (mut row, on) in rows.axis_iter_mut(Axis(0)).zip(mask) {
        if on {
            row += &p;
        }
    }
    VisualFeatureGrid::from_rows(rows, z.grid())
}
