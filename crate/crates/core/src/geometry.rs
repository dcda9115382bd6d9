//! Boxes and the pairwise distances used by graph assembling, matching
//! costs, and evaluation.
//!
//! Boxes are center-format `(cx, cy, w, h)` in normalized image coordinates.
//! Corner form is derived internally for area computations.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Normalized center-format bounding box.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    /// Construct with invariant checks: centers in `[0,1]`, extents in
    /// `(0,1]`. Degenerate (zero-extent) boxes are rejected.
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&cx) || !(0.0..=1.0).contains(&cy) {
            return Err(Error::InvalidBox(format!("center ({cx}, {cy}) outside [0,1]")));
        }
        if !(w > 0.0 && w <= 1.0 && h > 0.0 && h <= 1.0) {
            return Err(Error::InvalidBox(format!("extent ({w}, {h}) outside (0,1]")));
        }
        Ok(BBox { cx, cy, w, h })
    }

    /// Construct without range checks, for model outputs that are
    /// sigmoid-bounded by construction.
    pub fn from_raw(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        BBox { cx, cy, w, h }
    }

    /// Corner form `(x1, y1, x2, y2)`.
    pub fn corners(&self) -> (f64, f64, f64, f64) {
        (
            self.cx - self.w / 2.0,
            self.cy - self.h / 2.0,
            self.cx + self.w / 2.0,
            self.cy + self.h / 2.0,
        )
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    /// Smallest axis-aligned box enclosing both.
    pub fn union_box(&self, other: &BBox) -> BBox {
        let (ax1, ay1, ax2, ay2) = self.corners();
        let (bx1, by1, bx2, by2) = other.corners();
        let x1 = ax1.min(bx1);
        let y1 = ay1.min(by1);
        let x2 = ax2.max(bx2);
        let y2 = ay2.max(by2);
        BBox::from_raw((x1 + x2) / 2.0, (y1 + y2) / 2.0, x2 - x1, y2 - y1)
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.cx, self.cy, self.w, self.h]
    }
}

fn intersection_area(a: &BBox, b: &BBox) -> f64 {
    let (ax1, ay1, ax2, ay2) = a.corners();
    let (bx1, by1, bx2, by2) = b.corners();
    let iw = (ax2.min(bx2) - ax1.max(bx1)).max(0.0);
    let ih = (ay2.min(by2) - ay1.max(by1)).max(0.0);
    iw * ih
}

/// Intersection over union, in `[0, 1]`.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = intersection_area(a, b);
    let union = a.area() + b.area() - inter;
    inter / union
}

/// Generalized IoU, in `(-1, 1]`: IoU minus the fraction of the enclosing
/// box not covered by the union.
pub fn giou(a: &BBox, b: &BBox) -> f64 {
    let inter = intersection_area(a, b);
    let union = a.area() + b.area() - inter;
    let (ax1, ay1, ax2, ay2) = a.corners();
    let (bx1, by1, bx2, by2) = b.corners();
    let ew = ax2.max(bx2) - ax1.min(bx1);
    let eh = ay2.max(by2) - ay1.min(by1);
    let enclose = ew * eh;
    inter / union - (enclose - union) / enclose
}

/// L1 distance between box centers.
pub fn center_l1(a: &BBox, b: &BBox) -> f64 {
    (a.cx - b.cx).abs() + (a.cy - b.cy).abs()
}

/// Spatial matching distance between an entity indicator and an entity:
/// clipped GIoU over center distance, guarded by `eps`.
pub fn d_loc(indicator: &BBox, entity: &BBox, eps: f64) -> f64 {
    giou(indicator, entity).clamp(0.0, 1.0) / (center_l1(indicator, entity) + eps)
}

/// Non-negative class-score vector, optionally with a background slot.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassDistribution {
    probs: Vec<f64>,
}

impl ClassDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidDistribution("empty vector".into()));
        }
        if probs.iter().any(|&p| p < 0.0 || !p.is_finite()) {
            return Err(Error::InvalidDistribution("negative or non-finite entry".into()));
        }
        Ok(ClassDistribution { probs })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }
}

impl std::ops::Deref for ClassDistribution {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.probs
    }
}

/// Cosine similarity of two non-negative class-score vectors, in `[0, 1]`.
/// Errors on a zero-norm input.
pub fn d_cls(p: &ClassDistribution, q: &ClassDistribution) -> Result<f64> {
    cosine(p.probs(), q.probs())
}

/// Cosine similarity of raw slices; used on matrix rows internally.
pub fn cosine(p: &[f64], q: &[f64]) -> Result<f64> {
    debug_assert_eq!(p.len(), q.len());
    let np: f64 = p.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nq: f64 = q.iter().map(|x| x * x).sum::<f64>().sqrt();
    if np == 0.0 || nq == 0.0 {
        return Err(Error::InvalidDistribution("zero-norm vector in cosine".into()));
    }
    let dot: f64 = p.iter().zip(q).map(|(x, y)| x * y).sum();
    Ok(dot / (np * nq))
}
