//! Boxes, overlap measures and paired non-max suppression.
//!
//! A [`PairedBox`] spans two frames. Its overlap with another paired box is
//! measured as a two-slice volume: intersections and unions are summed over
//! the `prev` and `cur` frames before dividing.

use std::cmp::Ordering;

use crate::num::Scalar;
use crate::{Error, Result};

/// Axis-aligned box in center form, in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox<T> {
    pub cx: T,
    pub cy: T,
    pub w: T,
    pub h: T,
}

impl<T: Scalar> BBox<T> {
    pub fn new(cx: T, cy: T, w: T, h: T) -> Result<Self> {
        let b = Self { cx, cy, w, h };
        if b.is_valid() {
            Ok(b)
        } else {
            Err(Error::InvalidBox(format!("cx={cx} cy={cy} w={w} h={h}")))
        }
    }

    /// Builds a box from MOTChallenge top-left/size form.
    pub fn from_tlwh(left: T, top: T, w: T, h: T) -> Result<Self> {
        let two = T::of(2.0);
        Self::new(left + w / two, top + h / two, w, h)
    }

    pub fn to_tlwh(&self) -> [T; 4] {
        let two = T::of(2.0);
        [self.cx - self.w / two, self.cy - self.h / two, self.w, self.h]
    }

    /// Box spanning the given corners. Callers guarantee `x2 > x1`, `y2 > y1`.
    pub fn from_corners(x1: T, y1: T, x2: T, y2: T) -> Self {
        let two = T::of(2.0);
        Self {
            cx: (x1 + x2) / two,
            cy: (y1 + y2) / two,
            w: x2 - x1,
            h: y2 - y1,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.cx.is_finite()
            && self.cy.is_finite()
            && self.w.is_finite()
            && self.h.is_finite()
            && self.w > T::zero()
            && self.h > T::zero()
    }

    /// `(x1, y1, x2, y2)`.
    #[inline]
    pub fn corners(&self) -> [T; 4] {
        let two = T::of(2.0);
        let hw = self.w / two;
        let hh = self.h / two;
        [self.cx - hw, self.cy - hh, self.cx + hw, self.cy + hh]
    }

    /// Area computed from the corner representation, so that overlap ratios
    /// of identical boxes are exactly one.
    #[inline]
    pub fn area(&self) -> T {
        let [x1, y1, x2, y2] = self.corners();
        (x2 - x1) * (y2 - y1)
    }

    pub fn intersection_area(&self, other: &Self) -> T {
        let [ax1, ay1, ax2, ay2] = self.corners();
        let [bx1, by1, bx2, by2] = other.corners();
        let iw = (ax2.min(bx2) - ax1.max(bx1)).max(T::zero());
        let ih = (ay2.min(by2) - ay1.max(by1)).max(T::zero());
        iw * ih
    }

    pub fn union_area(&self, other: &Self) -> T {
        self.area() + other.area() - self.intersection_area(other)
    }

    pub fn contains(&self, other: &Self) -> bool {
        let [ax1, ay1, ax2, ay2] = self.corners();
        let [bx1, by1, bx2, by2] = other.corners();
        ax1 <= bx1 && ay1 <= by1 && ax2 >= bx2 && ay2 >= by2
    }

    pub fn cast<U: Scalar>(&self) -> BBox<U> {
        BBox {
            cx: U::of(self.cx.as_f64()),
            cy: U::of(self.cy.as_f64()),
            w: U::of(self.w.as_f64()),
            h: U::of(self.h.as_f64()),
        }
    }
}

/// Intersection over union of two boxes, in `[0, 1]`.
pub fn iou<T: Scalar>(a: &BBox<T>, b: &BBox<T>) -> T {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    if union > T::zero() {
        inter / union
    } else {
        T::zero()
    }
}

/// Smallest axis-aligned box containing both inputs.
pub fn enclosing_box<T: Scalar>(a: &BBox<T>, b: &BBox<T>) -> BBox<T> {
    let [ax1, ay1, ax2, ay2] = a.corners();
    let [bx1, by1, bx2, by2] = b.corners();
    BBox::from_corners(ax1.min(bx1), ay1.min(by1), ax2.max(bx2), ay2.max(by2))
}

/// Area of [`enclosing_box`], taken straight from the corners.
pub fn enclosing_area<T: Scalar>(a: &BBox<T>, b: &BBox<T>) -> T {
    let [ax1, ay1, ax2, ay2] = a.corners();
    let [bx1, by1, bx2, by2] = b.corners();
    (ax2.max(bx2) - ax1.min(bx1)) * (ay2.max(by2) - ay1.min(by1))
}

/// Hypothesis spanning frames `k - Δk` (`prev`) and `k` (`cur`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairedBox<T> {
    pub prev: BBox<T>,
    pub cur: BBox<T>,
}

impl<T: Scalar> PairedBox<T> {
    pub fn new(prev: BBox<T>, cur: BBox<T>) -> Self {
        Self { prev, cur }
    }

    /// Detection-mode pair: both frames hold the same box.
    pub fn still(b: BBox<T>) -> Self {
        Self { prev: b, cur: b }
    }

    pub fn is_valid(&self) -> bool {
        self.prev.is_valid() && self.cur.is_valid()
    }

    fn slices(&self) -> [&BBox<T>; 2] {
        [&self.prev, &self.cur]
    }
}

/// Two-slice volumetric IoU: summed intersections over summed unions.
pub fn iou3d<T: Scalar>(d: &PairedBox<T>, g: &PairedBox<T>) -> T {
    let mut inter = T::zero();
    let mut union = T::zero();
    for (a, b) in d.slices().into_iter().zip(g.slices()) {
        let i = a.intersection_area(b);
        inter = inter + i;
        union = union + (a.area() + b.area() - i);
    }
    if union > T::zero() {
        inter / union
    } else {
        T::zero()
    }
}

/// Volumetric generalized IoU of paired boxes, in `(-1, 1]`.
///
/// `iou3d - |Σ (hull_i - union_i)| / |Σ hull_i|` with `hull_i` the enclosing
/// box of the two slices in frame `i`.
pub fn giou3d<T: Scalar>(d: &PairedBox<T>, g: &PairedBox<T>) -> T {
    let mut inter = T::zero();
    let mut union = T::zero();
    let mut hull = T::zero();
    for (a, b) in d.slices().into_iter().zip(g.slices()) {
        let i = a.intersection_area(b);
        inter = inter + i;
        union = union + (a.area() + b.area() - i);
        hull = hull + enclosing_area(a, b);
    }
    if hull <= T::zero() {
        return T::zero();
    }
    let iou = inter / union;
    iou - (hull - union).abs() / hull.abs()
}

/// One paired hypothesis emitted by the sampler.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairedDetection<T> {
    pub boxes: PairedBox<T>,
    pub cls_score: T,
    pub assoc_score: T,
    pub class_id: u32,
    /// The proposal slot was seeded from a previous-frame track box.
    pub from_prior: bool,
}

impl<T: Scalar> PairedDetection<T> {
    pub fn new(boxes: PairedBox<T>, cls_score: T, assoc_score: T) -> Self {
        Self {
            boxes,
            cls_score,
            assoc_score,
            class_id: 0,
            from_prior: false,
        }
    }

    /// Ranking key shared by NMS and box renewal.
    #[inline]
    pub fn combined_score(&self) -> T {
        self.cls_score * self.assoc_score
    }
}

/// Indices of `dets` ordered by descending combined score, ties by index.
pub fn rank_by_score<T: Scalar>(dets: &[PairedDetection<T>]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        dets[b]
            .combined_score()
            .partial_cmp(&dets[a].combined_score())
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    order
}

/// Greedy paired NMS. A detection is dropped when its [`iou3d`] with an
/// already kept detection exceeds `threshold`. Output is in descending
/// combined-score order.
pub fn nms_paired<T: Scalar>(
    dets: &[PairedDetection<T>],
    threshold: T,
) -> Result<Vec<PairedDetection<T>>> {
    if !(threshold > T::zero() && threshold < T::one()) {
        return Err(Error::Range(format!("nms threshold {threshold} not in (0,1)")));
    }
    let mut kept: Vec<PairedDetection<T>> = Vec::new();
    for i in rank_by_score(dets) {
        let cand = &dets[i];
        if kept
            .iter()
            .all(|k| iou3d(&k.boxes, &cand.boxes) <= threshold)
        {
            kept.push(*cand);
        }
    }
    Ok(kept)
}
