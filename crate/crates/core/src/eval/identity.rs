//! Identity-level precision, recall and F1 under a global id bijection.

use std::collections::BTreeMap;

use super::clear::frame_union;
use super::hungarian::hungarian;
use crate::geometry::iou;
use crate::num::Scalar;
use crate::sequence::{SequenceGt, SequenceResult};

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct IdentityCounts {
    pub idtp: usize,
    pub idfp: usize,
    pub idfn: usize,
}

impl IdentityCounts {
    pub fn idf1(&self) -> Option<f64> {
        let d = 2 * self.idtp + self.idfp + self.idfn;
        (d > 0).then(|| 2.0 * self.idtp as f64 / d as f64)
    }

    pub fn idp(&self) -> Option<f64> {
        let d = self.idtp + self.idfp;
        (d > 0).then(|| self.idtp as f64 / d as f64)
    }

    pub fn idr(&self) -> Option<f64> {
        let d = self.idtp + self.idfn;
        (d > 0).then(|| self.idtp as f64 / d as f64)
    }
}

/// Frame-overlap table between ground-truth and hypothesis identities.
#[derive(Debug, Clone, Default)]
pub struct OverlapTable {
    pub gt_ids: Vec<u32>,
    pub hyp_ids: Vec<u32>,
    /// `overlap[i][j]`: frames where gt `i` and hypothesis `j` coexist with
    /// IoU at or above the threshold.
    pub overlap: Vec<Vec<usize>>,
    pub gt_total: usize,
    pub hyp_total: usize,
}

pub fn overlap_table<T: Scalar>(
    gt: &SequenceGt<T>,
    res: &SequenceResult<T>,
    threshold: T,
) -> OverlapTable {
    let mut gidx: BTreeMap<u32, usize> = BTreeMap::new();
    let mut hidx: BTreeMap<u32, usize> = BTreeMap::new();
    for e in gt.frames.values().flatten().filter(|e| e.visible) {
        let n = gidx.len();
        gidx.entry(e.id).or_insert(n);
    }
    for e in res.frames.values().flatten() {
        let n = hidx.len();
        hidx.entry(e.id).or_insert(n);
    }
    let mut t = OverlapTable {
        overlap: vec![vec![0; hidx.len()]; gidx.len()],
        ..Default::default()
    };
    for k in frame_union(gt, res) {
        let h = res.frame(k);
        t.hyp_total += h.len();
        for g in gt.visible(k) {
            t.gt_total += 1;
            for he in h {
                if iou(&g.bbox, &he.bbox) >= threshold {
                    t.overlap[gidx[&g.id]][hidx[&he.id]] += 1;
                }
            }
        }
    }
    let mut g: Vec<_> = gidx.into_iter().collect();
    g.sort_by_key(|&(_, i)| i);
    t.gt_ids = g.into_iter().map(|(id, _)| id).collect();
    let mut h: Vec<_> = hidx.into_iter().collect();
    h.sort_by_key(|&(_, i)| i);
    t.hyp_ids = h.into_iter().map(|(id, _)| id).collect();
    t
}

/// IDTP is the largest total overlap achievable by a one-to-one mapping of
/// ground-truth to hypothesis identities.
pub fn identity_counts<T: Scalar>(
    gt: &SequenceGt<T>,
    res: &SequenceResult<T>,
    threshold: T,
) -> IdentityCounts {
    let t = overlap_table(gt, res, threshold);
    let cost: Vec<Vec<f64>> = t
        .overlap
        .iter()
        .map(|r| r.iter().map(|&c| -(c as f64)).collect())
        .collect();
    let idtp = hungarian(&cost)
        .iter()
        .enumerate()
        .filter_map(|(i, j)| j.map(|j| t.overlap[i][j]))
        .sum();
    IdentityCounts {
        idtp,
        idfp: t.hyp_total - idtp,
        idfn: t.gt_total - idtp,
    }
}

/// `(idf1, idp, idr)`; each `None` when its denominator is empty.
pub fn idf1<T: Scalar>(
    gt: &SequenceGt<T>,
    res: &SequenceResult<T>,
    threshold: T,
) -> (Option<f64>, Option<f64>, Option<f64>) {
    let c = identity_counts(gt, res, threshold);
    (c.idf1(), c.idp(), c.idr())
}
