//! CLEAR-MOT accumulation with correspondence persistence.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use super::hungarian::hungarian;
use crate::geometry::iou;
use crate::num::Scalar;
use crate::sequence::{SequenceGt, SequenceResult};

/// Raw CLEAR-MOT tallies.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ClearCounts {
    pub gt_total: usize,
    pub matches: usize,
    pub fp: usize,
    pub fn_: usize,
    pub idsw: usize,
    pub frag: usize,
    pub mt: usize,
    pub pt: usize,
    pub ml: usize,
    pub gt_tracks: usize,
    /// Sum of IoU over matches.
    pub iou_sum: f64,
}

impl ClearCounts {
    /// `None` when there is no visible ground truth.
    pub fn mota(&self) -> Option<f64> {
        (self.gt_total > 0)
            .then(|| 1.0 - (self.fn_ + self.fp + self.idsw) as f64 / self.gt_total as f64)
    }

    /// Mean IoU of matched pairs.
    pub fn motp(&self) -> Option<f64> {
        (self.matches > 0).then(|| self.iou_sum / self.matches as f64)
    }
}

/// Frames covered by either input, ascending.
pub(crate) fn frame_union<T: Scalar>(gt: &SequenceGt<T>, res: &SequenceResult<T>) -> Vec<u32> {
    gt.frames
        .keys()
        .chain(res.frames.keys())
        .copied()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

/// Per-frame matching. With `persistent`, a ground-truth identity keeps its
/// last hypothesis whenever that hypothesis is present with IoU at or above
/// `threshold`; remaining pairs are matched optimally on `1 - IoU`.
pub fn clear_mot<T: Scalar>(
    gt: &SequenceGt<T>,
    res: &SequenceResult<T>,
    threshold: T,
    persistent: bool,
) -> ClearCounts {
    let mut c = ClearCounts::default();
    let mut last: HashMap<u32, u32> = HashMap::new();
    // Per identity: (visible frames, matched frames, currently tracked).
    let mut life: BTreeMap<u32, (usize, usize, bool)> = BTreeMap::new();

    for k in frame_union(gt, res) {
        let g: Vec<_> = gt.visible(k).collect();
        let h = res.frame(k);
        c.gt_total += g.len();

        let mut g_used = vec![false; g.len()];
        let mut h_used = vec![false; h.len()];
        let mut pairs: Vec<(usize, usize)> = Vec::new();

        if persistent {
            for (gi, ge) in g.iter().enumerate() {
                let Some(&hid) = last.get(&ge.id) else { continue };
                if let Some(hi) = h.iter().position(|e| e.id == hid) {
                    if !h_used[hi] && iou(&ge.bbox, &h[hi].bbox) >= threshold {
                        g_used[gi] = true;
                        h_used[hi] = true;
                        pairs.push((gi, hi));
                    }
                }
            }
        }

        let g_rest: Vec<usize> = (0..g.len()).filter(|&i| !g_used[i]).collect();
        let h_rest: Vec<usize> = (0..h.len()).filter(|&i| !h_used[i]).collect();
        if !g_rest.is_empty() && !h_rest.is_empty() {
            let cost: Vec<Vec<T>> = g_rest
                .iter()
                .map(|&gi| {
                    h_rest
                        .iter()
                        .map(|&hi| {
                            let v = iou(&g[gi].bbox, &h[hi].bbox);
                            if v >= threshold {
                                T::one() - v
                            } else {
                                T::infinity()
                            }
                        })
                        .collect()
                })
                .collect();
            for (r, col) in hungarian(&cost).into_iter().enumerate() {
                if let Some(col) = col {
                    pairs.push((g_rest[r], h_rest[col]));
                }
            }
        }

        let mut tracked_now: BTreeSet<u32> = BTreeSet::new();
        for &(gi, hi) in &pairs {
            let gid = g[gi].id;
            let hid = h[hi].id;
            if let Some(&prev) = last.get(&gid) {
                if prev != hid {
                    c.idsw += 1;
                }
            }
            last.insert(gid, hid);
            tracked_now.insert(gid);
            c.iou_sum += iou(&g[gi].bbox, &h[hi].bbox).as_f64();
        }
        c.matches += pairs.len();
        c.fn_ += g.len() - pairs.len();
        c.fp += h.len() - pairs.len();

        for ge in &g {
            let entry = life.entry(ge.id).or_insert((0, 0, false));
            entry.0 += 1;
            let tracked = tracked_now.contains(&ge.id);
            if tracked {
                // Resumed after a visible-but-untracked gap.
                if entry.1 > 0 && !entry.2 {
                    c.frag += 1;
                }
                entry.1 += 1;
            }
            entry.2 = tracked;
        }
    }

    c.gt_tracks = life.len();
    for (visible, matched, _) in life.values() {
        let ratio = *matched as f64 / *visible as f64;
        if ratio >= 0.8 {
            c.mt += 1;
        } else if ratio <= 0.2 {
            c.ml += 1;
        } else {
            c.pt += 1;
        }
    }
    c
}
