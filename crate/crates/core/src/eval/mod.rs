//! Tracking metrics: CLEAR-MOT, identity F1 and trajectory coverage.

pub mod clear;
pub mod hungarian;
pub mod identity;

use std::fmt;

use crate::num::Scalar;
use crate::sequence::{SequenceGt, SequenceResult};

pub use clear::{clear_mot, ClearCounts};
pub use hungarian::{hungarian, match_above};
pub use identity::{idf1, identity_counts, IdentityCounts};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalConfig {
    /// Minimum IoU for a hypothesis to cover a ground-truth box.
    pub iou_threshold: f64,
    /// Keep previous correspondences while they still overlap.
    pub persistent: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            iou_threshold: 0.5,
            persistent: true,
        }
    }
}

/// Ratios are `None` when undefined (no ground truth or no hypotheses).
#[derive(Debug, Clone, PartialEq)]
pub struct MotMetrics {
    pub mota: Option<f64>,
    pub motp: Option<f64>,
    pub idf1: Option<f64>,
    pub idp: Option<f64>,
    pub idr: Option<f64>,
    pub fp: usize,
    pub fn_: usize,
    pub idsw: usize,
    pub frag: usize,
    pub mt: usize,
    pub pt: usize,
    pub ml: usize,
    pub gt_total: usize,
    pub gt_tracks: usize,
    pub idtp: usize,
}

pub const CSV_HEADER: &str =
    "mota,idf1,idp,idr,motp,fp,fn,idsw,frag,mt,pt,ml,gt_total,gt_tracks";

fn ratio(v: Option<f64>) -> String {
    v.map_or_else(|| "nan".to_string(), |x| format!("{x:.6}"))
}

impl MotMetrics {
    /// Fields in [`CSV_HEADER`] order.
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            ratio(self.mota),
            ratio(self.idf1),
            ratio(self.idp),
            ratio(self.idr),
            ratio(self.motp),
            self.fp,
            self.fn_,
            self.idsw,
            self.frag,
            self.mt,
            self.pt,
            self.ml,
            self.gt_total,
            self.gt_tracks
        )
    }

    /// Sums counts over sequences and recomputes the ratios.
    pub fn combine(parts: &[MotMetrics]) -> MotMetrics {
        let sum = |f: fn(&MotMetrics) -> usize| parts.iter().map(f).sum::<usize>();
        let (gt_total, fp, fn_, idsw, idtp) = (
            sum(|m| m.gt_total),
            sum(|m| m.fp),
            sum(|m| m.fn_),
            sum(|m| m.idsw),
            sum(|m| m.idtp),
        );
        let hyp_total = gt_total - fn_ + fp;
        let ids = IdentityCounts {
            idtp,
            idfp: hyp_total - idtp,
            idfn: gt_total - idtp,
        };
        let matches = gt_total - fn_;
        let iou_sum: f64 = parts
            .iter()
            .map(|m| m.motp.unwrap_or(0.0) * (m.gt_total - m.fn_) as f64)
            .sum();
        MotMetrics {
            mota: (gt_total > 0).then(|| 1.0 - (fn_ + fp + idsw) as f64 / gt_total as f64),
            motp: (matches > 0).then(|| iou_sum / matches as f64),
            idf1: ids.idf1(),
            idp: ids.idp(),
            idr: ids.idr(),
            fp,
            fn_,
            idsw,
            frag: sum(|m| m.frag),
            mt: sum(|m| m.mt),
            pt: sum(|m| m.pt),
            ml: sum(|m| m.ml),
            gt_total,
            gt_tracks: sum(|m| m.gt_tracks),
            idtp,
        }
    }
}

impl fmt::Display for MotMetrics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let pct = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |x| format!("{:.1}", 100.0 * x));
        writeln!(
            f,
            "{:>7} {:>7} {:>7} {:>7} {:>6} {:>6} {:>5} {:>5} {:>4} {:>4}",
            "MOTA", "IDF1", "IDP", "IDR", "FP", "FN", "IDs", "Frag", "MT", "ML"
        )?;
        write!(
            f,
            "{:>7} {:>7} {:>7} {:>7} {:>6} {:>6} {:>5} {:>5} {:>4} {:>4}",
            pct(self.mota),
            pct(self.idf1),
            pct(self.idp),
            pct(self.idr),
            self.fp,
            self.fn_,
            self.idsw,
            self.frag,
            self.mt,
            self.ml
        )
    }
}

pub fn evaluate<T: Scalar>(
    gt: &SequenceGt<T>,
    res: &SequenceResult<T>,
    cfg: &EvalConfig,
) -> MotMetrics {
    let thr = T::of(cfg.iou_threshold);
    let c = clear_mot(gt, res, thr, cfg.persistent);
    let ids = identity_counts(gt, res, thr);
    MotMetrics {
        mota: c.mota(),
        motp: c.motp(),
        idf1: ids.idf1(),
        idp: ids.idp(),
        idr: ids.idr(),
        fp: c.fp,
        fn_: c.fn_,
        idsw: c.idsw,
        frag: c.frag,
        mt: c.mt,
        pt: c.pt,
        ml: c.ml,
        gt_total: c.gt_total,
        gt_tracks: c.gt_tracks,
        idtp: ids.idtp,
    }
}
