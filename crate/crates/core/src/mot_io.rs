//! MOTChallenge text format.
//!
//! One row per box: `frame,id,bb_left,bb_top,bb_width,bb_height,conf,x,y,z`.
//! Boxes are stored top-left/size on disk and center/size in memory. For
//! ground truth, `conf = 0` marks an occluded (invisible) entry; for tracker
//! output, `conf` is the detection score. Blank lines and lines starting
//! with `#` are ignored.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::geometry::BBox;
use crate::num::Scalar;
use crate::sequence::{GtEntry, ResultEntry, SequenceGt, SequenceResult};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotRow<T> {
    pub frame: u32,
    pub id: u32,
    pub bbox: BBox<T>,
    pub conf: T,
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

/// Parses every data row; `line` numbers in errors are 1-based.
pub fn parse_rows<T: Scalar>(text: &str) -> Result<Vec<MotRow<T>>> {
    let mut rows = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let s = raw.trim();
        if s.is_empty() || s.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = s.split(',').map(str::trim).collect();
        if !(7..=10).contains(&f.len()) {
            return Err(parse_err(line, format!("expected 7 to 10 fields, found {}", f.len())));
        }
        let int = |j: usize, name: &str| {
            f[j].parse::<u32>()
                .map_err(|_| parse_err(line, format!("{name} '{}' is not a non-negative integer", f[j])))
        };
        let num = |j: usize, name: &str| {
            f[j].parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .map(T::of)
                .ok_or_else(|| parse_err(line, format!("{name} '{}' is not a number", f[j])))
        };
        let frame = int(0, "frame")?;
        if frame == 0 {
            return Err(parse_err(line, "frame indices start at 1"));
        }
        let id = int(1, "id")?;
        let bbox = BBox::from_tlwh(num(2, "bb_left")?, num(3, "bb_top")?, num(4, "bb_width")?, num(5, "bb_height")?)
            .map_err(|_| parse_err(line, "box width and height must be positive"))?;
        let conf = num(6, "conf")?;
        rows.push(MotRow { frame, id, bbox, conf });
    }
    Ok(rows)
}

fn check_unique<T>(rows: &[MotRow<T>], text: &str) -> Result<()> {
    let mut seen = std::collections::HashSet::new();
    let mut data_lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !(l.trim().is_empty() || l.trim().starts_with('#')))
        .map(|(i, _)| i + 1);
    for r in rows {
        let line = data_lines.next().unwrap_or(0);
        if !seen.insert((r.frame, r.id)) {
            return Err(parse_err(line, format!("id {} repeated in frame {}", r.id, r.frame)));
        }
    }
    Ok(())
}

pub fn parse_gt<T: Scalar>(text: &str) -> Result<SequenceGt<T>> {
    let rows = parse_rows::<T>(text)?;
    check_unique(&rows, text)?;
    let mut gt = SequenceGt::default();
    for r in rows {
        gt.frames.entry(r.frame).or_default().push(GtEntry {
            id: r.id,
            bbox: r.bbox,
            visible: r.conf != T::zero(),
        });
    }
    for v in gt.frames.values_mut() {
        v.sort_by_key(|e| e.id);
    }
    Ok(gt)
}

pub fn parse_result<T: Scalar>(text: &str) -> Result<SequenceResult<T>> {
    let rows = parse_rows::<T>(text)?;
    check_unique(&rows, text)?;
    let mut res = SequenceResult::default();
    for r in rows {
        res.frames.entry(r.frame).or_default().push(ResultEntry {
            id: r.id,
            bbox: r.bbox,
            score: r.conf,
        });
    }
    for v in res.frames.values_mut() {
        v.sort_by_key(|e| e.id);
    }
    Ok(res)
}

fn push_row<T: Scalar>(out: &mut String, frame: u32, id: u32, b: &BBox<T>, conf: &str) {
    let [l, t, w, h] = b.to_tlwh();
    let _ = writeln!(
        out,
        "{frame},{id},{:.3},{:.3},{:.3},{:.3},{conf},-1,-1,-1",
        l.as_f64(),
        t.as_f64(),
        w.as_f64(),
        h.as_f64()
    );
}

/// Rows sorted by frame then id; `conf` is 1 (visible) or 0 (occluded).
pub fn write_gt<T: Scalar>(gt: &SequenceGt<T>) -> String {
    let mut out = String::new();
    for (&k, entries) in &gt.frames {
        let mut v: Vec<_> = entries.iter().collect();
        v.sort_by_key(|e| e.id);
        for e in v {
            push_row(&mut out, k, e.id, &e.bbox, if e.visible { "1" } else { "0" });
        }
    }
    out
}

/// Rows sorted by frame then id; `conf` is the score with six decimals.
pub fn write_result<T: Scalar>(res: &SequenceResult<T>) -> String {
    let mut out = String::new();
    for (&k, entries) in &res.frames {
        let mut v: Vec<_> = entries.iter().collect();
        v.sort_by_key(|e| e.id);
        for e in v {
            push_row(&mut out, k, e.id, &e.bbox, &format!("{:.6}", e.score.as_f64()));
        }
    }
    out
}

pub fn read_gt<T: Scalar>(path: &Path) -> Result<SequenceGt<T>> {
    parse_gt(&fs::read_to_string(path)?)
}

pub fn read_result<T: Scalar>(path: &Path) -> Result<SequenceResult<T>> {
    parse_result(&fs::read_to_string(path)?)
}
