//! Per-frame annotation containers for ground truth and tracker output.

use std::collections::BTreeMap;

use crate::geometry::BBox;
use crate::num::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GtEntry<T> {
    pub id: u32,
    pub bbox: BBox<T>,
    /// Occluded frames stay in the sequence with `visible = false`.
    pub visible: bool,
}

/// Ground-truth trajectories keyed by 1-based frame index.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SequenceGt<T> {
    pub frames: BTreeMap<u32, Vec<GtEntry<T>>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResultEntry<T> {
    pub id: u32,
    pub bbox: BBox<T>,
    pub score: T,
}

/// Tracker output keyed by 1-based frame index.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SequenceResult<T> {
    pub frames: BTreeMap<u32, Vec<ResultEntry<T>>>,
}

impl<T: Scalar> SequenceGt<T> {
    pub fn frame(&self, k: u32) -> &[GtEntry<T>] {
        self.frames.get(&k).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Visible entries of frame `k`.
    pub fn visible(&self, k: u32) -> impl Iterator<Item = &GtEntry<T>> {
        self.frame(k).iter().filter(|e| e.visible)
    }

    pub fn find(&self, k: u32, id: u32) -> Option<&GtEntry<T>> {
        self.frame(k).iter().find(|e| e.id == id)
    }

    pub fn frame_indices(&self) -> Vec<u32> {
        self.frames.keys().copied().collect()
    }

    pub fn visible_count(&self) -> usize {
        self.frames.values().flatten().filter(|e| e.visible).count()
    }
}

impl<T: Scalar> SequenceResult<T> {
    pub fn frame(&self, k: u32) -> &[ResultEntry<T>] {
        self.frames.get(&k).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn len(&self) -> usize {
        self.frames.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
