//! Track lifecycle and the four-stage IoU association cascade.
//!
//! Each frame the tracker receives paired detections for `(k-1, k)`. A
//! track is compared to a detection through the paired overlap of its own
//! `(k-1 estimate, k prediction)` pair with the detection pair, so the
//! previous-frame slot carries the association evidence.
//!
//! Cascade, in order (each stage sees only what earlier stages left):
//!
//! 1. Activated tracks against high-score detections seeded from prior
//!    boxes, then the still-unmatched activated tracks against high-score
//!    new detections.
//! 2. Lost tracks against all remaining high-score detections.
//! 3. Still-unmatched activated tracks against low-score detections; those
//!    left over become lost.
//! 4. Unactivated tracks against remaining high-score detections; those
//!    left over are removed.
//!
//! Remaining high-score detections that overlap a detection already claimed
//! this frame by at least `duplicate_iou` are duplicates. The rest start
//! unactivated tracks (activated directly on the first frame). Lost tracks unmatched for more
//! than `n_lost` frames are removed.

pub mod kalman;
pub mod stretch;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::denoiser::{Denoiser, FrameContext};
use crate::eval::match_above;
use crate::geometry::{iou, iou3d, BBox, PairedBox, PairedDetection};
use crate::num::Scalar;
use crate::sampler::{run_inference, SamplerConfig};
use crate::schedule::SignalSpace;
use crate::sequence::{ResultEntry, SequenceGt, SequenceResult};
use crate::{Error, Result};

pub use kalman::{KalmanConfig, KalmanState};
pub use stretch::{stretch_batch, stretch_raw};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TrackState {
    Activated,
    Unactivated,
    Lost,
    Removed,
}

/// Which score the high/low partition thresholds apply to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreMode {
    /// Combined score `cls * assoc`.
    Raw,
    /// Combined score after log stretching and batch min-max rescaling.
    Stretched,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssocConfig<T> {
    /// Detections with association score at or below this are discarded.
    pub tau_conf: T,
    /// High/low partition threshold.
    pub tau_track: T,
    /// Scores at or below this are ignored entirely.
    pub low_floor: T,
    /// Frames a lost track survives without a match.
    pub n_lost: u32,
    /// Minimum overlap for any association.
    pub iou_gate: T,
    /// Unclaimed detections overlapping a claimed one at least this much in
    /// frame k are duplicates and start no track.
    pub duplicate_iou: T,
    pub score_mode: ScoreMode,
    pub kalman: KalmanConfig<T>,
}

impl<T: Scalar> Default for AssocConfig<T> {
    fn default() -> Self {
        Self {
            tau_conf: T::of(0.4),
            tau_track: T::of(0.6),
            low_floor: T::of(0.1),
            n_lost: 30,
            iou_gate: T::of(0.3),
            duplicate_iou: T::of(0.7),
            score_mode: ScoreMode::Stretched,
            kalman: KalmanConfig::default(),
        }
    }
}

impl<T: Scalar> AssocConfig<T> {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: T| v > T::zero() && v < T::one();
        if ![self.tau_conf, self.tau_track, self.iou_gate].into_iter().all(unit) {
            return Err(Error::Config(
                "tracker.tau_conf, tracker.tau_track and tracker.iou_gate must lie in (0,1)".into(),
            ));
        }
        if !(self.duplicate_iou > T::zero() && self.duplicate_iou <= T::one()) {
            return Err(Error::Config(
                "tracker.duplicate_iou must lie in (0,1]".into(),
            ));
        }
        if !(self.low_floor >= T::zero() && self.low_floor < self.tau_track) {
            return Err(Error::Config("tracker.low_floor must be in [0, tau_track)".into()));
        }
        self.kalman.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Track<T> {
    pub id: u32,
    pub state: TrackState,
    pub kf: KalmanState<T>,
    /// Last matched detection box (frame of the last update).
    pub last_box: BBox<T>,
    pub score: T,
    pub frames_since_update: u32,
    pub age: u32,
    pub start_frame: u32,
}

impl<T: Scalar> Track<T> {
    /// Best estimate of the box at the most recent processed frame.
    pub fn current_box(&self) -> BBox<T> {
        if self.frames_since_update == 0 {
            self.last_box
        } else {
            self.kf.bbox()
        }
    }
}

#[derive(Debug, Clone)]
pub struct Tracker<T> {
    pub cfg: AssocConfig<T>,
    tracks: Vec<Track<T>>,
    removed: Vec<Track<T>>,
    next_id: u32,
    frames_seen: usize,
}

/// Matching state threaded through the cascade stages.
struct Cascade<'a, T> {
    pairs: &'a [PairedBox<T>],
    dets: &'a [PairedDetection<T>],
    gate: T,
    track_det: Vec<Option<usize>>,
    det_used: Vec<bool>,
}

impl<T: Scalar> Cascade<'_, T> {
    fn stage(&mut self, tracks: &[usize], dets: &[usize]) {
        let tracks: Vec<usize> = tracks
            .iter()
            .copied()
            .filter(|&t| self.track_det[t].is_none())
            .collect();
        let dets: Vec<usize> = dets.iter().copied().filter(|&d| !self.det_used[d]).collect();
        if tracks.is_empty() || dets.is_empty() {
            return;
        }
        let sim: Vec<Vec<T>> = tracks
            .iter()
            .map(|&t| dets.iter().map(|&d| iou3d(&self.pairs[t], &self.dets[d].boxes)).collect())
            .collect();
        for (r, c) in match_above(&sim, self.gate) {
            self.track_det[tracks[r]] = Some(dets[c]);
            self.det_used[dets[c]] = true;
        }
    }
}

impl<T: Scalar> Tracker<T> {
    pub fn new(cfg: AssocConfig<T>) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            tracks: Vec::new(),
            removed: Vec::new(),
            next_id: 1,
            frames_seen: 0,
        })
    }

    /// Live tracks (every state except removed).
    pub fn tracks(&self) -> &[Track<T>] {
        &self.tracks
    }

    pub fn removed(&self) -> &[Track<T>] {
        &self.removed
    }

    pub fn pool(&self, state: TrackState) -> Vec<&Track<T>> {
        if state == TrackState::Removed {
            return self.removed.iter().collect();
        }
        self.tracks.iter().filter(|t| t.state == state).collect()
    }

    /// Boxes of activated tracks, used to seed the next frame's proposals.
    pub fn prior_boxes(&self) -> Vec<BBox<T>> {
        self.tracks
            .iter()
            .filter(|t| t.state == TrackState::Activated)
            .map(|t| t.last_box)
            .collect()
    }

    fn indices(&self, state: TrackState) -> Vec<usize> {
        (0..self.tracks.len())
            .filter(|&i| self.tracks[i].state == state)
            .collect()
    }

    /// Partition scores: raw combined or stretched, per `score_mode`.
    pub fn partition_scores(&self, dets: &[PairedDetection<T>]) -> Vec<T> {
        let combined: Vec<T> = dets.iter().map(PairedDetection::combined_score).collect();
        match self.cfg.score_mode {
            ScoreMode::Raw => combined,
            ScoreMode::Stretched => stretch_batch(&combined),
        }
    }

    /// Associates one frame of detections and returns the identified boxes
    /// of tracks that are activated and updated at `frame`.
    pub fn step(&mut self, frame: u32, dets: &[PairedDetection<T>]) -> Result<Vec<ResultEntry<T>>> {
        let cfg = self.cfg;
        let first = self.frames_seen == 0;
        self.frames_seen += 1;

        let scores = self.partition_scores(dets);
        let mut high_pre = Vec::new();
        let mut high_new = Vec::new();
        let mut low = Vec::new();
        for (i, d) in dets.iter().enumerate() {
            if d.assoc_score <= cfg.tau_conf || !d.boxes.is_valid() {
                continue;
            }
            let s = scores[i];
            if s > cfg.tau_track {
                if d.from_prior {
                    high_pre.push(i);
                } else {
                    high_new.push(i);
                }
            } else if s > cfg.low_floor {
                low.push(i);
            }
        }
        let high_all: Vec<usize> = high_pre.iter().chain(&high_new).copied().collect();

        let predicted: Vec<(KalmanState<T>, BBox<T>)> =
            self.tracks.iter().map(|t| t.kf.predict(&cfg.kalman)).collect();
        let pairs: Vec<PairedBox<T>> = self
            .tracks
            .iter()
            .zip(&predicted)
            .map(|(t, (_, b))| PairedBox::new(t.current_box(), *b))
            .collect();

        let activated = self.indices(TrackState::Activated);
        let lost = self.indices(TrackState::Lost);
        let unactivated = self.indices(TrackState::Unactivated);

        let mut c = Cascade {
            pairs: &pairs,
            dets,
            gate: cfg.iou_gate,
            track_det: vec![None; self.tracks.len()],
            det_used: vec![false; dets.len()],
        };
        c.stage(&activated, &high_pre);
        c.stage(&activated, &high_new);
        c.stage(&lost, &high_all);
        c.stage(&activated, &low);
        c.stage(&unactivated, &high_all);

        // Duplicates of claimed detections do not seed new tracks.
        let claimed: Vec<BBox<T>> = c
            .det_used
            .iter()
            .enumerate()
            .filter(|(_, &u)| u)
            .map(|(i, _)| dets[i].boxes.cur)
            .collect();
        let mut fresh: Vec<usize> = Vec::new();
        for &d in &high_all {
            if c.det_used[d] {
                continue;
            }
            let cur = &dets[d].boxes.cur;
            let dup = claimed
                .iter()
                .chain(fresh.iter().map(|&f| &dets[f].boxes.cur))
                .any(|b| iou(b, cur) >= cfg.duplicate_iou);
            if !dup {
                fresh.push(d);
            }
        }
        let track_det = c.track_det;

        for (i, t) in self.tracks.iter_mut().enumerate() {
            let (pred, _) = predicted[i];
            t.age += 1;
            match track_det[i] {
                Some(d) => {
                    let det = &dets[d];
                    t.kf = pred.update(&det.boxes.cur, &cfg.kalman)?;
                    t.last_box = det.boxes.cur;
                    t.score = det.combined_score();
                    t.frames_since_update = 0;
                    t.state = TrackState::Activated;
                }
                None => {
                    t.kf = pred;
                    t.frames_since_update += 1;
                    t.state = match t.state {
                        TrackState::Activated => TrackState::Lost,
                        TrackState::Unactivated => TrackState::Removed,
                        TrackState::Lost if t.frames_since_update > cfg.n_lost => TrackState::Removed,
                        s => s,
                    };
                }
            }
        }

        let (gone, live): (Vec<_>, Vec<_>) = std::mem::take(&mut self.tracks)
            .into_iter()
            .partition(|t| t.state == TrackState::Removed);
        self.tracks = live;
        self.removed.extend(gone);

        for d in fresh {
            let det = &dets[d];
            let (p, q) = (det.boxes.prev, det.boxes.cur);
            let velocity = [q.cx - p.cx, q.cy - p.cy, q.w - p.w, q.h - p.h];
            self.tracks.push(Track {
                id: self.next_id,
                state: if first {
                    TrackState::Activated
                } else {
                    TrackState::Unactivated
                },
                kf: KalmanState::with_velocity(&q, velocity, &cfg.kalman),
                last_box: q,
                score: det.combined_score(),
                frames_since_update: 0,
                age: 0,
                start_frame: frame,
            });
            self.next_id += 1;
        }

        let mut out: Vec<ResultEntry<T>> = self
            .tracks
            .iter()
            .filter(|t| t.state == TrackState::Activated && t.frames_since_update == 0)
            .map(|t| ResultEntry {
                id: t.id,
                bbox: t.last_box,
                score: t.score,
            })
            .collect();
        out.sort_by_key(|e| e.id);
        Ok(out)
    }
}

/// Frames to track and the context the denoiser sees.
#[derive(Debug, Clone)]
pub struct SequenceInput<'a, T> {
    /// Strictly increasing frame indices.
    pub frames: Vec<u32>,
    pub space: SignalSpace<T>,
    /// Annotations available to an oracle head.
    pub scene: Option<&'a SequenceGt<T>>,
}

/// Per-frame generator, independent of how many frames were processed.
pub fn frame_rng(seed: u64, frame: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(frame as u64);
    rng
}

/// Tracks a whole sequence. The first frame runs in detection mode (both
/// slots of every pair refer to it); each later frame is paired with its
/// predecessor and seeded from the activated tracks.
pub fn track_sequence<T: Scalar, D: Denoiser<T> + ?Sized>(
    input: &SequenceInput<'_, T>,
    denoiser: &D,
    sampler: &SamplerConfig<T>,
    assoc: &AssocConfig<T>,
) -> Result<SequenceResult<T>> {
    if input.frames.is_empty() {
        return Err(Error::Range("sequence has no frames".into()));
    }
    if input.frames.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Range("frame indices must be strictly increasing".into()));
    }
    sampler.validate()?;
    let mut tracker = Tracker::new(*assoc)?;
    let mut out = SequenceResult::default();
    let mut prev = input.frames[0];
    for &k in &input.frames {
        let ctx = FrameContext::new(prev, k, input.space, input.scene)?;
        let mut rng = frame_rng(sampler.seed, k);
        let prior = tracker.prior_boxes();
        let dets = run_inference(&ctx, &prior, denoiser, sampler, &mut rng)?;
        let entries = tracker.step(k, &dets)?;
        log::debug!("frame {k}: {} detections, {} tracks out", dets.len(), entries.len());
        if !entries.is_empty() {
            out.frames.insert(k, entries);
        }
        prev = k;
    }
    Ok(out)
}
