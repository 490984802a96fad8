//! The prediction-head contract and a ground-truth oracle implementing it.
//!
//! A [`Denoiser`] returns the free-form output `F` of the head; the sampler
//! composes it with the skip connection via
//! [`consistency_apply`](crate::schedule::consistency_apply). The
//! [`OracleDenoiser`] stands in for a trained head: it reads the scene's
//! annotations and solves for the `F` that lands each proposal on a
//! (perturbed) ground-truth pair.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::geometry::{iou3d, PairedBox};
use crate::num::Scalar;
use crate::schedule::{NoiseSchedule, PairedSignal, Signal, SignalSpace};
use crate::sequence::SequenceGt;
use crate::{Error, Result};

/// Conditioning for one frame pair.
#[derive(Debug, Clone, Copy)]
pub struct FrameContext<'a, T> {
    pub frame_prev: u32,
    pub frame_cur: u32,
    pub space: SignalSpace<T>,
    /// Annotations for oracle use; real denoisers ignore it.
    pub scene: Option<&'a SequenceGt<T>>,
}

impl<'a, T: Scalar> FrameContext<'a, T> {
    pub fn new(
        frame_prev: u32,
        frame_cur: u32,
        space: SignalSpace<T>,
        scene: Option<&'a SequenceGt<T>>,
    ) -> Result<Self> {
        if frame_cur < frame_prev {
            return Err(Error::Range(format!(
                "frame_cur {frame_cur} precedes frame_prev {frame_prev}"
            )));
        }
        Ok(Self {
            frame_prev,
            frame_cur,
            space,
            scene,
        })
    }

    pub fn delta(&self) -> u32 {
        self.frame_cur - self.frame_prev
    }
}

/// Head output for `n` proposals.
#[derive(Debug, Clone, PartialEq)]
pub struct RawPrediction<T> {
    pub boxes: PairedSignal<T>,
    pub cls_scores: Vec<T>,
    pub assoc_scores: Vec<T>,
}

impl<T: Scalar> RawPrediction<T> {
    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }
}

pub trait Denoiser<T: Scalar>: Sync {
    /// Raw head output for the noisy paired proposals at level `sigma`.
    /// Identical inputs must give identical outputs.
    fn predict(
        &self,
        ctx: &FrameContext<'_, T>,
        noisy: &PairedSignal<T>,
        sigma: T,
    ) -> Result<RawPrediction<T>>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleConfig<T> {
    /// Std-dev of the center perturbation, in pixels.
    pub center_noise: T,
    /// Std-dev of the relative size perturbation.
    pub size_noise: T,
    pub score_sharpness: T,
    pub false_positive_rate: T,
    pub seed: u64,
}

impl<T: Scalar> Default for OracleConfig<T> {
    fn default() -> Self {
        Self {
            center_noise: T::zero(),
            size_noise: T::zero(),
            score_sharpness: T::of(2.0),
            false_positive_rate: T::zero(),
            seed: 0,
        }
    }
}

impl<T: Scalar> OracleConfig<T> {
    pub fn validate(&self) -> Result<()> {
        let nonneg = |v: T| v >= T::zero() && v.is_finite();
        if !nonneg(self.center_noise) || !nonneg(self.size_noise) || !nonneg(self.score_sharpness) {
            return Err(Error::Config("oracle noise and sharpness must be >= 0".into()));
        }
        if !(self.false_positive_rate >= T::zero() && self.false_positive_rate <= T::one()) {
            return Err(Error::Config("oracle.false_positive_rate not in [0,1]".into()));
        }
        Ok(())
    }
}

/// Upper bound (exclusive) of the association score drawn for pairs whose
/// identity is not visible in both frames.
pub const CROSS_IDENTITY_SCORE_MAX: f64 = 0.2;

/// Ground-truth driven stand-in for a trained head.
#[derive(Debug, Clone)]
pub struct OracleDenoiser<T> {
    pub config: OracleConfig<T>,
    pub schedule: NoiseSchedule<T>,
    /// When set, `predict` rejects batches of any other size.
    pub proposal_count: Option<usize>,
}

#[derive(Debug, Clone, Copy)]
struct Candidate<T> {
    boxes: PairedBox<T>,
    both_visible: bool,
}

/// One oracle decision for a single proposal, before inversion of the skip
/// connection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleOutput<T> {
    pub target: [T; 8],
    pub cls_score: T,
    pub assoc_score: T,
    /// Identity the proposal snapped to, if any.
    pub identity: Option<u32>,
}

impl<T: Scalar> OracleDenoiser<T> {
    pub fn new(config: OracleConfig<T>, schedule: NoiseSchedule<T>) -> Result<Self> {
        config.validate()?;
        schedule.validate()?;
        Ok(Self {
            config,
            schedule,
            proposal_count: None,
        })
    }

    pub fn with_proposal_count(mut self, n: usize) -> Self {
        self.proposal_count = Some(n);
        self
    }

    /// Identities visible in at least one frame of the pair, sorted by id.
    /// A side missing from one frame is filled with the other side's box.
    fn candidates(&self, ctx: &FrameContext<'_, T>) -> Vec<(u32, Candidate<T>)> {
        let Some(scene) = ctx.scene else {
            return Vec::new();
        };
        let mut ids: Vec<u32> = scene
            .visible(ctx.frame_prev)
            .chain(scene.visible(ctx.frame_cur))
            .map(|e| e.id)
            .collect();
        ids.sort_unstable();
        ids.dedup();
        ids.into_iter()
            .filter_map(|id| {
                let prev = scene.find(ctx.frame_prev, id).filter(|e| e.visible);
                let cur = scene.find(ctx.frame_cur, id).filter(|e| e.visible);
                let (p, c) = match (prev, cur) {
                    (Some(p), Some(c)) => (p.bbox, c.bbox),
                    (Some(p), None) => (p.bbox, p.bbox),
                    (None, Some(c)) => (c.bbox, c.bbox),
                    (None, None) => return None,
                };
                Some((
                    id,
                    Candidate {
                        boxes: PairedBox::new(p, c),
                        both_visible: prev.is_some() && cur.is_some(),
                    },
                ))
            })
            .collect()
    }

    fn proposal_rng(&self, ctx: &FrameContext<'_, T>, sigma: T, row: &[T; 8]) -> ChaCha8Rng {
        let mut h = splitmix(self.config.seed ^ 0x6a09_e667_f3bc_c908);
        h = splitmix(h ^ ((ctx.frame_prev as u64) << 32 | ctx.frame_cur as u64));
        h = splitmix(h ^ sigma.as_f64().to_bits());
        for v in row {
            h = splitmix(h ^ v.as_f64().to_bits());
        }
        ChaCha8Rng::seed_from_u64(h)
    }

    fn perturb(&self, p: &PairedBox<T>, rng: &mut ChaCha8Rng) -> PairedBox<T> {
        let c = &self.config;
        let one_px = T::one();
        let mut jitter = |b: &crate::geometry::BBox<T>| {
            let n: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
            crate::geometry::BBox {
                cx: b.cx + c.center_noise * T::of(n[0]),
                cy: b.cy + c.center_noise * T::of(n[1]),
                w: (b.w * (T::one() + c.size_noise * T::of(n[2]))).max(one_px),
                h: (b.h * (T::one() + c.size_noise * T::of(n[3]))).max(one_px),
            }
        };
        let prev = jitter(&p.prev);
        let cur = jitter(&p.cur);
        PairedBox::new(prev, cur)
    }

    fn decide(
        &self,
        ctx: &FrameContext<'_, T>,
        candidates: &[(u32, Candidate<T>)],
        row: &[T; 8],
        sigma: T,
        view_scale: T,
    ) -> OracleOutput<T> {
        if candidates.is_empty() {
            return OracleOutput {
                target: *row,
                cls_score: T::zero(),
                assoc_score: T::zero(),
                identity: None,
            };
        }
        let mut rng = self.proposal_rng(ctx, sigma, row);
        let view: [T; 8] = row.map(|v| v * view_scale);
        let proposal = ctx.space.decode_pair(&view);

        let fp_draw: f64 = rng.random();
        if fp_draw < self.config.false_positive_rate.as_f64() {
            return OracleOutput {
                target: ctx.space.encode_pair(&proposal),
                cls_score: T::of(rng.random::<f64>()),
                assoc_score: T::of(rng.random::<f64>()),
                identity: None,
            };
        }

        // The input is read both through the network scaling and as the raw
        // state; a clean on-trajectory input is exact in the raw reading.
        let raw_reading = ctx.space.decode_pair(row);
        let overlap = |c: &PairedBox<T>| iou3d(&proposal, c).max(iou3d(&raw_reading, c));
        let mut best = 0;
        let mut best_iou = overlap(&candidates[0].1.boxes);
        for (i, (_, c)) in candidates.iter().enumerate().skip(1) {
            let v = overlap(&c.boxes);
            if v > best_iou {
                best = i;
                best_iou = v;
            }
        }
        let (id, cand) = candidates[best];
        let out = self.perturb(&cand.boxes, &mut rng);
        let quality = iou3d(&out, &cand.boxes);
        let cls = (-self.config.score_sharpness * (T::one() - quality)).exp();
        let cross: f64 = rng.random::<f64>() * CROSS_IDENTITY_SCORE_MAX;
        OracleOutput {
            target: ctx.space.encode_pair(&out),
            cls_score: cls,
            assoc_score: if cand.both_visible { cls } else { T::of(cross) },
            identity: Some(id),
        }
    }

    /// Per-proposal decisions, exposed for inspection in tests and audits.
    pub fn decisions(
        &self,
        ctx: &FrameContext<'_, T>,
        noisy: &PairedSignal<T>,
        sigma: T,
    ) -> Result<Vec<OracleOutput<T>>> {
        if let Some(n) = self.proposal_count {
            if noisy.len() != n {
                return Err(Error::Shape {
                    expected: n,
                    got: noisy.len(),
                });
            }
        }
        let view_scale = self.schedule.input_scale(sigma)?;
        let candidates = self.candidates(ctx);
        Ok(noisy
            .rows
            .iter()
            .map(|row| self.decide(ctx, &candidates, row, sigma, view_scale))
            .collect())
    }
}

impl<T: Scalar> Denoiser<T> for OracleDenoiser<T> {
    fn predict(
        &self,
        ctx: &FrameContext<'_, T>,
        noisy: &PairedSignal<T>,
        sigma: T,
    ) -> Result<RawPrediction<T>> {
        let decisions = self.decisions(ctx, noisy, sigma)?;
        let target = Signal::new(decisions.iter().map(|d| d.target).collect());
        let boxes = crate::schedule::solve_raw(noisy, &target, sigma, &self.schedule)?;
        Ok(RawPrediction {
            boxes,
            cls_scores: decisions.iter().map(|d| d.cls_score).collect(),
            assoc_scores: decisions.iter().map(|d| d.assoc_score).collect(),
        })
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
