//! Deterministic synthetic scenes: moving boxes on a canvas with scripted
//! occlusions, births and deaths.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geometry::BBox;
use crate::num::Scalar;
use crate::sequence::{GtEntry, SequenceGt};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Motion<T> {
    Linear,
    /// Lateral oscillation added to the base velocity.
    Sinusoidal { amplitude: T, period: T },
}

/// `occluded` is hidden for `duration` frames starting at `start_frame`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OcclusionEvent {
    pub occluder: u32,
    pub occluded: u32,
    pub start_frame: u32,
    pub duration: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Lifespan {
    pub id: u32,
    pub first_frame: u32,
    pub last_frame: u32,
}

/// Explicit initial state; overrides the random draw for its id.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectSpec<T> {
    pub id: u32,
    pub center: (T, T),
    pub velocity: (T, T),
    pub size: (T, T),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig<T> {
    pub image_w: T,
    pub image_h: T,
    /// Objects get ids `1..=n_objects`.
    pub n_objects: u32,
    pub n_frames: u32,
    /// Speed magnitude bounds, px/frame.
    pub speed_range: (T, T),
    /// Box width bounds, px.
    pub size_range: (T, T),
    /// Height-to-width ratio bounds.
    pub aspect_range: (T, T),
    pub occlusions: Vec<OcclusionEvent>,
    pub lifespans: Vec<Lifespan>,
    pub objects: Vec<ObjectSpec<T>>,
    pub motion: Motion<T>,
    pub seed: u64,
}

impl<T: Scalar> Default for SimConfig<T> {
    fn default() -> Self {
        Self {
            image_w: T::of(1440.0),
            image_h: T::of(800.0),
            n_objects: 8,
            n_frames: 100,
            speed_range: (T::of(1.0), T::of(4.0)),
            size_range: (T::of(40.0), T::of(120.0)),
            aspect_range: (T::of(1.5), T::of(2.5)),
            occlusions: Vec::new(),
            lifespans: Vec::new(),
            objects: Vec::new(),
            motion: Motion::Linear,
            seed: 0,
        }
    }
}

impl<T: Scalar> SimConfig<T> {
    fn lifespan(&self, id: u32) -> (u32, u32) {
        self.lifespans
            .iter()
            .find(|l| l.id == id)
            .map_or((1, self.n_frames), |l| (l.first_frame, l.last_frame))
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.n_frames < 2 {
            return err(format!("sim.n_frames={} must be >= 2", self.n_frames));
        }
        if !(self.image_w > T::zero() && self.image_h > T::zero()) {
            return err("sim canvas must be positive".into());
        }
        let range_ok = |(lo, hi): (T, T)| lo.is_finite() && hi.is_finite() && lo >= T::zero() && lo <= hi;
        if !range_ok(self.speed_range) || !range_ok(self.size_range) || !range_ok(self.aspect_range) {
            return err("sim ranges must satisfy 0 <= lo <= hi".into());
        }
        if !(self.size_range.0 > T::zero() && self.aspect_range.0 > T::zero()) {
            return err("sim sizes must be positive".into());
        }
        if self.size_range.1 >= self.image_w || self.size_range.1 * self.aspect_range.1 >= self.image_h {
            return err("sim boxes must fit inside the canvas".into());
        }
        if let Motion::Sinusoidal { amplitude, period } = self.motion {
            if !(amplitude >= T::zero() && period > T::zero()) {
                return err("sim sinusoid needs amplitude >= 0 and period > 0".into());
            }
        }
        let valid_id = |id: u32| id >= 1 && id <= self.n_objects;
        for (i, l) in self.lifespans.iter().enumerate() {
            if !valid_id(l.id) {
                return err(format!("lifespan for unknown object {}", l.id));
            }
            if l.first_frame < 1 || l.first_frame > l.last_frame || l.last_frame > self.n_frames {
                return err(format!(
                    "lifespan of object {} ({}..{}) outside 1..{}",
                    l.id, l.first_frame, l.last_frame, self.n_frames
                ));
            }
            if self.lifespans[..i].iter().any(|o| o.id == l.id) {
                return err(format!("conflicting lifespans for object {}", l.id));
            }
        }
        for o in &self.objects {
            if !valid_id(o.id) {
                return err(format!("object spec for unknown object {}", o.id));
            }
            let b = BBox::new(o.center.0, o.center.1, o.size.0, o.size.1)?;
            if !inside(&b, self.image_w, self.image_h) {
                return err(format!("object {} starts outside the canvas", o.id));
            }
        }
        for e in &self.occlusions {
            if !valid_id(e.occluder) || !valid_id(e.occluded) || e.occluder == e.occluded {
                return err(format!("occlusion {}→{} names invalid objects", e.occluder, e.occluded));
            }
            if e.duration == 0 {
                return err("occlusion duration must be >= 1".into());
            }
            let end = e.start_frame + e.duration - 1;
            for id in [e.occluder, e.occluded] {
                let (a, b) = self.lifespan(id);
                if e.start_frame < a || end > b {
                    return err(format!(
                        "occlusion window {}..{} outside lifespan {a}..{b} of object {id}",
                        e.start_frame, end
                    ));
                }
            }
        }
        Ok(())
    }
}

fn inside<T: Scalar>(b: &BBox<T>, w: T, h: T) -> bool {
    let [x1, y1, x2, y2] = b.corners();
    x1 >= T::zero() && y1 >= T::zero() && x2 <= w && y2 <= h
}

/// Mirrors `c` back into `[lo, hi]`; returns the new value and whether the
/// direction flipped.
fn reflect<T: Scalar>(mut c: T, lo: T, hi: T) -> (T, bool) {
    let mut flipped = false;
    // Several bounces are possible only for speeds above the free span.
    for _ in 0..64 {
        if c < lo {
            c = lo + lo - c;
            flipped = !flipped;
        } else if c > hi {
            c = hi + hi - c;
            flipped = !flipped;
        } else {
            break;
        }
    }
    (c.max(lo).min(hi), flipped)
}

struct Body<T> {
    cx: T,
    cy: T,
    vx: T,
    vy: T,
    w: T,
    h: T,
}

pub fn simulate<T: Scalar>(cfg: &SimConfig<T>) -> Result<SequenceGt<T>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let two = T::of(2.0);
    let tau = T::of(std::f64::consts::TAU);
    let mut gt = SequenceGt::default();

    for id in 1..=cfg.n_objects {
        // Draws happen for every id so explicit specs do not shift others.
        let w = T::of(rng.random_range(cfg.size_range.0.as_f64()..=cfg.size_range.1.as_f64()));
        let aspect = T::of(rng.random_range(cfg.aspect_range.0.as_f64()..=cfg.aspect_range.1.as_f64()));
        let h = w * aspect;
        let cx = T::of(rng.random_range(0.0..=1.0)) * (cfg.image_w - w) + w / two;
        let cy = T::of(rng.random_range(0.0..=1.0)) * (cfg.image_h - h) + h / two;
        let speed = T::of(rng.random_range(cfg.speed_range.0.as_f64()..=cfg.speed_range.1.as_f64()));
        let angle = T::of(rng.random_range(0.0..std::f64::consts::TAU));
        let mut body = match cfg.objects.iter().find(|o| o.id == id) {
            Some(o) => Body {
                cx: o.center.0,
                cy: o.center.1,
                vx: o.velocity.0,
                vy: o.velocity.1,
                w: o.size.0,
                h: o.size.1,
            },
            None => Body {
                cx,
                cy,
                vx: speed * angle.cos(),
                vy: speed * angle.sin(),
                w,
                h,
            },
        };

        let (first, last) = cfg.lifespan(id);
        let hidden = |k: u32| {
            cfg.occlusions
                .iter()
                .any(|e| e.occluded == id && k >= e.start_frame && k < e.start_frame + e.duration)
        };
        for k in first..=last {
            if k > first {
                let (mut dx, mut dy) = (body.vx, body.vy);
                if let Motion::Sinusoidal { amplitude, period } = cfg.motion {
                    let speed = (body.vx * body.vx + body.vy * body.vy).sqrt();
                    if speed > T::zero() {
                        let omega = tau / period;
                        let lateral = amplitude * omega * (omega * T::of((k - first) as f64)).cos();
                        dx = dx - body.vy / speed * lateral;
                        dy = dy + body.vx / speed * lateral;
                    }
                }
                let (hw, hh) = (body.w / two, body.h / two);
                let (nx, fx) = reflect(body.cx + dx, hw, cfg.image_w - hw);
                let (ny, fy) = reflect(body.cy + dy, hh, cfg.image_h - hh);
                body.cx = nx;
                body.cy = ny;
                if fx {
                    body.vx = -body.vx;
                }
                if fy {
                    body.vy = -body.vy;
                }
            }
            gt.frames.entry(k).or_default().push(GtEntry {
                id,
                bbox: BBox::new(body.cx, body.cy, body.w, body.h)?,
                visible: !hidden(k),
            });
        }
    }
    for k in 1..=cfg.n_frames {
        gt.frames.entry(k).or_default();
    }
    Ok(gt)
}
