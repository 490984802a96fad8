//! Few-step consistency sampling over paired proposals with box renewal.
//!
//! The sampler state holds noised proposals `x = x_s + σ·ε` (unscaled); the
//! denoiser sees them through its own input scaling. Each step evaluates the
//! head at `σ_t`, drops proposals whose combined score is below the renewal
//! threshold, moves survivors along `(x - x0) / σ_t` to `σ_next`, and refills
//! the batch with fresh Gaussian proposals at `σ_next`.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::denoiser::{Denoiser, FrameContext};
use crate::geometry::{nms_paired, BBox, PairedDetection};
use crate::num::Scalar;
use crate::schedule::{consistency_apply, NoiseSchedule, PairedSignal, Signal, SignalSpace};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplerConfig<T> {
    /// Proposal count `n_p`.
    pub n_p: usize,
    /// Sampling steps `n_ss`.
    pub n_ss: usize,
    /// Repeats of each prior box `n_rp`.
    pub n_rp: usize,
    /// Renewal threshold `B_th`; zero disables renewal.
    pub renewal_threshold: T,
    /// Paired NMS threshold `N_th`. Visible objects in crowded scenes can
    /// overlap above 0.5, while noisy duplicates of one object stay above
    /// 0.6.
    pub nms_threshold: T,
    pub schedule: NoiseSchedule<T>,
    pub seed: u64,
}

impl<T: Scalar> Default for SamplerConfig<T> {
    fn default() -> Self {
        Self {
            n_p: 2000,
            n_ss: 2,
            n_rp: 8,
            renewal_threshold: T::of(0.6),
            nms_threshold: T::of(0.6),
            schedule: NoiseSchedule::default(),
            seed: 0,
        }
    }
}

impl<T: Scalar> SamplerConfig<T> {
    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        if self.n_p == 0 {
            return Err(Error::Config("sampler.n_p must be >= 1".into()));
        }
        if self.n_ss == 0 || self.n_ss > self.schedule.steps {
            return Err(Error::Config(format!(
                "sampler.n_ss={} not in [1, {}]",
                self.n_ss, self.schedule.steps
            )));
        }
        if !(self.renewal_threshold >= T::zero() && self.renewal_threshold < T::one()) {
            return Err(Error::Config("sampler.b_th not in [0,1)".into()));
        }
        if !(self.nms_threshold > T::zero() && self.nms_threshold < T::one()) {
            return Err(Error::Config("sampler.n_th not in (0,1)".into()));
        }
        Ok(())
    }

    /// Step indices visited by the sampler: `n_ss` evaluation points
    /// `i * T / n_ss` followed by the landing point `T - 1` (`σ_min`).
    pub fn step_grid(&self) -> Vec<T> {
        let steps = T::of(self.schedule.steps as f64);
        let last = self.schedule.last_step();
        let n = T::of(self.n_ss as f64);
        let mut grid: Vec<T> = (0..self.n_ss)
            .map(|i| (T::of(i as f64) * steps / n).min(last))
            .collect();
        grid.push(last);
        grid
    }
}

/// Current proposal batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Proposals<T> {
    pub state: PairedSignal<T>,
    /// Slot was seeded from a prior-frame box (and survived every renewal).
    pub from_prior: Vec<bool>,
}

impl<T: Scalar> Proposals<T> {
    pub fn len(&self) -> usize {
        self.state.len()
    }

    pub fn is_empty(&self) -> bool {
        self.state.is_empty()
    }

    pub fn prior_count(&self) -> usize {
        self.from_prior.iter().filter(|&&p| p).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProposalInit<T> {
    pub proposals: Proposals<T>,
    /// Prior boxes dropped because `n_rp * |prior|` exceeded `n_p`.
    pub truncated: usize,
}

fn gaussian_row<T: Scalar, R: Rng + ?Sized>(rng: &mut R, sigma: T) -> [T; 8] {
    std::array::from_fn(|_| T::of(rng.sample::<f64, _>(StandardNormal)) * sigma)
}

/// Seeds `n_p` proposals: each prior box repeated `n_rp` times in both frame
/// slots and noised at `σ_0`, then pure Gaussian draws scaled by `σ_0`.
pub fn init_proposals<T: Scalar, R: Rng + ?Sized>(
    prior: &[BBox<T>],
    space: &SignalSpace<T>,
    cfg: &SamplerConfig<T>,
    rng: &mut R,
) -> Result<ProposalInit<T>> {
    let sigma0 = cfg.schedule.sigma_at(T::zero())?;
    let usable = cfg.n_p.checked_div(cfg.n_rp).map_or(0, |cap| prior.len().min(cap));
    let truncated = if cfg.n_rp == 0 { 0 } else { prior.len() - usable };
    if truncated > 0 {
        log::warn!(
            "{} prior boxes x {} repeats exceed {} proposals; keeping the first {usable}",
            prior.len(),
            cfg.n_rp,
            cfg.n_p
        );
    }
    let mut rows = Vec::with_capacity(cfg.n_p);
    let mut from_prior = Vec::with_capacity(cfg.n_p);
    for b in &prior[..usable] {
        let enc = space.encode(b);
        for _ in 0..cfg.n_rp {
            let eps = gaussian_row(rng, sigma0);
            rows.push(std::array::from_fn(|j| enc[j % 4] + eps[j]));
            from_prior.push(true);
        }
    }
    while rows.len() < cfg.n_p {
        rows.push(gaussian_row(rng, sigma0));
        from_prior.push(false);
    }
    Ok(ProposalInit {
        proposals: Proposals {
            state: Signal::new(rows),
            from_prior,
        },
        truncated,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput<T> {
    pub next: Proposals<T>,
    /// Denoised detections for every input proposal, in slot order.
    pub predictions: Vec<PairedDetection<T>>,
    /// Proposals kept by renewal (`n_r`).
    pub survivors: usize,
}

/// Moves `x` along the denoising direction from `sigma` to `sigma_next`.
pub fn euler_move<T: Scalar>(x: &[T; 8], x0: &[T; 8], sigma: T, sigma_next: T) -> [T; 8] {
    std::array::from_fn(|j| {
        let grad = (x[j] - x0[j]) / sigma;
        x[j] + grad * (sigma_next - sigma)
    })
}

/// One denoise / renew / move / replenish step from step `t` to `t_next`.
pub fn sample_step<T: Scalar, D: Denoiser<T> + ?Sized, R: Rng + ?Sized>(
    ctx: &FrameContext<'_, T>,
    proposals: &Proposals<T>,
    t: T,
    t_next: T,
    denoiser: &D,
    cfg: &SamplerConfig<T>,
    rng: &mut R,
) -> Result<StepOutput<T>> {
    if t_next < t {
        return Err(Error::Range(format!("t_next {t_next} precedes t {t}")));
    }
    if proposals.from_prior.len() != proposals.len() {
        return Err(Error::Shape {
            expected: proposals.len(),
            got: proposals.from_prior.len(),
        });
    }
    let sched = &cfg.schedule;
    let sigma = sched.sigma_at(t)?;
    let sigma_next = sched.sigma_at(t_next)?;

    let raw = denoiser.predict(ctx, &proposals.state, sigma)?;
    if raw.len() != proposals.len()
        || raw.cls_scores.len() != proposals.len()
        || raw.assoc_scores.len() != proposals.len()
    {
        return Err(Error::Shape {
            expected: proposals.len(),
            got: raw.len(),
        });
    }
    let x0 = consistency_apply(&proposals.state, &raw.boxes, sigma, sched)?;

    let predictions: Vec<PairedDetection<T>> = x0
        .rows
        .iter()
        .enumerate()
        .map(|(i, row)| PairedDetection {
            boxes: ctx.space.decode_pair(row),
            cls_score: raw.cls_scores[i],
            assoc_score: raw.assoc_scores[i],
            class_id: 0,
            from_prior: proposals.from_prior[i],
        })
        .collect();

    let mut rows = Vec::with_capacity(cfg.n_p);
    let mut from_prior = Vec::with_capacity(cfg.n_p);
    for (i, det) in predictions.iter().enumerate() {
        if det.combined_score() >= cfg.renewal_threshold {
            rows.push(euler_move(&proposals.state.rows[i], &x0.rows[i], sigma, sigma_next));
            from_prior.push(proposals.from_prior[i]);
        }
    }
    let survivors = rows.len();
    while rows.len() < cfg.n_p {
        rows.push(gaussian_row(rng, sigma_next));
        from_prior.push(false);
    }
    Ok(StepOutput {
        next: Proposals {
            state: Signal::new(rows),
            from_prior,
        },
        predictions,
        survivors,
    })
}

/// Full inference for one frame pair: `n_ss` steps landing on `σ_min`,
/// then paired NMS over the last step's predictions. Predictions with a zero
/// combined score carry no object and are dropped before NMS.
pub fn run_inference<T: Scalar, D: Denoiser<T> + ?Sized, R: Rng + ?Sized>(
    ctx: &FrameContext<'_, T>,
    prior: &[BBox<T>],
    denoiser: &D,
    cfg: &SamplerConfig<T>,
    rng: &mut R,
) -> Result<Vec<PairedDetection<T>>> {
    cfg.validate()?;
    let mut proposals = init_proposals(prior, &ctx.space, cfg, rng)?.proposals;
    let grid = cfg.step_grid();
    let mut harvest = Vec::new();
    for w in grid.windows(2) {
        let out = sample_step(ctx, &proposals, w[0], w[1], denoiser, cfg, rng)?;
        proposals = out.next;
        harvest = out.predictions;
    }
    harvest.retain(|d| d.combined_score() > T::zero());
    nms_paired(&harvest, cfg.nms_threshold)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::{OracleConfig, OracleDenoiser, RawPrediction};
    use crate::geometry::{iou3d, PairedBox};
    use crate::schedule::normalize_pairs;
    use crate::sequence::{GtEntry, SequenceGt};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn space() -> SignalSpace<f64> {
        SignalSpace::new(1440.0, 800.0, &NoiseSchedule::default()).unwrap()
    }

    fn three_object_scene() -> SequenceGt<f64> {
        let mut s = SequenceGt::default();
        let objs = [(1, 300.0, 250.0), (2, 720.0, 420.0), (3, 1100.0, 560.0)];
        for k in 1..=2u32 {
            let dx = (k - 1) as f64 * 3.0;
            s.frames.insert(
                k,
                objs.iter()
                    .map(|&(id, cx, cy)| GtEntry {
                        id,
                        bbox: BBox::new(cx + dx, cy, 110.0, 220.0).unwrap(),
                        visible: true,
                    })
                    .collect(),
            );
        }
        s
    }

    fn oracle() -> OracleDenoiser<f64> {
        OracleDenoiser::new(OracleConfig::default(), NoiseSchedule::default()).unwrap()
    }

    #[test]
    fn init_counts() {
        let cfg = SamplerConfig::<f64>::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let prior: Vec<_> = (0..10)
            .map(|i| BBox::new(100.0 + 50.0 * i as f64, 300.0, 40.0, 80.0).unwrap())
            .collect();
        let init = init_proposals(&prior, &space(), &cfg, &mut rng).unwrap();
        assert_eq!(init.proposals.len(), 2000);
        assert_eq!(init.proposals.prior_count(), 80);
        assert_eq!(init.truncated, 0);
        assert!(init.proposals.from_prior[..80].iter().all(|&p| p));

        let empty = init_proposals(&[], &space(), &cfg, &mut rng).unwrap();
        assert_eq!(empty.proposals.prior_count(), 0);
        // Pure draws at sigma_max: sample std close to 80.
        let all: Vec<f64> = empty.proposals.state.rows.iter().flatten().copied().collect();
        let sd = (all.iter().map(|v| v * v).sum::<f64>() / all.len() as f64).sqrt();
        assert!((sd / 80.0 - 1.0).abs() < 0.05, "{sd}");
    }

    #[test]
    fn init_truncates_prior_in_order() {
        let cfg = SamplerConfig::<f64> {
            n_p: 20,
            ..Default::default()
        };
        let prior: Vec<_> = (0..4)
            .map(|i| BBox::new(100.0 + 50.0 * i as f64, 300.0, 40.0, 80.0).unwrap())
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let init = init_proposals(&prior, &space(), &cfg, &mut rng).unwrap();
        assert_eq!(init.truncated, 2);
        assert_eq!(init.proposals.prior_count(), 16);
        assert_eq!(init.proposals.len(), 20);
    }

    #[test]
    fn init_deterministic() {
        let cfg = SamplerConfig::<f64>::default();
        let prior = [BBox::new(100.0, 300.0, 40.0, 80.0).unwrap()];
        let a = init_proposals(&prior, &space(), &cfg, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = init_proposals(&prior, &space(), &cfg, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn grid_lands_on_sigma_min() {
        for n_ss in [1, 2, 4, 6, 40] {
            let cfg = SamplerConfig::<f64> {
                n_ss,
                ..Default::default()
            };
            let g = cfg.step_grid();
            assert_eq!(g.len(), n_ss + 1);
            assert_eq!(g[0], 0.0);
            assert_eq!(*g.last().unwrap(), 39.0);
            assert!(g.windows(2).all(|w| w[0] <= w[1]));
        }
    }

    #[test]
    fn step_at_sigma_min_keeps_gt_proposals() {
        let sc = three_object_scene();
        let ctx = FrameContext::new(1, 2, space(), Some(&sc)).unwrap();
        let pairs: Vec<PairedBox<f64>> = (1..=3)
            .map(|id| PairedBox::new(sc.find(1, id).unwrap().bbox, sc.find(2, id).unwrap().bbox))
            .collect();
        let state = normalize_pairs(&pairs, &space());
        let proposals = Proposals {
            state,
            from_prior: vec![false; 3],
        };
        let cfg = SamplerConfig::<f64> {
            n_p: 3,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = sample_step(&ctx, &proposals, 39.0, 39.0, &oracle(), &cfg, &mut rng).unwrap();
        for (p, g) in out.predictions.iter().zip(&pairs) {
            assert!(iou3d(&p.boxes, g) > 1.0 - 1e-12);
        }
        // Zero step size: survivors are unchanged.
        assert_eq!(out.survivors, 3);
        assert_eq!(out.next.state, proposals.state);
    }

    struct FlatScores(f64);

    impl Denoiser<f64> for FlatScores {
        fn predict(
            &self,
            _ctx: &FrameContext<'_, f64>,
            noisy: &PairedSignal<f64>,
            _sigma: f64,
        ) -> Result<RawPrediction<f64>> {
            Ok(RawPrediction {
                boxes: PairedSignal::zeros(noisy.len()),
                cls_scores: vec![self.0; noisy.len()],
                assoc_scores: vec![1.0; noisy.len()],
            })
        }
    }

    #[test]
    fn renewal_disabled_and_full_replenish() {
        let ctx = FrameContext::new(1, 2, space(), None).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut cfg = SamplerConfig::<f64> {
            n_p: 50,
            renewal_threshold: 0.0,
            ..Default::default()
        };
        let init = init_proposals(&[], &space(), &cfg, &mut rng).unwrap().proposals;
        let out = sample_step(&ctx, &init, 0.0, 20.0, &FlatScores(0.1), &cfg, &mut rng).unwrap();
        assert_eq!(out.survivors, 50);
        assert_eq!(out.next.len(), 50);

        cfg.renewal_threshold = 0.6;
        let out = sample_step(&ctx, &init, 0.0, 20.0, &FlatScores(0.1), &cfg, &mut rng).unwrap();
        assert_eq!(out.survivors, 0);
        assert_eq!(out.next.len(), 50);
    }

    #[test]
    fn euler_zero_step_and_full_step() {
        let x: [f64; 8] = [1.0, -2.0, 3.0, 0.5, 0.0, 7.0, -1.0, 2.0];
        let x0 = [0.5f64; 8];
        assert_eq!(euler_move(&x, &x0, 2.0, 2.0), x);
        // Moving all the way to sigma = 0 lands on x0.
        let moved = euler_move(&x, &x0, 2.0, 0.0);
        for v in moved {
            assert!((v - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn one_step_three_objects() {
        let sc = three_object_scene();
        let ctx = FrameContext::new(1, 2, space(), Some(&sc)).unwrap();
        let cfg = SamplerConfig::<f64> {
            n_ss: 1,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let dets = run_inference(&ctx, &[], &oracle(), &cfg, &mut rng).unwrap();
        assert_eq!(dets.len(), 3);
        for d in &dets {
            assert_eq!(d.cls_score, 1.0);
            assert_eq!(d.assoc_score, 1.0);
        }
    }

    #[test]
    fn few_step_counts_agree() {
        let sc = three_object_scene();
        let ctx = FrameContext::new(1, 2, space(), Some(&sc)).unwrap();
        let run = |n_ss| {
            let cfg = SamplerConfig::<f64> {
                n_ss,
                ..Default::default()
            };
            let mut rng = ChaCha8Rng::seed_from_u64(4);
            let mut d = run_inference(&ctx, &[], &oracle(), &cfg, &mut rng).unwrap();
            d.sort_by(|a, b| a.boxes.cur.cx.partial_cmp(&b.boxes.cur.cx).unwrap());
            d
        };
        let (a, b) = (run(2), run(6));
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert!((x.boxes.cur.cx - y.boxes.cur.cx).abs() < 1e-6);
            assert!((x.boxes.prev.w - y.boxes.prev.w).abs() < 1e-6);
        }
    }

    #[test]
    fn empty_scene_no_detections() {
        let sc = SequenceGt::default();
        let ctx = FrameContext::new(1, 2, space(), Some(&sc)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let dets =
            run_inference(&ctx, &[], &oracle(), &SamplerConfig::default(), &mut rng).unwrap();
        assert!(dets.is_empty());
    }

    #[test]
    fn proposal_count_conserved() {
        let sc = three_object_scene();
        let ctx = FrameContext::new(1, 2, space(), Some(&sc)).unwrap();
        let cfg = SamplerConfig::<f64> {
            n_p: 300,
            n_ss: 4,
            ..Default::default()
        };
        let noisy = OracleDenoiser::new(
            OracleConfig {
                center_noise: 10.0,
                size_noise: 0.1,
                ..OracleConfig::default()
            },
            NoiseSchedule::default(),
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut p = init_proposals(&[], &space(), &cfg, &mut rng).unwrap().proposals;
        for w in cfg.step_grid().windows(2) {
            let out = sample_step(&ctx, &p, w[0], w[1], &noisy, &cfg, &mut rng).unwrap();
            assert_eq!(out.next.len(), 300);
            assert_eq!(out.next.from_prior.len(), 300);
            p = out.next;
        }
    }
}
