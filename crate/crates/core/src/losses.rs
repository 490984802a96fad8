//! Set-prediction training losses over paired boxes.
//!
//! Predictions are matched one-to-one to real ground-truth pairs at minimum
//! cost; the loss sums a focal classification term over all predictions with
//! L1 and volumetric GIoU regression terms over matched pairs. Padding pairs
//! only fill the input population and are never regression targets.

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::denoiser::{Denoiser, FrameContext};
use crate::eval::hungarian;
use crate::geometry::{giou3d, BBox, PairedBox, PairedDetection};
use crate::num::Scalar;
use crate::schedule::{add_noise, consistency_apply, NoiseSchedule, PairedSignal, SignalSpace};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights<T> {
    pub lambda_cls: T,
    pub lambda_l1: T,
    pub lambda_giou3d: T,
}

impl<T: Scalar> Default for LossWeights<T> {
    fn default() -> Self {
        Self {
            lambda_cls: T::of(2.0),
            lambda_l1: T::of(5.0),
            lambda_giou3d: T::of(2.0),
        }
    }
}

impl<T: Scalar> LossWeights<T> {
    pub fn validate(&self) -> Result<()> {
        let pos = |v: T| v > T::zero() && v.is_finite();
        if pos(self.lambda_cls) && pos(self.lambda_l1) && pos(self.lambda_giou3d) {
            Ok(())
        } else {
            Err(Error::Config("loss weights must be positive".into()))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FocalParams<T> {
    pub alpha: T,
    pub gamma: T,
}

impl<T: Scalar> Default for FocalParams<T> {
    fn default() -> Self {
        Self {
            alpha: T::of(0.25),
            gamma: T::of(2.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GtPair<T> {
    /// `None` for padding.
    pub identity: Option<u32>,
    pub boxes: PairedBox<T>,
    pub is_padding: bool,
}

impl<T: Scalar> GtPair<T> {
    pub fn real(identity: u32, boxes: PairedBox<T>) -> Self {
        Self {
            identity: Some(identity),
            boxes,
            is_padding: false,
        }
    }
}

fn jitter<T: Scalar, R: Rng + ?Sized>(b: &BBox<T>, rng: &mut R) -> BBox<T> {
    let tenth = T::of(0.1);
    let nx: f64 = rng.sample(StandardNormal);
    let ny: f64 = rng.sample(StandardNormal);
    BBox {
        cx: b.cx + tenth * b.w * T::of(nx),
        cy: b.cy + tenth * b.h * T::of(ny),
        ..*b
    }
}

/// Grows `gt` to exactly `n_train` pairs. Padding jitters the centers of
/// randomly chosen real pairs by 10% of their size; with no real pairs it is
/// drawn uniformly over the image. Over-full inputs are subsampled.
pub fn pad_gt<T: Scalar, R: Rng + ?Sized>(
    gt: &[GtPair<T>],
    n_train: usize,
    space: &SignalSpace<T>,
    rng: &mut R,
) -> Vec<GtPair<T>> {
    if gt.len() > n_train {
        log::warn!("{} ground-truth pairs exceed n_train={n_train}; subsampling", gt.len());
        let mut keep = sample(rng, gt.len(), n_train).into_vec();
        keep.sort_unstable();
        return keep.into_iter().map(|i| gt[i]).collect();
    }
    let mut out = gt.to_vec();
    while out.len() < n_train {
        let boxes = if gt.is_empty() {
            let (iw, ih) = (space.image_w, space.image_h);
            let w = T::of(rng.random_range(0.02..0.2)) * iw;
            let h = T::of(rng.random_range(0.02..0.2)) * ih;
            let cx = T::of(rng.random_range(0.0..1.0)) * iw;
            let cy = T::of(rng.random_range(0.0..1.0)) * ih;
            PairedBox::still(BBox { cx, cy, w, h })
        } else {
            let src = &gt[rng.random_range(0..gt.len())].boxes;
            PairedBox::new(jitter(&src.prev, rng), jitter(&src.cur, rng))
        };
        out.push(GtPair {
            identity: None,
            boxes,
            is_padding: true,
        });
    }
    out
}

/// `(cx/W, cy/H, w/W, h/H)` for both slices.
fn unit_coords<T: Scalar>(p: &PairedBox<T>, space: &SignalSpace<T>) -> [T; 8] {
    let (w, h) = (space.image_w, space.image_h);
    let one = |b: &BBox<T>| [b.cx / w, b.cy / h, b.w / w, b.h / h];
    let (a, b) = (one(&p.prev), one(&p.cur));
    std::array::from_fn(|i| if i < 4 { a[i] } else { b[i - 4] })
}

/// Sum of absolute differences of normalized coordinates over both slices.
pub fn l1_distance<T: Scalar>(a: &PairedBox<T>, b: &PairedBox<T>, space: &SignalSpace<T>) -> T {
    let (x, y) = (unit_coords(a, space), unit_coords(b, space));
    (0..8).fold(T::zero(), |s, i| s + (x[i] - y[i]).abs())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    /// For each prediction, the index of its ground-truth pair.
    pub pred_to_gt: Vec<Option<usize>>,
}

impl Assignment {
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.pred_to_gt
            .iter()
            .enumerate()
            .filter_map(|(p, g)| g.map(|g| (p, g)))
    }
}

pub fn match_cost<T: Scalar>(
    pred: &PairedDetection<T>,
    gt: &GtPair<T>,
    w: &LossWeights<T>,
    space: &SignalSpace<T>,
) -> T {
    w.lambda_cls * (T::one() - pred.cls_score)
        + w.lambda_l1 * l1_distance(&pred.boxes, &gt.boxes, space)
        + w.lambda_giou3d * (T::one() - giou3d(&pred.boxes, &gt.boxes))
}

/// Optimal one-to-one matching of predictions to non-padding pairs.
pub fn match_predictions<T: Scalar>(
    preds: &[PairedDetection<T>],
    gt: &[GtPair<T>],
    w: &LossWeights<T>,
    space: &SignalSpace<T>,
) -> Assignment {
    let real: Vec<usize> = (0..gt.len()).filter(|&i| !gt[i].is_padding).collect();
    if real.is_empty() || preds.is_empty() {
        return Assignment {
            pred_to_gt: vec![None; preds.len()],
        };
    }
    let cost: Vec<Vec<T>> = preds
        .iter()
        .map(|p| real.iter().map(|&g| match_cost(p, &gt[g], w, space)).collect())
        .collect();
    Assignment {
        pred_to_gt: hungarian(&cost).into_iter().map(|j| j.map(|j| real[j])).collect(),
    }
}

pub fn focal_loss<T: Scalar>(p: T, is_positive: bool, params: &FocalParams<T>) -> T {
    let eps = T::of(1e-7);
    let p = p.max(eps).min(T::one() - eps);
    if is_positive {
        -params.alpha * (T::one() - p).powf(params.gamma) * p.ln()
    } else {
        -(T::one() - params.alpha) * p.powf(params.gamma) * (T::one() - p).ln()
    }
}

/// Unweighted term sums and the weighted total.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown<T> {
    pub focal: T,
    pub l1: T,
    pub giou3d: T,
    pub total: T,
    pub matched: usize,
}

impl<T: Scalar> LossBreakdown<T> {
    fn add(self, o: Self) -> Self {
        Self {
            focal: self.focal + o.focal,
            l1: self.l1 + o.l1,
            giou3d: self.giou3d + o.giou3d,
            total: self.total + o.total,
            matched: self.matched + o.matched,
        }
    }
}

pub fn total_loss<T: Scalar>(
    preds: &[PairedDetection<T>],
    gt: &[GtPair<T>],
    w: &LossWeights<T>,
    space: &SignalSpace<T>,
) -> LossBreakdown<T> {
    let assign = match_predictions(preds, gt, w, space);
    loss_for_assignment(preds, gt, &assign, w, space)
}

pub fn loss_for_assignment<T: Scalar>(
    preds: &[PairedDetection<T>],
    gt: &[GtPair<T>],
    assign: &Assignment,
    w: &LossWeights<T>,
    space: &SignalSpace<T>,
) -> LossBreakdown<T> {
    let fp = FocalParams::default();
    let mut out = LossBreakdown::<T>::default();
    for (i, p) in preds.iter().enumerate() {
        out.focal = out.focal + focal_loss(p.cls_score, assign.pred_to_gt[i].is_some(), &fp);
    }
    for (p, g) in assign.pairs() {
        out.l1 = out.l1 + l1_distance(&preds[p].boxes, &gt[g].boxes, space);
        out.giou3d = out.giou3d + (T::one() - giou3d(&preds[p].boxes, &gt[g].boxes));
        out.matched += 1;
    }
    out.total = w.lambda_cls * out.focal + w.lambda_l1 * out.l1 + w.lambda_giou3d * out.giou3d;
    out
}

/// Two-level consistency training loss for one sampled step `t_r`.
///
/// `x_s` is the encoded (padded) ground-truth signal. The sample at `t_r` is
/// `x_s + σ_r ε`; the sample one step noisier follows the same trajectory,
/// `x_s + σ_{r-1}/σ_r (x_r - x_s)`. Both are denoised at their own level and
/// scored against `gt`.
#[allow(clippy::too_many_arguments)]
pub fn consistency_training_loss<T: Scalar, D: Denoiser<T> + ?Sized>(
    ctx: &FrameContext<'_, T>,
    x_s: &PairedSignal<T>,
    gt: &[GtPair<T>],
    t_r: usize,
    eps: &PairedSignal<T>,
    denoiser: &D,
    w: &LossWeights<T>,
    sched: &NoiseSchedule<T>,
) -> Result<LossBreakdown<T>> {
    w.validate()?;
    if t_r == 0 || t_r >= sched.steps {
        return Err(Error::Range(format!(
            "t_r={t_r} not in [1, {}]",
            sched.steps - 1
        )));
    }
    let sigma_r = sched.sigma_at_step(t_r)?;
    let sigma_prev = sched.sigma_at_step(t_r - 1)?;
    let x_r = add_noise(x_s, sigma_r, eps)?;
    let ratio = sigma_prev / sigma_r;
    let x_prev = x_r.zip_with(x_s, |r, s| s + ratio * (r - s))?;

    let decode = |x: &PairedSignal<T>, sigma: T| -> Result<Vec<PairedDetection<T>>> {
        let raw = denoiser.predict(ctx, x, sigma)?;
        let x0 = consistency_apply(x, &raw.boxes, sigma, sched)?;
        Ok(x0
            .rows
            .iter()
            .enumerate()
            .map(|(i, row)| PairedDetection {
                boxes: ctx.space.decode_pair(row),
                cls_score: raw.cls_scores[i],
                assoc_score: raw.assoc_scores[i],
                class_id: 0,
                from_prior: false,
            })
            .collect())
    };
    let a = total_loss(&decode(&x_prev, sigma_prev)?, gt, w, &ctx.space);
    let b = total_loss(&decode(&x_r, sigma_r)?, gt, w, &ctx.space);
    Ok(a.add(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::{OracleConfig, OracleDenoiser};
    use crate::schedule::normalize_pairs;
    use crate::sequence::{GtEntry, SequenceGt};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn space() -> SignalSpace<f64> {
        SignalSpace::new(1440.0, 800.0, &NoiseSchedule::default()).unwrap()
    }

    fn b(cx: f64, cy: f64, w: f64, h: f64) -> BBox<f64> {
        BBox::new(cx, cy, w, h).unwrap()
    }

    fn five() -> Vec<GtPair<f64>> {
        (0..5)
            .map(|i| {
                let x = 150.0 + 250.0 * i as f64;
                GtPair::real(i + 1, PairedBox::new(b(x, 300.0, 60.0, 120.0), b(x + 4.0, 302.0, 60.0, 120.0)))
            })
            .collect()
    }

    fn perfect(gt: &[GtPair<f64>]) -> Vec<PairedDetection<f64>> {
        gt.iter().map(|g| PairedDetection::new(g.boxes, 1.0, 1.0)).collect()
    }

    #[test]
    fn padding_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let gt = five();
        assert_eq!(pad_gt(&gt, 5, &space(), &mut rng), gt);
        let padded = pad_gt(&gt, 500, &space(), &mut rng);
        assert_eq!(padded.len(), 500);
        assert_eq!(&padded[..5], &gt[..]);
        assert!(padded[5..].iter().all(|p| p.is_padding && p.identity.is_none()));
        let empty = pad_gt(&[], 500, &space(), &mut rng);
        assert_eq!(empty.len(), 500);
        assert!(empty.iter().all(|p| p.is_padding && p.boxes.is_valid()));
        let sub = pad_gt(&gt, 3, &space(), &mut rng);
        assert_eq!(sub.len(), 3);
    }

    #[test]
    fn padding_jitter_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let gt = vec![GtPair::real(1, PairedBox::still(b(700.0, 400.0, 100.0, 200.0)))];
        let padded = pad_gt(&gt, 20001, &space(), &mut rng);
        let dx: Vec<f64> = padded[1..].iter().map(|p| p.boxes.cur.cx - 700.0).collect();
        let dy: Vec<f64> = padded[1..].iter().map(|p| p.boxes.cur.cy - 400.0).collect();
        let sd = |v: &[f64]| (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt();
        assert!((sd(&dx) / 10.0 - 1.0).abs() < 0.05);
        assert!((sd(&dy) / 20.0 - 1.0).abs() < 0.05);
    }

    #[test]
    fn focal_examples() {
        let fp = FocalParams::default();
        assert!(focal_loss(1.0f64, true, &fp) < 1e-20);
        // 0.25 * 0.25 * ln 2 and 0.75 * 0.25 * ln 2.
        assert!((focal_loss(0.5f64, true, &fp) - 0.043_321_698_784_996_58).abs() < 1e-12);
        assert!((focal_loss(0.5f64, false, &fp) - 0.129_965_096_354_989_74).abs() < 1e-12);
        assert!(focal_loss(0.0f64, true, &fp).is_finite());
    }

    #[test]
    fn perfect_predictions_zero_box_terms() {
        let gt = five();
        let l = total_loss(&perfect(&gt), &gt, &LossWeights::default(), &space());
        assert_eq!(l.l1, 0.0);
        assert_eq!(l.giou3d, 0.0);
        assert!(l.focal < 1e-18);
        assert_eq!(l.matched, 5);
        let a = match_predictions(&perfect(&gt), &gt, &LossWeights::default(), &space());
        assert_eq!(a.pred_to_gt, (0..5).map(Some).collect::<Vec<_>>());
    }

    #[test]
    fn crossed_matching_is_optimal() {
        let w = LossWeights::default();
        let gt = vec![
            GtPair::real(1, PairedBox::still(b(100.0, 100.0, 50.0, 50.0))),
            GtPair::real(2, PairedBox::still(b(300.0, 100.0, 50.0, 50.0))),
        ];
        let preds = vec![
            PairedDetection::new(PairedBox::still(b(290.0, 100.0, 50.0, 50.0)), 0.8, 1.0),
            PairedDetection::new(PairedBox::still(b(110.0, 104.0, 50.0, 50.0)), 0.7, 1.0),
        ];
        let a = match_predictions(&preds, &gt, &w, &space());
        let cost = |p: usize, g: usize| match_cost(&preds[p], &gt[g], &w, &space());
        let straight = cost(0, 0) + cost(1, 1);
        let crossed = cost(0, 1) + cost(1, 0);
        let expect = if crossed < straight { vec![Some(1), Some(0)] } else { vec![Some(0), Some(1)] };
        assert_eq!(a.pred_to_gt, expect);
        assert_eq!(a.pred_to_gt, vec![Some(1), Some(0)]);
    }

    #[test]
    fn empty_gt_all_negative() {
        let preds = perfect(&five());
        let a = match_predictions(&preds, &[], &LossWeights::default(), &space());
        assert!(a.pred_to_gt.iter().all(Option::is_none));
        let l = total_loss(&preds, &[], &LossWeights::default(), &space());
        assert_eq!(l.matched, 0);
        assert!(l.focal > 0.0);
    }

    #[test]
    fn padding_never_matched() {
        let gt = five();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let padded = pad_gt(&gt, 50, &space(), &mut rng);
        let preds: Vec<_> = padded.iter().map(|g| PairedDetection::new(g.boxes, 0.5, 1.0)).collect();
        let a = match_predictions(&preds, &padded, &LossWeights::default(), &space());
        assert_eq!(a.pairs().count(), 5);
        assert!(a.pairs().all(|(_, g)| !padded[g].is_padding));
    }

    #[test]
    fn l1_linear_in_interpolation() {
        let gt = five();
        let target = gt[2].boxes;
        let start = PairedBox::new(b(600.0, 320.0, 70.0, 110.0), b(610.0, 330.0, 64.0, 100.0));
        let lerp = |a: f64, c: f64, s: f64| a + s * (c - a);
        let at = |s: f64| {
            let m = |x: &BBox<f64>, y: &BBox<f64>| {
                b(lerp(x.cx, y.cx, s), lerp(x.cy, y.cy, s), lerp(x.w, y.w, s), lerp(x.h, y.h, s))
            };
            let mut preds = perfect(&gt);
            preds[2].boxes = PairedBox::new(m(&start.prev, &target.prev), m(&start.cur, &target.cur));
            let a = Assignment {
                pred_to_gt: (0..5).map(Some).collect(),
            };
            loss_for_assignment(&preds, &gt, &a, &LossWeights::default(), &space()).l1
        };
        let l0 = at(0.0);
        let mut prev = l0;
        for i in 1..=10 {
            let s = i as f64 / 10.0;
            let v = at(s);
            assert!(v < prev || s == 1.0 && v == 0.0);
            assert!((v - (1.0 - s) * l0).abs() < 1e-12);
            prev = v;
        }
    }

    #[test]
    fn disjoint_pair_giou_term() {
        let gt = vec![GtPair::real(1, PairedBox::still(b(8.0, 2.0, 4.0, 4.0)))];
        let preds = vec![PairedDetection::new(PairedBox::still(b(2.0, 2.0, 4.0, 4.0)), 1.0, 1.0)];
        let l = total_loss(&preds, &gt, &LossWeights::default(), &space());
        assert!((l.giou3d - 1.2).abs() < 1e-12);
    }

    #[test]
    fn permutation_invariance() {
        let gt = five();
        let mut preds = perfect(&gt);
        for (i, p) in preds.iter_mut().enumerate() {
            p.boxes.cur.cx += 3.0 * i as f64;
            p.cls_score = 0.5 + 0.1 * i as f64;
        }
        let w = LossWeights::default();
        let base = total_loss(&preds, &gt, &w, &space()).total;
        let mut rp = preds.clone();
        rp.reverse();
        let mut rg = gt.clone();
        rg.rotate_left(2);
        assert!((total_loss(&rp, &gt, &w, &space()).total - base).abs() < 1e-12);
        assert!((total_loss(&preds, &rg, &w, &space()).total - base).abs() < 1e-12);
    }

    #[test]
    fn minimum_at_ground_truth() {
        let gt = five();
        let w = LossWeights::default();
        let f = |dx: f64| {
            let mut preds = perfect(&gt);
            preds[1].boxes.prev.cx += dx;
            let l = total_loss(&preds, &gt, &w, &space());
            w.lambda_l1 * l.l1 + w.lambda_giou3d * l.giou3d
        };
        let h = 1e-3;
        assert!(f(h) > f(0.0) && f(-h) > f(0.0));
        // Away from the minimum the central difference is finite and
        // agrees with the one-sided ones.
        let x = 5.0;
        let c = (f(x + h) - f(x - h)) / (2.0 * h);
        let r = (f(x + h) - f(x)) / h;
        assert!(c.is_finite() && (c - r).abs() < 1e-2 * c.abs().max(1.0));
    }

    fn scene_of(gt: &[GtPair<f64>]) -> SequenceGt<f64> {
        let mut s = SequenceGt::default();
        for g in gt {
            let id = g.identity.unwrap();
            s.frames.entry(1).or_default().push(GtEntry { id, bbox: g.boxes.prev, visible: true });
            s.frames.entry(2).or_default().push(GtEntry { id, bbox: g.boxes.cur, visible: true });
        }
        s
    }

    #[test]
    fn consistency_loss_perfect_denoiser() {
        let gt = five();
        let scene = scene_of(&gt);
        let ctx = FrameContext::new(1, 2, space(), Some(&scene)).unwrap();
        let sched = NoiseSchedule::default();
        let oracle = OracleDenoiser::new(OracleConfig::default(), sched).unwrap();
        let pairs: Vec<_> = gt.iter().map(|g| g.boxes).collect();
        let x_s = normalize_pairs(&pairs, &space());
        let eps = PairedSignal::zeros(x_s.len());
        let w = LossWeights::default();
        for t_r in 1..sched.steps {
            let l = consistency_training_loss(&ctx, &x_s, &gt, t_r, &eps, &oracle, &w, &sched).unwrap();
            assert!(l.l1.abs() < 1e-9, "t_r={t_r} l1={}", l.l1);
            assert!(l.giou3d.abs() < 1e-9);
            assert!(l.focal < 1e-15);
        }
        assert!(matches!(
            consistency_training_loss(&ctx, &x_s, &gt, 0, &eps, &oracle, &w, &sched),
            Err(Error::Range(_))
        ));
    }

    #[test]
    fn consistency_loss_permutation_invariant() {
        let gt = five();
        let scene = scene_of(&gt);
        let ctx = FrameContext::new(1, 2, space(), Some(&scene)).unwrap();
        let sched = NoiseSchedule::default();
        let oracle = OracleDenoiser::new(
            OracleConfig { center_noise: 5.0, ..Default::default() },
            sched,
        )
        .unwrap();
        let pairs: Vec<_> = gt.iter().map(|g| g.boxes).collect();
        let x_s = normalize_pairs(&pairs, &space());
        let eps = PairedSignal::zeros(5);
        let w = LossWeights::default();
        let a = consistency_training_loss(&ctx, &x_s, &gt, 20, &eps, &oracle, &w, &sched).unwrap();
        let mut rg = gt.clone();
        rg.reverse();
        let c = consistency_training_loss(&ctx, &x_s, &rg, 20, &eps, &oracle, &w, &sched).unwrap();
        assert!((a.total - c.total).abs() < 1e-9);
    }

    #[test]
    fn consistency_loss_shrinks_with_oracle_noise() {
        let gt = five();
        let scene = scene_of(&gt);
        let ctx = FrameContext::new(1, 2, space(), Some(&scene)).unwrap();
        let sched = NoiseSchedule::default();
        let pairs: Vec<_> = gt.iter().map(|g| g.boxes).collect();
        let x_s = normalize_pairs(&pairs, &space());
        let w = LossWeights::default();
        let mean_loss = |noise: f64| {
            let oracle = OracleDenoiser::new(
                OracleConfig { center_noise: noise, size_noise: noise / 100.0, seed: 4, ..Default::default() },
                sched,
            )
            .unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(12);
            let mut acc = 0.0;
            for _ in 0..100 {
                let eps = PairedSignal::new(
                    (0..5).map(|_| std::array::from_fn(|_| rng.sample::<f64, _>(StandardNormal))).collect(),
                );
                let l = consistency_training_loss(&ctx, &x_s, &gt, 30, &eps, &oracle, &w, &sched).unwrap();
                assert!(l.total.is_finite());
                acc += l.total;
            }
            acc / 100.0
        };
        let losses: Vec<f64> = [16.0, 8.0, 4.0, 0.0].iter().map(|&n| mean_loss(n)).collect();
        assert!(losses.windows(2).all(|p| p[1] < p[0]), "{losses:?}");
    }
}
