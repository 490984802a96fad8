//! Noise schedule, consistency-function coefficients and box corruption.
//!
//! Signals live in a normalized space: a box `(cx, cy, w, h)` divided by the
//! image size lands in `[0, 1]`, which is mapped affinely to `[-s, s]` with
//! `s = 2 * sigma_data` (see [`SignalSpace`]).

use crate::geometry::{BBox, PairedBox};
use crate::num::Scalar;
use crate::{Error, Result};

/// Karras-style noise schedule over `steps` discrete levels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSchedule<T> {
    /// Number of discrete levels `T`; step `0` is `sigma_max`, step `T-1` is `sigma_min`.
    pub steps: usize,
    pub sigma_min: T,
    pub sigma_max: T,
    pub rho: T,
    pub sigma_data: T,
    /// Apply the extra `1/2` factor when scaling the noised signal by `c_in`.
    pub halve_input: bool,
}

impl<T: Scalar> Default for NoiseSchedule<T> {
    fn default() -> Self {
        Self {
            steps: 40,
            sigma_min: T::of(0.002),
            sigma_max: T::of(80.0),
            rho: T::of(7.0),
            sigma_data: T::of(0.5),
            halve_input: true,
        }
    }
}

/// Scaling factors of the consistency parameterization at one noise level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coefficients<T> {
    pub c_in: T,
    pub c_skip: T,
    pub c_out: T,
}

impl<T: Scalar> NoiseSchedule<T> {
    pub fn validate(&self) -> Result<()> {
        if self.steps < 2 {
            return Err(Error::Config(format!("schedule.steps={} < 2", self.steps)));
        }
        if !(self.sigma_min > T::zero() && self.sigma_min < self.sigma_max) {
            return Err(Error::Config(format!(
                "need 0 < sigma_min < sigma_max, got {} / {}",
                self.sigma_min, self.sigma_max
            )));
        }
        if !(self.rho > T::zero()) || !(self.sigma_data > T::zero()) {
            return Err(Error::Config("rho and sigma_data must be positive".into()));
        }
        Ok(())
    }

    /// Index of the last level, where `sigma == sigma_min`.
    pub fn last_step(&self) -> T {
        T::of((self.steps - 1) as f64)
    }

    /// Noise level at (possibly fractional) step `t` in `[0, T-1]`.
    pub fn sigma_at(&self, t: T) -> Result<T> {
        let last = self.last_step();
        if !(t >= T::zero() && t <= last) {
            return Err(Error::Range(format!("step {t} outside [0, {last}]")));
        }
        // Endpoints are returned verbatim so that boundary coefficients are exact.
        if t == T::zero() {
            return Ok(self.sigma_max);
        }
        if t == last {
            return Ok(self.sigma_min);
        }
        let inv = T::one() / self.rho;
        let hi = self.sigma_max.powf(inv);
        let lo = self.sigma_min.powf(inv);
        let frac = t / last;
        Ok((hi + frac * (lo - hi)).powf(self.rho))
    }

    pub fn sigma_at_step(&self, t: usize) -> Result<T> {
        self.sigma_at(T::of(t as f64))
    }

    pub fn coefficients(&self, sigma: T) -> Result<Coefficients<T>> {
        if !(sigma >= self.sigma_min) || !sigma.is_finite() {
            return Err(Error::Range(format!(
                "sigma {sigma} below sigma_min {}",
                self.sigma_min
            )));
        }
        let sd2 = self.sigma_data * self.sigma_data;
        let shifted = sigma - self.sigma_min;
        let norm = (sigma * sigma + sd2).sqrt();
        Ok(Coefficients {
            c_in: T::one() / norm,
            c_skip: sd2 / (shifted * shifted + sd2),
            c_out: self.sigma_data * shifted / norm,
        })
    }

    /// Factor applied to the noised signal before it is shown to a denoiser.
    pub fn input_scale(&self, sigma: T) -> Result<T> {
        let c = self.coefficients(sigma)?;
        Ok(if self.halve_input {
            c.c_in / T::of(2.0)
        } else {
            c.c_in
        })
    }
}

/// A set of `D`-dimensional rows in normalized signal space.
#[derive(Debug, Clone, PartialEq)]
pub struct Signal<T, const D: usize> {
    pub rows: Vec<[T; D]>,
}

/// One row per box.
pub type BoxSignal<T> = Signal<T, 4>;
/// One row per paired box: `prev` in columns 0..4, `cur` in 4..8.
pub type PairedSignal<T> = Signal<T, 8>;

impl<T: Scalar, const D: usize> Signal<T, D> {
    pub fn new(rows: Vec<[T; D]>) -> Self {
        Self { rows }
    }

    pub fn zeros(count: usize) -> Self {
        Self {
            rows: vec![[T::zero(); D]; count],
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.rows.iter().flatten().all(|v| v.is_finite())
    }

    pub fn check_same_len(&self, other: &Self) -> Result<()> {
        if self.len() == other.len() {
            Ok(())
        } else {
            Err(Error::Shape {
                expected: self.len(),
                got: other.len(),
            })
        }
    }

    pub fn scaled(&self, k: T) -> Self {
        Self {
            rows: self.rows.iter().map(|r| r.map(|v| v * k)).collect(),
        }
    }

    /// Elementwise `f(a, b)` over two signals of equal length.
    pub fn zip_with(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.check_same_len(other)?;
        let rows = self
            .rows
            .iter()
            .zip(&other.rows)
            .map(|(a, b)| std::array::from_fn(|j| f(a[j], b[j])))
            .collect();
        Ok(Self { rows })
    }
}

/// `x_s + eps * sigma`: the noised sample before input scaling.
pub fn add_noise<T: Scalar, const D: usize>(
    x_s: &Signal<T, D>,
    sigma: T,
    eps: &Signal<T, D>,
) -> Result<Signal<T, D>> {
    x_s.zip_with(eps, |x, e| x + e * sigma)
}

/// Noises `x_s` at step `t` and restricts its range by the input scale:
/// `x_t = (c_in(σ_t) / 2) * (x_s + eps * σ_t)`.
pub fn corrupt<T: Scalar, const D: usize>(
    x_s: &Signal<T, D>,
    t: T,
    eps: &Signal<T, D>,
    sched: &NoiseSchedule<T>,
) -> Result<Signal<T, D>> {
    let sigma = sched.sigma_at(t)?;
    let noised = add_noise(x_s, sigma, eps)?;
    Ok(noised.scaled(sched.input_scale(sigma)?))
}

/// Composes the raw network output with the skip connection:
/// `c_skip(σ) * x_t + c_out(σ) * raw`. At `σ = sigma_min` this is `x_t`.
pub fn consistency_apply<T: Scalar, const D: usize>(
    x_t: &Signal<T, D>,
    raw: &Signal<T, D>,
    sigma: T,
    sched: &NoiseSchedule<T>,
) -> Result<Signal<T, D>> {
    let c = sched.coefficients(sigma)?;
    x_t.zip_with(raw, |x, r| c.c_skip * x + c.c_out * r)
}

/// Inverse of [`consistency_apply`] in `raw`: the output that makes the
/// composition land on `target`. At `σ = sigma_min` (`c_out = 0`) the target
/// itself is returned.
pub fn solve_raw<T: Scalar, const D: usize>(
    x_t: &Signal<T, D>,
    target: &Signal<T, D>,
    sigma: T,
    sched: &NoiseSchedule<T>,
) -> Result<Signal<T, D>> {
    let c = sched.coefficients(sigma)?;
    if c.c_out == T::zero() {
        x_t.check_same_len(target)?;
        return Ok(target.clone());
    }
    target.zip_with(x_t, |g, x| (g - c.c_skip * x) / c.c_out)
}

const MIN_REL_SIZE: f64 = 1e-4;

/// Affine map between pixel boxes and normalized signal rows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignalSpace<T> {
    pub image_w: T,
    pub image_h: T,
    /// Half-width `s` of the signal range `[-s, s]`.
    pub scale: T,
}

impl<T: Scalar> SignalSpace<T> {
    pub fn new(image_w: T, image_h: T, sched: &NoiseSchedule<T>) -> Result<Self> {
        if !(image_w > T::zero() && image_h > T::zero()) {
            return Err(Error::Config(format!("image size {image_w}x{image_h}")));
        }
        Ok(Self {
            image_w,
            image_h,
            scale: T::of(2.0) * sched.sigma_data,
        })
    }

    pub fn encode(&self, b: &BBox<T>) -> [T; 4] {
        let two = T::of(2.0);
        let u = [
            b.cx / self.image_w,
            b.cy / self.image_h,
            b.w / self.image_w,
            b.h / self.image_h,
        ];
        u.map(|v| (v * two - T::one()) * self.scale)
    }

    /// Always yields a valid box: centers clamp into the image, sizes into
    /// `[1e-4, 1]` of the image.
    pub fn decode(&self, row: &[T]) -> BBox<T> {
        let two = T::of(2.0);
        let unit = |v: T| (v / self.scale + T::one()) / two;
        let clamp = |v: T, lo: T, hi: T| {
            if v.is_nan() {
                lo
            } else {
                v.max(lo).min(hi)
            }
        };
        let min_rel = T::of(MIN_REL_SIZE);
        BBox {
            cx: clamp(unit(row[0]), T::zero(), T::one()) * self.image_w,
            cy: clamp(unit(row[1]), T::zero(), T::one()) * self.image_h,
            w: clamp(unit(row[2]), min_rel, T::one()) * self.image_w,
            h: clamp(unit(row[3]), min_rel, T::one()) * self.image_h,
        }
    }

    pub fn encode_pair(&self, p: &PairedBox<T>) -> [T; 8] {
        let a = self.encode(&p.prev);
        let b = self.encode(&p.cur);
        std::array::from_fn(|j| if j < 4 { a[j] } else { b[j - 4] })
    }

    pub fn decode_pair(&self, row: &[T; 8]) -> PairedBox<T> {
        PairedBox::new(self.decode(&row[..4]), self.decode(&row[4..]))
    }
}

pub fn normalize_boxes<T: Scalar>(boxes: &[BBox<T>], space: &SignalSpace<T>) -> BoxSignal<T> {
    Signal::new(boxes.iter().map(|b| space.encode(b)).collect())
}

pub fn denormalize_boxes<T: Scalar>(signal: &BoxSignal<T>, space: &SignalSpace<T>) -> Vec<BBox<T>> {
    signal.rows.iter().map(|r| space.decode(r)).collect()
}

pub fn normalize_pairs<T: Scalar>(pairs: &[PairedBox<T>], space: &SignalSpace<T>) -> PairedSignal<T> {
    Signal::new(pairs.iter().map(|p| space.encode_pair(p)).collect())
}

pub fn denormalize_pairs<T: Scalar>(
    signal: &PairedSignal<T>,
    space: &SignalSpace<T>,
) -> Vec<PairedBox<T>> {
    signal.rows.iter().map(|r| space.decode_pair(r)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sched() -> NoiseSchedule<f64> {
        NoiseSchedule::default()
    }

    #[test]
    fn sigma_endpoints_and_midpoint() {
        let s = sched();
        assert_eq!(s.sigma_at_step(0).unwrap(), 80.0);
        assert_eq!(s.sigma_at_step(39).unwrap(), 0.002);
        // Independent evaluation of the midpoint: mean of the rho-th roots.
        let expect = ((80f64.powf(1.0 / 7.0) + 0.002f64.powf(1.0 / 7.0)) / 2.0).powi(7);
        let mid = s.sigma_at(19.5).unwrap();
        assert!((mid - expect).abs() < 1e-12);
        assert!((mid - 2.516).abs() < 1e-3, "{mid}");
        assert!(s.sigma_at(-0.5).is_err());
        assert!(s.sigma_at(39.01).is_err());
    }

    #[test]
    fn sigma_strictly_decreasing_f32() {
        let s = NoiseSchedule::<f32>::default();
        let v: Vec<f32> = (0..40).map(|t| s.sigma_at_step(t).unwrap()).collect();
        assert!(v.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn coefficient_examples() {
        let s = sched();
        let c = s.coefficients(0.002).unwrap();
        assert_eq!((c.c_skip, c.c_out), (1.0, 0.0));
        let c = s.coefficients(0.5).unwrap();
        assert!((c.c_in - 1.0 / 0.5f64.sqrt()).abs() < 1e-12);
        let c = s.coefficients(80.0).unwrap();
        let approx = 0.25 / (80.0 * 80.0);
        assert!((c.c_skip - approx).abs() / approx < 1e-3);
        assert!((c.c_skip - 3.9e-5).abs() < 1e-6);
        assert!(s.coefficients(0.001).is_err());
    }

    #[test]
    fn corrupt_examples() {
        let s = sched();
        // Fractional step with sigma_t = sigma_data: solve the schedule for t.
        let inv = 1.0 / 7.0;
        let (hi, lo) = (80f64.powf(inv), 0.002f64.powf(inv));
        let t = (0.5f64.powf(inv) - hi) / (lo - hi) * 39.0;
        assert!((s.sigma_at(t).unwrap() - 0.5).abs() < 1e-12);
        let x = BoxSignal::new(vec![[1.0; 4]]);
        let zero = BoxSignal::zeros(1);
        let xt = corrupt(&x, t, &zero, &s).unwrap();
        for v in xt.rows[0] {
            assert!((v - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-6);
        }
        // Pure noise at sigma_max.
        let ones = BoxSignal::new(vec![[1.0; 4]]);
        let xt = corrupt(&zero, 0.0, &ones, &s).unwrap();
        let expect = 80.0 / (80.0f64 * 80.0 + 0.25).sqrt() / 2.0;
        assert!((xt.rows[0][0] - expect).abs() < 1e-15);
        assert!((xt.rows[0][0] - 0.49999).abs() < 1e-5);
        // Mismatched eps.
        assert!(matches!(
            corrupt(&x, 3.0, &BoxSignal::zeros(2), &s),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn corrupt_zero_noise_is_rescale() {
        let s = sched();
        let x = BoxSignal::new(vec![[0.3, -0.2, 0.9, 0.1], [1.0, 2.0, -3.0, 0.5]]);
        for t in [0.0, 7.0, 20.5, 39.0] {
            let xt = corrupt(&x, t, &BoxSignal::zeros(2), &s).unwrap();
            let k = s.input_scale(s.sigma_at(t).unwrap()).unwrap();
            assert_eq!(xt, x.scaled(k));
        }
    }

    #[test]
    fn consistency_apply_examples() {
        let s = sched();
        let x = BoxSignal::new(vec![[1.0, -2.0, 0.5, 3.0]]);
        let raw = BoxSignal::new(vec![[7.0, 8.0, -9.0, 1e6]]);
        assert_eq!(consistency_apply(&x, &raw, 0.002, &s).unwrap(), x);
        // Zero input leaves only the output branch.
        let z = BoxSignal::zeros(1);
        let c = s.coefficients(1.3).unwrap();
        let out = consistency_apply(&z, &raw, 1.3, &s).unwrap();
        assert_eq!(out, raw.scaled(c.c_out));
        // Hand evaluation at sigma = 1.
        let c_skip = 0.25 / (0.998f64.powi(2) + 0.25);
        let c_out = 0.5 * 0.998 / 1.25f64.sqrt();
        let expect = c_skip + 2.0 * c_out;
        let out = consistency_apply(
            &BoxSignal::new(vec![[1.0; 4]]),
            &BoxSignal::new(vec![[2.0; 4]]),
            1.0,
            &s,
        )
        .unwrap();
        assert!((out.rows[0][0] - expect).abs() < 1e-12);
        assert!((out.rows[0][0] - 1.0933).abs() < 1e-4);
        assert!(consistency_apply(&x, &BoxSignal::zeros(3), 1.0, &s).is_err());
    }

    #[test]
    fn solve_raw_inverts() {
        let s = sched();
        let x = BoxSignal::new(vec![[0.1, 0.2, 0.3, 0.4]]);
        let g = BoxSignal::new(vec![[-0.5, 0.5, 0.25, 0.75]]);
        for sigma in [0.01, 0.5, 3.0, 80.0] {
            let raw = solve_raw(&x, &g, sigma, &s).unwrap();
            let back = consistency_apply(&x, &raw, sigma, &s).unwrap();
            for (a, b) in back.rows[0].iter().zip(g.rows[0]) {
                assert!((a - b).abs() < 1e-9);
            }
        }
        assert_eq!(solve_raw(&x, &g, 0.002, &s).unwrap(), g);
    }

    #[test]
    fn normalize_round_trip() {
        let s = sched();
        let space = SignalSpace::new(1440.0, 800.0, &s).unwrap();
        let full = BBox::new(720.0, 400.0, 1440.0, 800.0).unwrap();
        let sig = normalize_boxes(&[full], &space);
        assert_eq!(sig.rows[0], [0.0, 0.0, 1.0, 1.0]);
        assert_eq!(denormalize_boxes(&sig, &space)[0], full);

        // A box hanging off the corner clamps, and clamping is idempotent.
        let corner = BBox::new(-5.0, 810.0, 0.01, 2000.0).unwrap();
        let once = denormalize_boxes(&normalize_boxes(&[corner], &space), &space)[0];
        let twice = denormalize_boxes(&normalize_boxes(&[once], &space), &space)[0];
        assert_eq!(once.cx, 0.0);
        assert_eq!(once.h, 800.0);
        assert!((once.w - 1e-4 * 1440.0).abs() < 1e-12);
        assert!((twice.cx - once.cx).abs() < 1e-9 && (twice.w - once.w).abs() < 1e-9);

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let boxes: Vec<BBox<f64>> = (0..100_000)
            .map(|_| {
                BBox::new(
                    rng.random_range(0.0..1440.0),
                    rng.random_range(0.0..800.0),
                    rng.random_range(1.0..1440.0),
                    rng.random_range(1.0..800.0),
                )
                .unwrap()
            })
            .collect();
        let back = denormalize_boxes(&normalize_boxes(&boxes, &space), &space);
        for (a, b) in boxes.iter().zip(&back) {
            assert!((a.cx - b.cx).abs() < 1e-9 && (a.cy - b.cy).abs() < 1e-9);
            assert!((a.w - b.w).abs() < 1e-9 && (a.h - b.h).abs() < 1e-9);
        }
    }
}

#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn boundary_self_map(rows in prop::collection::vec((prop::array::uniform4(-1e3..1e3f64), prop::array::uniform4(-1e6..1e6f64)), 1..20)) {
            let s = NoiseSchedule::<f64>::default();
            let x = BoxSignal::new(rows.iter().map(|r| r.0).collect());
            let raw = BoxSignal::new(rows.iter().map(|r| r.1).collect());
            prop_assert_eq!(consistency_apply(&x, &raw, s.sigma_min, &s).unwrap(), x);
        }

        #[test]
        fn coefficients_finite(t in 0.0..39.0f64) {
            let s = NoiseSchedule::<f64>::default();
            let c = s.coefficients(s.sigma_at(t).unwrap()).unwrap();
            prop_assert!(c.c_in.is_finite() && c.c_skip.is_finite() && c.c_out.is_finite());
            prop_assert!(c.c_skip > 0.0 && c.c_skip <= 1.0 && c.c_out >= 0.0);
        }
    }
}
