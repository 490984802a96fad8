//! Constant-velocity Kalman filter over `(cx, cy, w, h)` and their rates.

use crate::geometry::BBox;
use crate::num::Scalar;
use crate::{Error, Result};

/// Noise scales, proportional to the current box height.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KalmanConfig<T> {
    pub std_weight_position: T,
    pub std_weight_velocity: T,
    /// Multiplier on the process covariance; zero gives a noise-free model.
    pub process_scale: T,
    /// Multiplier on the measurement covariance.
    pub measurement_scale: T,
}

impl<T: Scalar> Default for KalmanConfig<T> {
    fn default() -> Self {
        Self {
            std_weight_position: T::of(1.0 / 20.0),
            std_weight_velocity: T::of(1.0 / 160.0),
            process_scale: T::one(),
            measurement_scale: T::one(),
        }
    }
}

impl<T: Scalar> KalmanConfig<T> {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: T, strict: bool| v.is_finite() && if strict { v > T::zero() } else { v >= T::zero() };
        if !(ok(self.std_weight_position, true)
            && ok(self.std_weight_velocity, true)
            && ok(self.process_scale, false)
            && ok(self.measurement_scale, true))
        {
            return Err(Error::Config("kalman noise weights must be positive".into()));
        }
        Ok(())
    }
}

pub type Mat8<T> = [[T; 8]; 8];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KalmanState<T> {
    pub mean: [T; 8],
    pub covariance: Mat8<T>,
}

const MIN_SIZE: f64 = 1e-3;

fn diag<T: Scalar>(d: [T; 8]) -> Mat8<T> {
    let mut m = [[T::zero(); 8]; 8];
    for i in 0..8 {
        m[i][i] = d[i];
    }
    m
}

/// Cholesky factor of a symmetric matrix, or `None` if it is not positive
/// definite.
fn cholesky<T: Scalar, const N: usize>(a: &[[T; N]; N]) -> Option<[[T; N]; N]> {
    let mut l = [[T::zero(); N]; N];
    for i in 0..N {
        for j in 0..=i {
            let mut s = a[i][j];
            for k in 0..j {
                s = s - l[i][k] * l[j][k];
            }
            if i == j {
                if !(s > T::zero()) {
                    return None;
                }
                l[i][i] = s.sqrt();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    Some(l)
}

/// Solves `L Lᵀ x = b` for one right-hand side.
fn cho_solve<T: Scalar, const N: usize>(l: &[[T; N]; N], b: [T; N]) -> [T; N] {
    let mut y = b;
    for i in 0..N {
        for k in 0..i {
            y[i] = y[i] - l[i][k] * y[k];
        }
        y[i] = y[i] / l[i][i];
    }
    for i in (0..N).rev() {
        for k in i + 1..N {
            y[i] = y[i] - l[k][i] * y[k];
        }
        y[i] = y[i] / l[i][i];
    }
    y
}

impl<T: Scalar> KalmanState<T> {
    /// Starts a track at `b` with the given per-frame velocity.
    pub fn with_velocity(b: &BBox<T>, velocity: [T; 4], cfg: &KalmanConfig<T>) -> Self {
        let two = T::of(2.0);
        let ten = T::of(10.0);
        let sp = two * cfg.std_weight_position * b.h;
        let sv = ten * cfg.std_weight_velocity * b.h;
        Self {
            mean: [b.cx, b.cy, b.w, b.h, velocity[0], velocity[1], velocity[2], velocity[3]],
            covariance: diag([sp * sp, sp * sp, sp * sp, sp * sp, sv * sv, sv * sv, sv * sv, sv * sv]),
        }
    }

    pub fn initiate(b: &BBox<T>, cfg: &KalmanConfig<T>) -> Self {
        Self::with_velocity(b, [T::zero(); 4], cfg)
    }

    pub fn bbox(&self) -> BBox<T> {
        let lo = T::of(MIN_SIZE);
        BBox {
            cx: self.mean[0],
            cy: self.mean[1],
            w: self.mean[2].max(lo),
            h: self.mean[3].max(lo),
        }
    }

    pub fn trace(&self) -> T {
        (0..8).fold(T::zero(), |a, i| a + self.covariance[i][i])
    }

    /// One-frame time update.
    pub fn predict(&self, cfg: &KalmanConfig<T>) -> (Self, BBox<T>) {
        let h = self.mean[3].max(T::of(MIN_SIZE));
        let sp = cfg.std_weight_position * h;
        let sv = cfg.std_weight_velocity * h;
        let q = cfg.process_scale;
        let mut mean = self.mean;
        for i in 0..4 {
            mean[i] = mean[i] + mean[i + 4];
        }
        // F P Fᵀ with F = [[I, I], [0, I]].
        let p = &self.covariance;
        let mut fp = *p;
        for i in 0..4 {
            for j in 0..8 {
                fp[i][j] = p[i][j] + p[i + 4][j];
            }
        }
        let mut cov = fp;
        for i in 0..8 {
            for j in 0..4 {
                cov[i][j] = fp[i][j] + fp[i][j + 4];
            }
        }
        for i in 0..4 {
            cov[i][i] = cov[i][i] + q * sp * sp;
            cov[i + 4][i + 4] = cov[i + 4][i + 4] + q * sv * sv;
        }
        let next = Self {
            mean,
            covariance: cov,
        };
        (next, next.bbox())
    }

    /// Measurement update with an observed box.
    pub fn update(&self, z: &BBox<T>, cfg: &KalmanConfig<T>) -> Result<Self> {
        let h = self.mean[3].max(T::of(MIN_SIZE));
        let sr = cfg.std_weight_position * h;
        let r = cfg.measurement_scale * sr * sr;
        let p = &self.covariance;
        let mut s = [[T::zero(); 4]; 4];
        for i in 0..4 {
            for j in 0..4 {
                s[i][j] = p[i][j];
            }
            s[i][i] = s[i][i] + r;
        }
        let l = cholesky(&s)
            .ok_or_else(|| Error::Numerical("innovation covariance is not positive definite".into()))?;
        // K = P Hᵀ S⁻¹, row by row (S symmetric).
        let mut k = [[T::zero(); 4]; 8];
        for i in 0..8 {
            let row = [p[i][0], p[i][1], p[i][2], p[i][3]];
            k[i] = cho_solve(&l, row);
        }
        let zv = [z.cx, z.cy, z.w, z.h];
        let innov: [T; 4] = std::array::from_fn(|j| zv[j] - self.mean[j]);
        let mut mean = self.mean;
        for i in 0..8 {
            for j in 0..4 {
                mean[i] = mean[i] + k[i][j] * innov[j];
            }
        }
        // P - K H P, then symmetrized.
        let mut cov = *p;
        for i in 0..8 {
            for j in 0..8 {
                let mut acc = T::zero();
                for m in 0..4 {
                    acc = acc + k[i][m] * p[m][j];
                }
                cov[i][j] = p[i][j] - acc;
            }
        }
        let half = T::of(0.5);
        for i in 0..8 {
            for j in i + 1..8 {
                let v = (cov[i][j] + cov[j][i]) * half;
                cov[i][j] = v;
                cov[j][i] = v;
            }
        }
        if cholesky(&cov).is_none() {
            return Err(Error::Numerical("posterior covariance is not positive definite".into()));
        }
        let lo = T::of(MIN_SIZE);
        mean[2] = mean[2].max(lo);
        mean[3] = mean[3].max(lo);
        Ok(Self {
            mean,
            covariance: cov,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(cx: f64, cy: f64) -> BBox<f64> {
        BBox::new(cx, cy, 40.0, 80.0).unwrap()
    }

    #[test]
    fn stationary_fixed_point() {
        let cfg = KalmanConfig::default();
        let s = KalmanState::initiate(&b(10.0, 20.0), &cfg);
        let (_, p) = s.predict(&cfg);
        assert_eq!(p, b(10.0, 20.0));
    }

    #[test]
    fn linear_extrapolation() {
        let cfg = KalmanConfig {
            process_scale: 0.0,
            ..Default::default()
        };
        let s = KalmanState::with_velocity(&b(1.0, 0.0), [1.0, 0.0, 0.0, 0.0], &cfg);
        let (_, p) = s.predict(&cfg);
        assert_eq!((p.cx, p.cy), (2.0, 0.0));
    }

    #[test]
    fn predict_grows_trace() {
        let cfg = KalmanConfig::default();
        let mut s = KalmanState::initiate(&b(0.0, 0.0), &cfg);
        for _ in 0..20 {
            let (n, _) = s.predict(&cfg);
            assert!(n.trace() > s.trace());
            s = n;
        }
    }

    #[test]
    fn consistent_measurement() {
        let cfg = KalmanConfig {
            measurement_scale: 1e-8,
            ..Default::default()
        };
        let s = KalmanState::initiate(&b(0.0, 0.0), &cfg);
        let (s, _) = s.predict(&cfg);
        let z = b(3.0, -2.0);
        let u = s.update(&z, &cfg).unwrap();
        assert!((u.mean[0] - 3.0).abs() < 1e-6);
        assert!((u.mean[1] + 2.0).abs() < 1e-6);
    }

    #[test]
    fn uninformative_measurement() {
        let cfg = KalmanConfig {
            measurement_scale: 1e12,
            ..Default::default()
        };
        let s = KalmanState::initiate(&b(0.0, 0.0), &cfg);
        let u = s.update(&b(50.0, 50.0), &cfg).unwrap();
        assert!((u.mean[0]).abs() < 1e-6);
        assert!((u.trace() - s.trace()).abs() / s.trace() < 1e-6);
    }

    #[test]
    fn repeated_updates_converge_monotonically() {
        let cfg = KalmanConfig::default();
        let mut s = KalmanState::initiate(&b(0.0, 0.0), &cfg);
        let z = b(10.0, 5.0);
        let mut last = s.trace();
        for _ in 0..50 {
            s = s.update(&z, &cfg).unwrap();
            assert!(s.trace() < last);
            last = s.trace();
        }
        assert!((s.mean[0] - 10.0).abs() < 0.1);
        assert!((s.mean[1] - 5.0).abs() < 0.1);
    }

    #[test]
    fn noise_free_track_is_exact() {
        let cfg = KalmanConfig::default();
        let v = [2.5, -1.25, 0.0, 0.0];
        let at = |k: f64| b(100.0 + v[0] * k, 300.0 + v[1] * k);
        let mut s = KalmanState::with_velocity(&at(0.0), v, &cfg);
        for k in 1..200 {
            let (p, pb) = s.predict(&cfg);
            let truth = at(k as f64);
            assert!((pb.cx - truth.cx).abs() < 1e-9 && (pb.cy - truth.cy).abs() < 1e-9);
            s = p.update(&truth, &cfg).unwrap();
        }
    }

    #[test]
    fn non_spd_is_reported() {
        let cfg = KalmanConfig::default();
        let mut s = KalmanState::initiate(&b(0.0, 0.0), &cfg);
        s.covariance[0][0] = -1e6;
        assert!(matches!(s.update(&b(1.0, 1.0), &cfg), Err(Error::Numerical(_))));
    }
}
