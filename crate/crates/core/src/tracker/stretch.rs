//! Logarithmic score stretching with per-batch min-max rescaling.

use crate::num::Scalar;

pub const STRETCH_BASE: f64 = 1.01;
const FLOOR: f64 = 1e-7;

/// `log_{1.01}(s)`, with `s` clamped to at least `1e-7`.
pub fn stretch_raw<T: Scalar>(s: T) -> T {
    let s = s.max(T::of(FLOOR));
    s.ln() / T::of(STRETCH_BASE).ln()
}

/// Stretched scores rescaled to `[0, 1]` over the batch. A batch with no
/// spread maps every score to one.
pub fn stretch_batch<T: Scalar>(scores: &[T]) -> Vec<T> {
    let raw: Vec<T> = scores.iter().map(|&s| stretch_raw(s)).collect();
    let lo = raw.iter().copied().fold(T::infinity(), T::min);
    let hi = raw.iter().copied().fold(T::neg_infinity(), T::max);
    let span = hi - lo;
    if !(span > T::zero()) {
        return vec![T::one(); raw.len()];
    }
    raw.into_iter().map(|r| (r - lo) / span).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn examples() {
        assert_eq!(stretch_raw(1.0f64), 0.0);
        // ln 0.5 / ln 1.01, evaluated independently.
        assert!((stretch_raw(0.5f64) - (-69.660_716_893_6)).abs() < 1e-9);
        assert_eq!(stretch_raw(0.0f64), stretch_raw(1e-7));
        let s = stretch_batch(&[1.0f64, 0.5, 0.25]);
        assert_eq!((s[0], s[2]), (1.0, 0.0));
        assert!((s[1] - 0.5).abs() < 1e-12);
        assert_eq!(stretch_batch(&[0.7f64, 0.7]), vec![1.0, 1.0]);
        assert!(stretch_batch::<f64>(&[]).is_empty());
    }

    proptest! {
        #[test]
        fn preserves_order(v in proptest::collection::vec(1e-6..1.0f64, 1..30)) {
            let s = stretch_batch(&v);
            for i in 0..v.len() {
                for j in 0..v.len() {
                    if v[i] < v[j] {
                        prop_assert!(s[i] <= s[j]);
                        prop_assert!(stretch_raw(v[i]) < stretch_raw(v[j]));
                    }
                }
                prop_assert!((0.0..=1.0).contains(&s[i]));
            }
        }
    }
}
