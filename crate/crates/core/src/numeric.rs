//! Overflow-safe softmax and log-sum-exp.

use num_traits::Float;

/// `log Σ exp(x)` with max subtraction. Returns `-inf` for an empty slice.
pub fn log_sum_exp<T: Float>(xs: &[T]) -> T {
    let max = xs.iter().copied().fold(T::neg_infinity(), T::max);
    if !max.is_finite() {
        return max;
    }
    let sum = xs.iter().fold(T::zero(), |acc, &x| acc + (x - max).exp());
    max + sum.ln()
}

/// Writes `softmax(xs)` into `out`, which must have the same length.
pub fn softmax_into<T: Float>(xs: &[T], out: &mut [T]) {
    debug_assert_eq!(xs.len(), out.len());
    let max = xs.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for (o, &x) in out.iter_mut().zip(xs) {
        *o = (x - max).exp();
        sum = sum + *o;
    }
    for o in out.iter_mut() {
        *o = *o / sum;
    }
}

pub fn softmax<T: Float>(xs: &[T]) -> Vec<T> {
    let mut out = vec![T::zero(); xs.len()];
    softmax_into(xs, &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn large_inputs_do_not_overflow() {
        let p = softmax(&[1000.0_f64, 1000.0]);
        assert_eq!(p, vec![0.5, 0.5]);
        let lse = log_sum_exp(&[1000.0_f64, 1000.0]);
        assert!((lse - (1000.0 + 2f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn matches_naive_on_small_inputs() {
        let xs = [0.3_f64, -1.2, 2.0];
        let z: f64 = xs.iter().map(|x| x.exp()).sum();
        for (p, x) in softmax(&xs).iter().zip(xs) {
            assert!((p - x.exp() / z).abs() < 1e-15);
        }
        assert!((log_sum_exp(&xs) - z.ln()).abs() < 1e-14);
    }

    #[test]
    fn empty_lse_is_neg_inf() {
        assert_eq!(log_sum_exp::<f64>(&[]), f64::NEG_INFINITY);
    }
}
