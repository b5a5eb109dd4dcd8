//! Log-space numerics.

use rand::{Rng, RngCore};

/// `log(sum(exp(xs)))`, stable for large magnitudes. Returns `-inf` for an
/// empty slice or when every entry is `-inf`.
pub fn logsumexp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + xs.iter().map(|&x| (x - max).exp()).sum::<f64>().ln()
}

/// `log(exp(a) + exp(b))`.
pub fn logaddexp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// `log(mean(exp(xs)))`.
pub fn log_mean_exp(xs: &[f64]) -> f64 {
    logsumexp(xs) - (xs.len() as f64).ln()
}

/// Normalizes log weights in place so they log-sum to zero. Returns the
/// normalizer, or `None` when every weight is `-inf`.
pub fn normalize_log_weights(log_w: &mut [f64]) -> Option<f64> {
    let lse = logsumexp(log_w);
    if lse == f64::NEG_INFINITY || lse.is_nan() {
        return None;
    }
    for w in log_w.iter_mut() {
        *w -= lse;
    }
    Some(lse)
}

/// Draws an index with probability proportional to `exp(log_w[i])`.
///
/// Returns `None` when all weights are `-inf`.
pub fn sample_log_categorical(log_w: &[f64], rng: &mut dyn RngCore) -> Option<usize> {
    let lse = logsumexp(log_w);
    if lse == f64::NEG_INFINITY || lse.is_nan() {
        return None;
    }
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last_positive = None;
    for (i, &w) in log_w.iter().enumerate() {
        let p = (w - lse).exp();
        if p > 0.0 {
            last_positive = Some(i);
        }
        acc += p;
        if u < acc {
            return Some(i);
        }
    }
    // u landed in the rounding slack above the accumulated mass
    last_positive
}

/// Cumulative table for repeated draws from one log-weight vector. Each draw
/// uses one uniform and returns the same index as [`sample_log_categorical`]
/// would for that uniform, in `O(log n)` instead of `O(n)`.
#[derive(Debug, Clone)]
pub struct LogCategorical {
    cumulative: Vec<f64>,
    last_positive: usize,
}

impl LogCategorical {
    /// `None` when all weights are `-inf`.
    pub fn new(log_w: &[f64]) -> Option<Self> {
        let lse = logsumexp(log_w);
        if lse == f64::NEG_INFINITY || lse.is_nan() {
            return None;
        }
        let mut acc = 0.0;
        let mut last_positive = 0;
        let cumulative = log_w
            .iter()
            .enumerate()
            .map(|(i, &w)| {
                let p = (w - lse).exp();
                if p > 0.0 {
                    last_positive = i;
                }
                acc += p;
                acc
            })
            .collect();
        Some(LogCategorical {
            cumulative,
            last_positive,
        })
    }

    pub fn sample(&self, rng: &mut dyn RngCore) -> usize {
        let u: f64 = rng.random();
        let i = self.cumulative.partition_point(|&c| c <= u);
        if i < self.cumulative.len() {
            i
        } else {
            self.last_positive
        }
    }
}

/// Draws an index from normalized linear probabilities.
pub fn sample_categorical(probs: &[f64], rng: &mut dyn RngCore) -> Option<usize> {
    let total: f64 = probs.iter().sum();
    if !(total > 0.0) {
        return None;
    }
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut last_positive = None;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            last_positive = Some(i);
        }
        acc += p;
        if u < acc {
            return Some(i);
        }
    }
    last_positive
}

/// Sample mean and unbiased sample variance.
pub fn mean_and_variance(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let ss = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>();
    (mean, ss / (n - 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn table_draws_match_linear_scan(
            log_w in proptest::collection::vec(prop_oneof![Just(f64::NEG_INFINITY), -30.0f64..5.0], 1..40),
            seed in any::<u64>(),
        ) {
            let table = LogCategorical::new(&log_w);
            prop_assert_eq!(table.is_none(), sample_log_categorical(&log_w, &mut stream(0, 0, 0)).is_none());
            if let Some(table) = table {
                let (mut a, mut b) = (stream(seed, 0, 0), stream(seed, 0, 0));
                for _ in 0..50 {
                    prop_assert_eq!(Some(table.sample(&mut a)), sample_log_categorical(&log_w, &mut b));
                }
            }
        }
    }

    #[test]
    fn logsumexp_edge_cases() {
        assert_eq!(logsumexp(&[]), f64::NEG_INFINITY);
        assert_eq!(logsumexp(&[f64::NEG_INFINITY; 3]), f64::NEG_INFINITY);
        assert!((logsumexp(&[1000.0, 1000.0]) - (1000.0 + 2f64.ln())).abs() < 1e-12);
        assert!((logsumexp(&[0.5f64.ln(), 0.25f64.ln()]) - 0.75f64.ln()).abs() < 1e-15);
        assert!((logaddexp(0.2f64.ln(), 0.3f64.ln()) - 0.5f64.ln()).abs() < 1e-15);
        assert_eq!(logaddexp(f64::NEG_INFINITY, -3.0), -3.0);
    }

    #[test]
    fn categorical_frequencies() {
        let mut rng = stream(1, 2, 3);
        let log_w = [0.1f64.ln(), f64::NEG_INFINITY, 0.6f64.ln(), 0.3f64.ln()];
        let mut counts = [0usize; 4];
        let n = 100_000;
        for _ in 0..n {
            counts[sample_log_categorical(&log_w, &mut rng).unwrap()] += 1;
        }
        assert_eq!(counts[1], 0);
        for (i, &p) in [0.1, 0.0, 0.6, 0.3].iter().enumerate() {
            let f = counts[i] as f64 / n as f64;
            assert!((f - p).abs() < 0.01, "index {i}: {f} vs {p}");
        }
        assert_eq!(sample_log_categorical(&[f64::NEG_INFINITY], &mut rng), None);
        assert_eq!(sample_categorical(&[0.0, 0.0], &mut rng), None);
    }
}
