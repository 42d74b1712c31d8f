/// Incremental log-sum-exp: tracks the running maximum and the sum of
/// `exp(e - max)` so that `ln Σ exp(e_j)` never overflows.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogSumExpAcc {
    max: f64,
    scaled_sum: f64,
}

impl Default for LogSumExpAcc {
    fn default() -> Self {
        Self::new()
    }
}

impl LogSumExpAcc {
    pub const fn new() -> Self {
        Self {
            max: f64::NEG_INFINITY,
            scaled_sum: 0.0,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.scaled_sum == 0.0
    }

    pub fn push(&mut self, e: f64) {
        if self.is_empty() {
            self.max = e;
            self.scaled_sum = 1.0;
        } else if e <= self.max {
            self.scaled_sum += (e - self.max).exp();
        } else {
            self.scaled_sum = self.scaled_sum * (self.max - e).exp() + 1.0;
            self.max = e;
        }
    }

    /// `ln Σ exp(e_j)` over everything pushed so far; `-inf` when empty.
    pub fn value(&self) -> f64 {
        if self.is_empty() {
            f64::NEG_INFINITY
        } else {
            self.max + self.scaled_sum.ln()
        }
    }

    pub fn parts(&self) -> (f64, f64) {
        (self.max, self.scaled_sum)
    }
}

/// Functional form of [`LogSumExpAcc::push`].
pub fn logsumexp_running(state: LogSumExpAcc, e_new: f64) -> LogSumExpAcc {
    let mut next = state;
    next.push(e_new);
    next
}

pub fn logsumexp(xs: &[f64]) -> f64 {
    xs.iter()
        .fold(LogSumExpAcc::new(), |acc, &x| logsumexp_running(acc, x))
        .value()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn examples() {
        assert!((logsumexp(&[0.0, 0.0]) - 2f64.ln()).abs() < 1e-15);
        let big = logsumexp(&[700.0, 700.0]);
        assert!(big.is_finite());
        assert!((big - (700.0 + 2f64.ln())).abs() < 1e-12);
        assert_eq!(logsumexp(&[-3.25]), -3.25);
        assert_eq!(logsumexp(&[]), f64::NEG_INFINITY);
    }

    #[test]
    fn matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for len in [1usize, 2, 10, 1000, 10_000] {
            let xs: Vec<f64> = (0..len).map(|_| rng.gen_range(-50.0..50.0)).collect();
            let direct = xs.iter().map(|x| x.exp()).sum::<f64>().ln();
            let running = logsumexp(&xs);
            assert!(
                ((running - direct) / direct).abs() < 1e-12,
                "len {len}: {running} vs {direct}"
            );
        }
    }

    #[test]
    fn finite_over_wide_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut acc = LogSumExpAcc::new();
        for _ in 0..5000 {
            acc.push(rng.gen_range(-1e3..1e3));
            assert!(acc.value().is_finite());
        }
    }
}
