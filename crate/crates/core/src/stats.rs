//! Streaming moment accumulators for Monte Carlo estimates.

/// Running mean and co-moment matrix of an `N`-dimensional sample (Welford),
/// mergeable with Chan's pairwise update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments<const N: usize> {
    count: u64,
    mean: [f64; N],
    comoment: [[f64; N]; N],
}

impl<const N: usize> Default for Moments<N> {
    fn default() -> Self {
        Self {
            count: 0,
            mean: [0.0; N],
            comoment: [[0.0; N]; N],
        }
    }
}

impl<const N: usize> Moments<N> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, x: [f64; N]) {
        self.count += 1;
        let n = self.count as f64;
        let mut delta = [0.0; N];
        for i in 0..N {
            delta[i] = x[i] - self.mean[i];
            self.mean[i] += delta[i] / n;
        }
        for i in 0..N {
            let after = x[i] - self.mean[i];
            for j in 0..N {
                self.comoment[j][i] += delta[j] * after;
            }
        }
    }

    pub fn merge(&mut self, other: &Self) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = *other;
            return;
        }
        let (na, nb) = (self.count as f64, other.count as f64);
        let n = na + nb;
        let mut delta = [0.0; N];
        for i in 0..N {
            delta[i] = other.mean[i] - self.mean[i];
        }
        for i in 0..N {
            for j in 0..N {
                self.comoment[i][j] += other.comoment[i][j] + delta[i] * delta[j] * na * nb / n;
            }
        }
        for i in 0..N {
            self.mean[i] += delta[i] * nb / n;
        }
        self.count += other.count;
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> [f64; N] {
        self.mean
    }

    /// Unbiased sample covariance.
    pub fn covariance(&self, i: usize, j: usize) -> f64 {
        if self.count < 2 {
            return 0.0;
        }
        self.comoment[i][j] / (self.count - 1) as f64
    }

    pub fn variance(&self, i: usize) -> f64 {
        self.covariance(i, i)
    }

    /// Standard error of the mean of component `i`.
    pub fn std_err(&self, i: usize) -> f64 {
        if self.count == 0 {
            return f64::INFINITY;
        }
        (self.variance(i) / self.count as f64).sqrt()
    }

    /// Delta-method standard error of `f(mean)` given `grad = df/dmean`.
    pub fn delta_std_err(&self, grad: &[f64; N]) -> f64 {
        if self.count == 0 {
            return f64::INFINITY;
        }
        let mut var = 0.0;
        for i in 0..N {
            for j in 0..N {
                var += grad[i] * grad[j] * self.covariance(i, j);
            }
        }
        (var.max(0.0) / self.count as f64).sqrt()
    }
}

/// Trials per independently seeded Monte Carlo chunk.
pub const MC_CHUNK: usize = 4096;

/// Splits `trials` into fixed-size chunks, runs `work(chunk_seed, n)` on each
/// (in parallel when enabled) and folds the results in chunk order.
///
/// The chunk size is fixed, so results depend on `(seed, trials)` only and
/// not on the number of worker threads.
pub fn run_chunked<A, W, M>(trials: usize, seed: u64, work: W, mut merge: M) -> Option<A>
where
    A: Send,
    W: Fn(u64, usize) -> A + Sync + Send,
    M: FnMut(&mut A, A),
{
    let chunks: Vec<(u64, usize)> = (0..trials.div_ceil(MC_CHUNK))
        .map(|c| {
            let n = MC_CHUNK.min(trials - c * MC_CHUNK);
            (crate::scenario::derive_seed(seed, c as u64), n)
        })
        .collect();
    #[cfg(feature = "parallel")]
    let parts: Vec<A> = {
        use rayon::prelude::*;
        chunks.par_iter().map(|&(s, n)| work(s, n)).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let parts: Vec<A> = chunks.iter().map(|&(s, n)| work(s, n)).collect();
    let mut iter = parts.into_iter();
    let mut acc = iter.next()?;
    for part in iter {
        merge(&mut acc, part);
    }
    Some(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn matches_two_pass() {
        let data: Vec<[f64; 2]> = (0..50)
            .map(|i| {
                let x = (i as f64 * 0.37).sin() + 3.0;
                [x, 2.0 * x + (i as f64).cos()]
            })
            .collect();
        let mut acc = Moments::<2>::new();
        data.iter().for_each(|x| acc.push(*x));
        let n = data.len() as f64;
        let mx = data.iter().map(|x| x[0]).sum::<f64>() / n;
        let my = data.iter().map(|x| x[1]).sum::<f64>() / n;
        let cxy = data.iter().map(|x| (x[0] - mx) * (x[1] - my)).sum::<f64>() / (n - 1.0);
        assert_relative_eq!(acc.mean()[0], mx, max_relative = 1e-14);
        assert_relative_eq!(acc.covariance(0, 1), cxy, max_relative = 1e-12);
    }

    #[test]
    fn merge_equals_sequential() {
        let mut all = Moments::<1>::new();
        let mut a = Moments::<1>::new();
        let mut b = Moments::<1>::new();
        for i in 0..100 {
            let x = [(i * i % 17) as f64];
            all.push(x);
            if i < 37 {
                a.push(x)
            } else {
                b.push(x)
            }
        }
        a.merge(&b);
        assert_eq!(a.count(), 100);
        assert_relative_eq!(a.mean()[0], all.mean()[0], max_relative = 1e-14);
        assert_relative_eq!(a.variance(0), all.variance(0), max_relative = 1e-12);
    }
}
