//! Monte Carlo estimator summaries and the deterministic replica runner.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::rng::{replica_stream, SimRng};

/// A Monte Carlo estimate: `std_error` is the sample standard deviation
/// over `sqrt(replicas)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorReport {
    pub value: f64,
    pub std_error: f64,
    pub replicas: usize,
    pub seed_base: u64,
}

impl EstimatorReport {
    /// Is `x` within `k` standard errors of the estimate?
    pub fn within(&self, x: f64, k: f64) -> bool {
        (self.value - x).abs() <= k * self.std_error
    }
}

/// Mean of `xs` with its standard error.
pub fn mean_report(xs: &[f64], seed_base: u64) -> EstimatorReport {
    let n = xs.len();
    assert!(n >= 2, "need at least two replicas");
    let mean = xs.iter().sum::<f64>() / n as f64;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    EstimatorReport { value: mean, std_error: (var / n as f64).sqrt(), replicas: n, seed_base }
}

/// Frequency estimate from `hits` successes out of `replicas`.
pub fn binomial_report(hits: u64, replicas: usize, seed_base: u64) -> EstimatorReport {
    assert!(replicas >= 2, "need at least two replicas");
    let p = hits as f64 / replicas as f64;
    EstimatorReport { value: p, std_error: (p * (1.0 - p) / (replicas - 1) as f64).sqrt(), replicas, seed_base }
}

/// Unbiased sample variance of `xs` with a leave-one-out jackknife standard error.
pub fn variance_report(xs: &[f64], seed_base: u64) -> EstimatorReport {
    let n = xs.len();
    assert!(n >= 3, "jackknife variance needs at least three replicas");
    let nf = n as f64;
    let mean = xs.iter().sum::<f64>() / nf;
    let dev: Vec<f64> = xs.iter().map(|x| x - mean).collect();
    let ss: f64 = dev.iter().map(|d| d * d).sum();
    let var = ss / (nf - 1.0);
    // removing x_k shifts the mean by -d_k/(n-1) and the sum of squares by -n d_k²/(n-1)
    let loo: Vec<f64> = dev.iter().map(|d| (ss - nf * d * d / (nf - 1.0)) / (nf - 2.0)).collect();
    let loo_mean = loo.iter().sum::<f64>() / nf;
    let jk = ((nf - 1.0) / nf * loo.iter().map(|v| (v - loo_mean) * (v - loo_mean)).sum::<f64>()).sqrt();
    EstimatorReport { value: var, std_error: jk, replicas: n, seed_base }
}

/// Runs `f` once per replica on the stream `replica_stream(seed, r)`; the
/// output order is the replica order whatever the thread count.
pub fn replicate<T, F>(replicas: usize, seed: u64, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize, &mut SimRng) -> T + Sync,
{
    (0..replicas)
        .into_par_iter()
        .map(|r| {
            let mut rng = replica_stream(seed, r as u64);
            f(r, &mut rng)
        })
        .collect()
}

/// Replicas per accumulation block in [`replicate_counts`].
pub const BLOCK: usize = 512;

/// Sums per-replica integer count vectors of length `len`. Replicas are
/// grouped in fixed blocks and block totals are added in block order, so
/// the result does not depend on scheduling.
pub fn replicate_counts<F>(replicas: usize, seed: u64, len: usize, f: F) -> Vec<u64>
where
    F: Fn(usize, &mut SimRng, &mut [u64]) + Sync,
{
    let blocks = replicas.div_ceil(BLOCK);
    let partial: Vec<Vec<u64>> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut acc = vec![0u64; len];
            for r in b * BLOCK..((b + 1) * BLOCK).min(replicas) {
                let mut rng = replica_stream(seed, r as u64);
                f(r, &mut rng, &mut acc);
            }
            acc
        })
        .collect();
    let mut total = vec![0u64; len];
    for p in partial {
        for (t, x) in total.iter_mut().zip(p) {
            *t += x;
        }
    }
    total
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;

    #[test]
    fn mean_and_binomial_agree_on_indicators() {
        let xs = [1.0, 0.0, 0.0, 1.0, 1.0];
        let a = mean_report(&xs, 0);
        let b = binomial_report(3, 5, 0);
        assert_relative_eq!(a.value, b.value);
        assert_relative_eq!(a.std_error, b.std_error, max_relative = 1e-14);
    }

    #[test]
    fn jackknife_matches_brute_force() {
        let xs = [0.3, 1.7, -0.4, 2.2, 0.9, 1.1];
        let rep = variance_report(&xs, 0);
        let var = |v: &[f64]| {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64
        };
        assert_relative_eq!(rep.value, var(&xs), max_relative = 1e-14);
        let loo: Vec<f64> = (0..xs.len())
            .map(|k| {
                let v: Vec<f64> = xs.iter().enumerate().filter(|&(j, _)| j != k).map(|(_, &x)| x).collect();
                var(&v)
            })
            .collect();
        let n = xs.len() as f64;
        let m = loo.iter().sum::<f64>() / n;
        let se = ((n - 1.0) / n * loo.iter().map(|v| (v - m) * (v - m)).sum::<f64>()).sqrt();
        assert_relative_eq!(rep.std_error, se, max_relative = 1e-12);
    }

    #[test]
    fn replicate_is_thread_count_independent() {
        let f = |_: usize, r: &mut SimRng| r.random::<u64>();
        let a = replicate(100, 5, f);
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let b = pool.install(|| replicate(100, 5, f));
        assert_eq!(a, b);
        let c = replicate_counts(1500, 5, 2, |_, r, acc| acc[r.random_range(0..2)] += 1);
        let d = pool.install(|| replicate_counts(1500, 5, 2, |_, r, acc| acc[r.random_range(0..2)] += 1));
        assert_eq!(c, d);
        assert_eq!(c.iter().sum::<u64>(), 1500);
    }

    #[test]
    fn slope_of_power_law() {
        let x = [4.0, 8.0, 16.0, 32.0];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powf(-1.0)).collect();
        assert_relative_eq!(loglog_slope(&x, &y), -1.0, max_relative = 1e-12);
    }
}
