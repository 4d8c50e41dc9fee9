use std::f64::consts::LN_2;

use rand::Rng as _;

use super::{mean_and_variance, sorted_copy, EntropyEstimate};
use crate::error::{Error, Result};
use crate::model::EstimatorKind;
use crate::rng::seeded;

/// Digamma function for `x > 0`: upward recurrence to `x >= 6`, then the
/// asymptotic series. Absolute error below 1e-10.
pub fn digamma(mut x: f64) -> f64 {
    debug_assert!(x > 0.0);
    let mut acc = 0.0;
    while x < 6.0 {
        acc -= 1.0 / x;
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    let series = inv2
        * (1.0 / 12.0
            - inv2
                * (1.0 / 120.0
                    - inv2 * (1.0 / 252.0 - inv2 * (1.0 / 240.0 - inv2 * (1.0 / 132.0)))));
    acc + x.ln() - 0.5 * inv - series
}

/// Kozachenko–Leonenko estimate for 1-D samples:
/// `ψ(N) - ψ(k) + ln 2 + mean(ln ε_i)` with `ε_i` the distance to the k-th neighbour.
///
/// Duplicate values are separated with uniform jitter of magnitude
/// `1e-12 * std`. If more than half of the distances are still zero the input is
/// reported as degenerate.
pub fn knn_entropy(samples: &[f64], k: usize, seed: u64) -> Result<EntropyEstimate> {
    let n = samples.len();
    if n < 20 {
        return Err(Error::param(
            "samples",
            format!("kNN entropy needs N >= 20, got {n}"),
        ));
    }
    if k == 0 || k >= n {
        return Err(Error::param(
            "k",
            format!("need 1 <= k < N, got k = {k}, N = {n}"),
        ));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("kNN input contains non-finite values".into()));
    }

    let mut x = sorted_copy(samples);
    if x.windows(2).any(|w| w[0] == w[1]) {
        let scale = mean_and_variance(&x).1.sqrt();
        let mut rng = seeded(seed);
        for v in x.iter_mut() {
            *v += scale * 1e-12 * rng.random_range(-1.0..=1.0);
        }
        x.sort_by(f64::total_cmp);
    }

    let dists = kth_neighbour_distances(&x, k);
    let zeros = dists.iter().filter(|&&e| e == 0.0).count();
    if 2 * zeros > n {
        return Ok(EntropyEstimate::degenerate(
            EstimatorKind::Knn,
            format!("{zeros} of {n} neighbour distances are zero"),
        ));
    }
    // Remaining zero distances sit below float resolution; floor them there.
    let floor = f64::EPSILON
        * x.iter()
            .fold(0.0f64, |m, v| m.max(v.abs()))
            .max(f64::MIN_POSITIVE);
    let mean_log = dists.iter().map(|&e| e.max(floor).ln()).sum::<f64>() / n as f64;
    let value = digamma(n as f64) - digamma(k as f64) + LN_2 + mean_log;
    let mut est = EntropyEstimate::new(value, EstimatorKind::Knn);
    if zeros > 0 {
        est.warning = Some(format!("{zeros} zero neighbour distances floored"));
    }
    Ok(est)
}

/// Distance from each point of sorted `x` to its k-th nearest neighbour.
fn kth_neighbour_distances(x: &[f64], k: usize) -> Vec<f64> {
    let n = x.len();
    (0..n)
        .map(|i| {
            let (mut left, mut right) = (i, i + 1);
            let mut last = 0.0;
            for _ in 0..k {
                let dl = if left > 0 {
                    x[i] - x[left - 1]
                } else {
                    f64::INFINITY
                };
                let dr = if right < n {
                    x[right] - x[i]
                } else {
                    f64::INFINITY
                };
                if dl <= dr {
                    last = dl;
                    left -= 1;
                } else {
                    last = dr;
                    right += 1;
                }
            }
            last
        })
        .collect()
}
