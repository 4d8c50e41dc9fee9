use super::{quantile_sorted, sorted_copy, EntropyEstimate};
use crate::error::{Error, Result};
use crate::model::{BinRule, EstimatorKind};

const MAX_BINS: usize = 1 << 22;

/// Plug-in differential entropy of equal-width bins, `-Σ p_j ln(p_j / w)`.
pub fn histogram_entropy(samples: &[f64], rule: BinRule) -> Result<EntropyEstimate> {
    let n = samples.len();
    if n < 10 {
        return Err(Error::param(
            "samples",
            format!("histogram needs N >= 10, got {n}"),
        ));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data(
            "histogram input contains non-finite values".into(),
        ));
    }
    let sorted = sorted_copy(samples);
    let lo = sorted[0];
    let hi = sorted[n - 1];
    let range = hi - lo;

    let bins = match rule {
        BinRule::Count(k) => k,
        BinRule::Sturges => (n as f64).log2().ceil() as usize + 1,
        BinRule::FreedmanDiaconis => {
            let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
            let width = 2.0 * iqr * (n as f64).powf(-1.0 / 3.0);
            if width > 0.0 {
                ((range / width).ceil() as usize).clamp(1, MAX_BINS)
            } else {
                0
            }
        }
    };

    if range <= 0.0 {
        return Ok(EntropyEstimate::degenerate(
            EstimatorKind::Histogram,
            "zero-spread input",
        ));
    }
    if bins == 0 {
        // Zero IQR: a single bin over the whole range.
        let mut est = EntropyEstimate::new(range.ln(), EstimatorKind::Histogram);
        est.degenerate = true;
        est.warning = Some("zero interquartile range; single-bin fallback".into());
        return Ok(est);
    }

    let width = range / bins as f64;
    let mut counts = vec![0usize; bins];
    for &x in &sorted {
        let j = (((x - lo) / width) as usize).min(bins - 1);
        counts[j] += 1;
    }
    let nf = n as f64;
    let value = counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / nf;
            -p * (p / width).ln()
        })
        .sum();
    Ok(EntropyEstimate::new(value, EstimatorKind::Histogram))
}
