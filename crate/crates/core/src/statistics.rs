//! Moments, closed-form Gaussian KL to the standard-normal prior, entropy power
//! and the second-moment / variance / entropy-power chain.

use std::f64::consts::{E, PI};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::mixed_score;
use crate::error::{Error, Result};
use crate::estimators::{estimate_columns, quantile_sorted, sorted_copy};
use crate::model::{
    DimStats, DimensionStats, EstimatorConfig, EstimatorKind, LatentDump, Quantiles,
};

/// Default relative tolerance of the bound chain.
pub const DEFAULT_CHAIN_TOL: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mean: f64,
    /// Population variance (divisor N).
    pub variance: f64,
    pub second_moment: f64,
}

pub fn moments(samples: &[f64]) -> Moments {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let variance = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let second_moment = samples.iter().map(|x| x * x).sum::<f64>() / n;
    Moments {
        mean,
        variance,
        second_moment,
    }
}

/// Moment fields of every dimension; entropy-derived fields are left empty.
pub fn dim_moments(dump: &LatentDump) -> DimensionStats {
    let dims = (0..dump.d())
        .into_par_iter()
        .map(|d| {
            let m = moments(dump.mu_column(d));
            let s = dump.sigma_sq_column(d).map(moments);
            DimStats {
                dim: d,
                mean_mu: m.mean,
                var_mu: m.variance,
                second_moment_mu: m.second_moment,
                mean_sigma_sq: s.map(|s| s.mean),
                var_sigma_sq: s.map(|s| s.variance),
                ..Default::default()
            }
        })
        .collect();
    DimensionStats {
        reference_estimator: String::new(),
        dims,
    }
}

/// `KL(N(mu, sigma_sq) || N(0, 1)) = (mu² + sigma_sq - ln sigma_sq - 1) / 2`.
pub fn gaussian_kl(mu: f64, sigma_sq: f64) -> Result<f64> {
    if sigma_sq.is_nan() || sigma_sq <= 0.0 {
        return Err(Error::Data(format!(
            "KL needs a positive variance, got {sigma_sq}"
        )));
    }
    // ln_1p keeps precision when sigma_sq is close to 1.
    let s = sigma_sq - 1.0;
    Ok(0.5 * (mu * mu + s - s.ln_1p()))
}

/// Pointwise KL of one datapoint, dimension by dimension.
pub fn gaussian_kl_row(mu_row: &[f64], sigma_sq_row: &[f64]) -> Result<Vec<f64>> {
    if mu_row.len() != sigma_sq_row.len() {
        return Err(Error::Consistency(format!(
            "row lengths differ: {} vs {}",
            mu_row.len(),
            sigma_sq_row.len()
        )));
    }
    mu_row
        .iter()
        .zip(sigma_sq_row)
        .map(|(&m, &s)| gaussian_kl(m, s))
        .collect()
}

/// Pointwise KL over all datapoints of one dimension.
pub fn gaussian_kl_column(mu: &[f64], sigma_sq: &[f64]) -> Result<Vec<f64>> {
    gaussian_kl_row(mu, sigma_sq)
}

/// `e^{2h} / (2 pi e)`: the variance of a Gaussian with entropy `h`.
pub fn entropy_power(h: f64) -> f64 {
    (2.0 * h).exp() / (2.0 * PI * E)
}

/// `E[mu²] >= Var(mu) >= entropy_power` for one dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub dim: usize,
    pub second_moment: f64,
    pub variance: f64,
    pub entropy_power: f64,
    pub chain_holds: bool,
    /// Smaller of the two gaps; negative when an inequality is violated.
    pub slack: f64,
}

impl BoundCheck {
    /// `(variance - entropy_power) / variance`, 0 for a Gaussian.
    pub fn relative_gap(&self) -> f64 {
        if self.variance > 0.0 {
            (self.variance - self.entropy_power) / self.variance
        } else {
            0.0
        }
    }
}

fn bound_check(dim: usize, second_moment: f64, variance: f64, ep: f64, tol: f64) -> BoundCheck {
    let first = second_moment - variance;
    let second = variance - ep;
    // Relative tolerance, with a floor so that an all-zero column passes.
    let abs_tol = tol * variance.max(ep) + 1e-12;
    BoundCheck {
        dim,
        second_moment,
        variance,
        entropy_power: ep,
        chain_holds: first >= -abs_tol && second >= -abs_tol,
        slack: first.min(second),
    }
}

/// Evaluates the chain for every dimension using the entropies of `estimator`.
pub fn check_bound_chain(
    stats: &DimensionStats,
    estimator: &str,
    tol: f64,
) -> Result<Vec<BoundCheck>> {
    if tol.is_nan() || tol < 0.0 {
        return Err(Error::param("tol", "must be >= 0"));
    }
    stats
        .dims
        .iter()
        .map(|d| {
            let h = d.entropy.get(estimator).ok_or_else(|| {
                Error::param(
                    "estimator",
                    format!("no {estimator} entropy for dimension {}", d.dim),
                )
            })?;
            Ok(bound_check(
                d.dim,
                d.second_moment_mu,
                d.var_mu,
                entropy_power(*h),
                tol,
            ))
        })
        .collect()
}

pub(crate) fn quantiles(samples: &[f64]) -> Quantiles {
    let s = sorted_copy(samples);
    Quantiles {
        min: s[0],
        q05: quantile_sorted(&s, 0.05),
        median: quantile_sorted(&s, 0.5),
        q95: quantile_sorted(&s, 0.95),
        max: s[s.len() - 1],
    }
}

/// Full per-dimension statistics: moments, entropies under each requested
/// estimator, entropy power from `reference`, and the KL / mixed-score fields
/// when variances are available.
///
/// Returns the statistics and any estimator warnings.
pub fn analyze_dimensions(
    dump: &LatentDump,
    estimators: &[EstimatorKind],
    reference: EstimatorKind,
    config: &EstimatorConfig,
) -> Result<(DimensionStats, Vec<String>)> {
    let mut stats = dim_moments(dump);
    stats.reference_estimator = reference.name().to_string();
    let mut warnings = Vec::new();

    let mut kinds: Vec<EstimatorKind> = estimators.to_vec();
    kinds.push(reference);
    kinds.sort();
    kinds.dedup();
    let columns: Vec<&[f64]> = (0..dump.d()).map(|d| dump.mu_column(d)).collect();
    for kind in kinds {
        let est = estimate_columns(&columns, &config.clone().with_estimator(kind))?;
        for (d, e) in est.into_iter().enumerate() {
            let slot = &mut stats.dims[d];
            slot.entropy.insert(kind.name().to_string(), e.value);
            if e.degenerate {
                slot.degenerate.push(kind.name().to_string());
            }
            if let Some(w) = e.warning {
                warnings.push(format!("dim {d} ({kind}): {w}"));
            }
        }
    }

    let extra: Vec<(Option<f64>, Option<Quantiles>, Option<f64>)> = (0..dump.d())
        .into_par_iter()
        .map(|d| match dump.sigma_sq_column(d) {
            Some(s) => {
                let kl = gaussian_kl_column(dump.mu_column(d), s)?;
                let mean = kl.iter().sum::<f64>() / kl.len() as f64;
                Ok((Some(mean), Some(quantiles(&kl)), Some(mixed_score(s))))
            }
            None => Ok((None, None, None)),
        })
        .collect::<Result<_>>()?;
    for (slot, (kl_mean, q, mixed)) in stats.dims.iter_mut().zip(extra) {
        slot.entropy_power = slot
            .entropy
            .get(reference.name())
            .map(|&h| entropy_power(h));
        slot.kl_mean = kl_mean;
        slot.kl_pointwise_quantiles = q;
        slot.mixed_score = mixed;
    }
    Ok((stats, warnings))
}
