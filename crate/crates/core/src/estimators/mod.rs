//! Differential-entropy estimators for latent dimensions and matrix-based
//! Rényi entropy / mutual information.
//!
//! | estimator   | input        | notes                                          |
//! |-------------|--------------|------------------------------------------------|
//! | `histogram` | 1-D          | Freedman–Diaconis bins, width-corrected        |
//! | `knn`       | 1-D          | Kozachenko–Leonenko, k-th neighbour distances  |
//! | `gmm_mc`    | 1-D          | EM mixture + BIC, Monte Carlo cross-entropy    |
//! | `renyi`     | any          | eigenvalues of a trace-normalised RBF Gram     |
//!
//! Degenerate (zero-spread) inputs return [`SENTINEL_ENTROPY`] with the
//! `degenerate` flag set instead of `-inf`.

mod gmm;
mod histogram;
mod knn;
mod renyi;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::{EstimatorConfig, EstimatorKind};
use crate::rng::derive_seed;

pub use gmm::{fit_gmm, gmm_mc_entropy, GaussianMixture1d, GmmFit};
pub use histogram::histogram_entropy;
pub use knn::{digamma, knn_entropy};
pub use renyi::{
    gram_matrix, gram_matrix_with_bandwidth, joint_gram, joint_renyi_entropy, mutual_information,
    pooled_bandwidth, renyi_column_entropies, renyi_entropy, subsample_indices, GramMatrix,
    MutualInformation,
};

/// Stand-in value for the entropy of a zero-spread input, in nats.
pub const SENTINEL_ENTROPY: f64 = -50.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyEstimate {
    /// Entropy in nats.
    pub value: f64,
    pub estimator: EstimatorKind,
    pub degenerate: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

impl EntropyEstimate {
    pub(crate) fn new(value: f64, estimator: EstimatorKind) -> Self {
        EntropyEstimate {
            value,
            estimator,
            degenerate: false,
            warning: None,
        }
    }

    pub(crate) fn degenerate(estimator: EstimatorKind, why: impl Into<String>) -> Self {
        EntropyEstimate {
            value: SENTINEL_ENTROPY,
            estimator,
            degenerate: true,
            warning: Some(why.into()),
        }
    }
}

/// Entropy of a single 1-D sample with the estimator named in `config`.
///
/// `stream` selects the random stream for seeded estimators so that different
/// dimensions of one dump get independent draws.
pub fn estimate_1d(
    samples: &[f64],
    config: &EstimatorConfig,
    stream: u64,
) -> Result<EntropyEstimate> {
    config.validate()?;
    let seed = derive_seed(config.seed, stream);
    match config.estimator {
        EstimatorKind::Histogram => histogram_entropy(samples, config.bins),
        EstimatorKind::Knn => knn_entropy(samples, config.knn_k, seed),
        EstimatorKind::GmmMc => gmm_mc_entropy(samples, config, seed),
        EstimatorKind::Renyi => {
            let mut out = renyi_column_entropies(&[samples], config)?;
            Ok(out.remove(0))
        }
    }
}

/// Per-column entropies, one estimate per column, in column order.
///
/// The Rényi estimator shares one bandwidth across all columns (pooled
/// per-coordinate distances) so that estimates are comparable between
/// dimensions; the other estimators treat each column independently.
pub fn estimate_columns(
    columns: &[&[f64]],
    config: &EstimatorConfig,
) -> Result<Vec<EntropyEstimate>> {
    config.validate()?;
    match config.estimator {
        EstimatorKind::Renyi => renyi_column_entropies(columns, config),
        _ => columns
            .par_iter()
            .enumerate()
            .map(|(i, col)| estimate_1d(col, config, i as u64))
            .collect(),
    }
}

/// Linear-interpolation quantile of already sorted data.
pub(crate) fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

pub(crate) fn sorted_copy(samples: &[f64]) -> Vec<f64> {
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

pub(crate) fn mean_and_variance(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var)
}
