//! Shared data types: the latent dump, per-dimension statistics, classification
//! results and estimator configuration.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Provenance attached to a dump.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DumpMeta {
    pub source: String,
    pub seed: Option<u64>,
    pub hyper_params: BTreeMap<String, serde_json::Value>,
}

/// Mean (and optionally variance) representations of an encoder over a dataset.
///
/// `mu` and `sigma_sq` are `N x d` with one row per datapoint. Fields are public
/// so that callers can assemble dumps freely; [`crate::dump::validate`] reports
/// every broken invariant.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentDump {
    pub mu: DMatrix<f64>,
    pub sigma_sq: Option<DMatrix<f64>>,
    pub labels: Option<Vec<i64>>,
    pub meta: DumpMeta,
}

impl LatentDump {
    pub fn new(mu: DMatrix<f64>) -> Self {
        LatentDump {
            mu,
            sigma_sq: None,
            labels: None,
            meta: DumpMeta::default(),
        }
    }

    /// Builds a dump from per-dimension columns of equal length.
    pub fn from_columns(columns: &[Vec<f64>]) -> Result<Self> {
        Ok(LatentDump::new(matrix_from_columns(columns)?))
    }

    pub fn with_sigma_sq(mut self, sigma_sq: DMatrix<f64>) -> Self {
        self.sigma_sq = Some(sigma_sq);
        self
    }

    pub fn with_labels(mut self, labels: Vec<i64>) -> Self {
        self.labels = Some(labels);
        self
    }

    pub fn with_meta(mut self, meta: DumpMeta) -> Self {
        self.meta = meta;
        self
    }

    /// Number of datapoints.
    pub fn n(&self) -> usize {
        self.mu.nrows()
    }

    /// Number of latent dimensions.
    pub fn d(&self) -> usize {
        self.mu.ncols()
    }

    pub fn has_sigma(&self) -> bool {
        self.sigma_sq.is_some()
    }

    pub fn mu_column(&self, dim: usize) -> &[f64] {
        column(&self.mu, dim)
    }

    pub fn sigma_sq_column(&self, dim: usize) -> Option<&[f64]> {
        self.sigma_sq.as_ref().map(|s| column(s, dim))
    }
}

/// Contiguous view of one column of a column-major matrix.
pub fn column(m: &DMatrix<f64>, dim: usize) -> &[f64] {
    let n = m.nrows();
    &m.as_slice()[dim * n..(dim + 1) * n]
}

pub fn matrix_from_columns(columns: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let n = columns.first().map_or(0, Vec::len);
    if let Some(bad) = columns.iter().position(|c| c.len() != n) {
        return Err(Error::Consistency(format!(
            "column {bad} has {} rows, expected {n}",
            columns[bad].len()
        )));
    }
    Ok(DMatrix::from_iterator(
        n,
        columns.len(),
        columns.iter().flatten().copied(),
    ))
}

/// Summary quantiles of a per-datapoint quantity: (min, q05, median, q95, max).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quantiles {
    pub min: f64,
    pub q05: f64,
    pub median: f64,
    pub q95: f64,
    pub max: f64,
}

/// Statistics for a single latent dimension.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DimStats {
    pub dim: usize,
    pub mean_mu: f64,
    pub var_mu: f64,
    pub second_moment_mu: f64,
    /// Differential entropy of the mean representation, keyed by estimator name.
    pub entropy: BTreeMap<String, f64>,
    /// Estimators that hit a degenerate input and returned the sentinel.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub degenerate: Vec<String>,
    pub entropy_power: Option<f64>,
    pub mean_sigma_sq: Option<f64>,
    pub var_sigma_sq: Option<f64>,
    pub kl_mean: Option<f64>,
    pub kl_pointwise_quantiles: Option<Quantiles>,
    pub mixed_score: Option<f64>,
}

/// Per-dimension statistics for a whole dump.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DimensionStats {
    /// Estimator whose entropy feeds `entropy_power`.
    pub reference_estimator: String,
    pub dims: Vec<DimStats>,
}

impl DimensionStats {
    /// Entropies for one estimator, in dimension order.
    pub fn entropies(&self, estimator: &str) -> Option<Vec<f64>> {
        self.dims
            .iter()
            .map(|d| d.entropy.get(estimator).copied())
            .collect()
    }
}

/// Category assigned to a latent dimension under one criterion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Active,
    Passive,
    Mixed,
    Unclassified,
}

impl Label {
    pub const ALL: [Label; 4] = [
        Label::Active,
        Label::Passive,
        Label::Mixed,
        Label::Unclassified,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Active => "active",
            Label::Passive => "passive",
            Label::Mixed => "mixed",
            Label::Unclassified => "unclassified",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Label::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| Error::param("label", format!("unknown label {s:?}")))
    }
}

/// Labels of one dimension under every criterion, plus the numbers behind them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimClassification {
    pub dim: usize,
    pub entropy_label: Label,
    pub bonheme_label: Label,
    pub kl_label: Label,
    pub scores: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub tau_used: f64,
    pub separation_score: f64,
    pub dims: Vec<DimClassification>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

/// Names of the available entropy estimators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Histogram,
    Knn,
    GmmMc,
    Renyi,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 4] = [
        EstimatorKind::Histogram,
        EstimatorKind::Knn,
        EstimatorKind::GmmMc,
        EstimatorKind::Renyi,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::Histogram => "histogram",
            EstimatorKind::Knn => "knn",
            EstimatorKind::GmmMc => "gmm_mc",
            EstimatorKind::Renyi => "renyi",
        }
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EstimatorKind::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| {
                Error::param(
                    "estimator",
                    format!("unknown estimator {s:?} (expected histogram, knn, gmm_mc or renyi)"),
                )
            })
    }
}

/// Histogram bin-width rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinRule {
    FreedmanDiaconis,
    Sturges,
    Count(usize),
}

/// Kernel bandwidth rule for Gram matrices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandwidthRule {
    /// Median of the pooled per-coordinate pairwise distances; Silverman when that is 0.
    Median,
    Silverman,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub estimator: EstimatorKind,
    pub bins: BinRule,
    pub knn_k: usize,
    pub gmm_max_components: usize,
    pub gmm_max_iter: usize,
    pub gmm_tol: f64,
    pub mc_samples: usize,
    pub alpha: f64,
    pub bandwidth: BandwidthRule,
    /// Gram matrices are built on at most this many (subsampled) points.
    pub gram_cap: usize,
    pub seed: u64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            estimator: EstimatorKind::Knn,
            bins: BinRule::FreedmanDiaconis,
            knn_k: 10,
            gmm_max_components: 4,
            gmm_max_iter: 100,
            gmm_tol: 1e-6,
            mc_samples: 20_000,
            alpha: 1.01,
            bandwidth: BandwidthRule::Median,
            gram_cap: 2000,
            seed: 0,
        }
    }
}

impl EstimatorConfig {
    pub fn with_estimator(mut self, estimator: EstimatorKind) -> Self {
        self.estimator = estimator;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        check_alpha(self.alpha)?;
        if self.knn_k == 0 {
            return Err(Error::param("k", "must be a positive integer"));
        }
        if self.gmm_max_components == 0 {
            return Err(Error::param("gmm_max_components", "must be >= 1"));
        }
        if self.mc_samples == 0 {
            return Err(Error::param("mc_samples", "must be >= 1"));
        }
        if self.gram_cap < 2 {
            return Err(Error::param("gram_cap", "must be >= 2"));
        }
        if let BandwidthRule::Fixed(b) = self.bandwidth {
            if !(b.is_finite() && b > 0.0) {
                return Err(Error::param("bandwidth", "fixed bandwidth must be > 0"));
            }
        }
        if let BinRule::Count(0) = self.bins {
            return Err(Error::param("bins", "bin count must be >= 1"));
        }
        Ok(())
    }
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if alpha == 1.0 {
        return Err(Error::param(
            "alpha",
            "alpha = 1 is the Shannon limit; use 1.01 instead",
        ));
    }
    if !(alpha > 0.0 && alpha <= 2.0) {
        return Err(Error::param("alpha", format!("{alpha} is outside (0, 2]")));
    }
    Ok(())
}
