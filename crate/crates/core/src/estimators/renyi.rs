//! Matrix-based Rényi α-entropy on trace-normalised Gaussian Gram matrices,
//! joint entropy via Hadamard products and mutual information via the
//! Shannon decomposition `I = S(A) + S(B) - S(A, B)`.

use nalgebra::DMatrix;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{mean_and_variance, EntropyEstimate};
use crate::error::{Error, Result};
use crate::model::{column, BandwidthRule, EstimatorConfig, EstimatorKind};
use crate::rng::{derive_seed, seeded};

/// Upper bound on the number of pairwise distances pooled for the median rule.
const MAX_PAIRS: usize = 250_000;
/// Eigenvalues below `-PSD_TOL` mean the Gram matrix is not PSD.
const PSD_TOL: f64 = 1e-9;

/// Trace-normalised kernel Gram matrix over `n` samples.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    entries: DMatrix<f64>,
    bandwidth: Option<f64>,
    degenerate: bool,
}

impl GramMatrix {
    /// Wraps a user-supplied normalised matrix after checking symmetry and unit trace.
    pub fn from_entries(entries: DMatrix<f64>) -> Result<Self> {
        if !entries.is_square() || entries.nrows() == 0 {
            return Err(Error::Consistency(format!(
                "Gram matrix must be square and non-empty, got {}x{}",
                entries.nrows(),
                entries.ncols()
            )));
        }
        let n = entries.nrows();
        for i in 0..n {
            for j in (i + 1)..n {
                if (entries[(i, j)] - entries[(j, i)]).abs() > 1e-12 {
                    return Err(Error::Data(format!(
                        "Gram matrix not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        let trace = entries.trace();
        if (trace - 1.0).abs() > 1e-9 {
            return Err(Error::Data(format!("Gram trace is {trace}, expected 1")));
        }
        Ok(GramMatrix {
            entries,
            bandwidth: None,
            degenerate: false,
        })
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn n(&self) -> usize {
        self.entries.nrows()
    }

    /// Kernel bandwidth, when the matrix was built from samples.
    pub fn bandwidth(&self) -> Option<f64> {
        self.bandwidth
    }

    /// True when the bandwidth collapsed to 0 and the matrix is the all-equal `J/N`.
    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        self.entries
            .clone()
            .symmetric_eigenvalues()
            .iter()
            .copied()
            .collect()
    }
}

fn check_samples(samples: &DMatrix<f64>) -> Result<()> {
    if samples.nrows() < 2 {
        return Err(Error::param(
            "samples",
            "a Gram matrix needs N >= 2 samples",
        ));
    }
    if samples.ncols() == 0 {
        return Err(Error::param("samples", "samples have no coordinates"));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("Gram samples contain non-finite values".into()));
    }
    Ok(())
}

/// Bandwidth from `rule` over the pooled per-coordinate pairwise distances of
/// every slice in `coords`. Each slice is one coordinate of one sample set.
///
/// Returns 0 when every coordinate is constant.
pub fn pooled_bandwidth(coords: &[&[f64]], rule: BandwidthRule, seed: u64) -> f64 {
    match rule {
        BandwidthRule::Fixed(b) => b,
        BandwidthRule::Silverman => silverman(coords),
        BandwidthRule::Median => {
            let m = pooled_median_distance(coords, seed);
            if m > 0.0 {
                m
            } else {
                silverman(coords)
            }
        }
    }
}

fn silverman(coords: &[&[f64]]) -> f64 {
    let used: Vec<&&[f64]> = coords.iter().filter(|c| !c.is_empty()).collect();
    if used.is_empty() {
        return 0.0;
    }
    // Exact check: a constant column can show rounding-level variance.
    let var = used
        .iter()
        .map(|c| {
            if c.iter().all(|v| *v == c[0]) {
                0.0
            } else {
                mean_and_variance(c).1
            }
        })
        .sum::<f64>()
        / used.len() as f64;
    let n = used.iter().map(|c| c.len()).sum::<usize>() as f64 / used.len() as f64;
    1.06 * var.sqrt() * n.powf(-0.2)
}

fn pooled_median_distance(coords: &[&[f64]], seed: u64) -> f64 {
    let total: usize = coords
        .iter()
        .map(|c| c.len() * c.len().saturating_sub(1) / 2)
        .sum();
    if total == 0 {
        return 0.0;
    }
    let mut dists = Vec::with_capacity(total.min(MAX_PAIRS));
    if total <= MAX_PAIRS {
        for c in coords {
            for i in 0..c.len() {
                for j in (i + 1)..c.len() {
                    dists.push((c[i] - c[j]).abs());
                }
            }
        }
    } else {
        let mut rng = seeded(derive_seed(seed, 0x6d65_6469));
        let share = MAX_PAIRS.div_ceil(coords.len());
        for c in coords.iter().filter(|c| c.len() >= 2) {
            for _ in 0..share {
                let i = rng.random_range(0..c.len());
                let mut j = rng.random_range(0..c.len() - 1);
                if j >= i {
                    j += 1;
                }
                dists.push((c[i] - c[j]).abs());
            }
        }
    }
    let mid = dists.len() / 2;
    let (_, upper, _) = dists.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *upper;
    if dists.len() % 2 == 1 {
        upper
    } else {
        let lower = dists[..mid]
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower + upper)
    }
}

/// Gram matrix of `samples` (rows are samples) with the bandwidth chosen by `rule`
/// over the samples' own coordinates.
pub fn gram_matrix(samples: &DMatrix<f64>, rule: BandwidthRule) -> Result<GramMatrix> {
    check_samples(samples)?;
    let coords: Vec<&[f64]> = (0..samples.ncols()).map(|c| column(samples, c)).collect();
    let bw = pooled_bandwidth(&coords, rule, 0);
    gram_matrix_with_bandwidth(samples, bw)
}

/// Gram matrix with an explicit bandwidth. A zero bandwidth yields the flagged
/// all-equal matrix `J/N`.
pub fn gram_matrix_with_bandwidth(samples: &DMatrix<f64>, bandwidth: f64) -> Result<GramMatrix> {
    check_samples(samples)?;
    if !(bandwidth >= 0.0 && bandwidth.is_finite()) {
        return Err(Error::param(
            "bandwidth",
            format!("{bandwidth} is not >= 0"),
        ));
    }
    let (n, m) = samples.shape();
    let inv_n = 1.0 / n as f64;
    if bandwidth == 0.0 {
        return Ok(GramMatrix {
            entries: DMatrix::from_element(n, n, inv_n),
            bandwidth: Some(0.0),
            degenerate: true,
        });
    }
    let scale = -0.5 / (bandwidth * bandwidth);
    let mut entries = DMatrix::zeros(n, n);
    for i in 0..n {
        entries[(i, i)] = inv_n;
        for j in (i + 1)..n {
            let d2: f64 = (0..m)
                .map(|c| (samples[(i, c)] - samples[(j, c)]).powi(2))
                .sum();
            let k = (d2 * scale).exp() * inv_n;
            entries[(i, j)] = k;
            entries[(j, i)] = k;
        }
    }
    Ok(GramMatrix {
        entries,
        bandwidth: Some(bandwidth),
        degenerate: false,
    })
}

fn check_renyi_alpha(alpha: f64) -> Result<()> {
    if alpha == 1.0 {
        return Err(Error::param(
            "alpha",
            "alpha = 1 is the Shannon limit; use 1.01 instead",
        ));
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::param("alpha", format!("{alpha} must be > 0")));
    }
    Ok(())
}

/// `S_α(A) = log(Σ λ_i^α) / (1 - α)` over the eigenvalues of `gram`.
pub fn renyi_entropy(gram: &GramMatrix, alpha: f64) -> Result<EntropyEstimate> {
    check_renyi_alpha(alpha)?;
    let n = gram.n();
    if gram.degenerate {
        let mut est = EntropyEstimate::new(0.0, EstimatorKind::Renyi);
        est.degenerate = true;
        return Ok(est);
    }
    let eig = gram.eigenvalues();
    let min = eig.iter().copied().fold(f64::INFINITY, f64::min);
    if min < -PSD_TOL {
        return Err(Error::Numerical(format!(
            "Gram matrix is not positive semidefinite (eigenvalue {min:e})"
        )));
    }
    let power_sum: f64 = eig
        .iter()
        .filter(|&&l| l > 0.0)
        .map(|l| l.powf(alpha))
        .sum();
    let value = power_sum.ln() / (1.0 - alpha);
    Ok(EntropyEstimate::new(
        value.clamp(0.0, (n as f64).ln()),
        EstimatorKind::Renyi,
    ))
}

/// Trace-renormalised Hadamard product `A∘B / tr(A∘B)`.
pub fn joint_gram(a: &GramMatrix, b: &GramMatrix) -> Result<GramMatrix> {
    if a.n() != b.n() {
        return Err(Error::Consistency(format!(
            "joint Gram needs matching sample counts, got {} and {}",
            a.n(),
            b.n()
        )));
    }
    let mut entries = a.entries.component_mul(&b.entries);
    let trace = entries.trace();
    entries /= trace;
    Ok(GramMatrix {
        entries,
        bandwidth: None,
        degenerate: a.degenerate && b.degenerate,
    })
}

pub fn joint_renyi_entropy(a: &GramMatrix, b: &GramMatrix, alpha: f64) -> Result<EntropyEstimate> {
    check_renyi_alpha(alpha)?;
    if b.degenerate {
        return renyi_entropy(a, alpha);
    }
    if a.degenerate {
        return renyi_entropy(b, alpha);
    }
    renyi_entropy(&joint_gram(a, b)?, alpha)
}

/// Mutual information estimate and the three entropies it is built from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MutualInformation {
    /// `h_x + h_z - h_joint`; not clamped, may be slightly negative.
    pub value: f64,
    pub h_x: f64,
    pub h_z: f64,
    pub h_joint: f64,
    pub degenerate: bool,
}

/// Sorted uniform subsample of `0..n` of size `cap` (identity when `n <= cap`).
pub fn subsample_indices(n: usize, cap: usize, seed: u64) -> Vec<usize> {
    if n <= cap {
        return (0..n).collect();
    }
    let mut rng = seeded(seed);
    let mut idx = rand::seq::index::sample(&mut rng, n, cap).into_vec();
    idx.sort_unstable();
    idx
}

fn select_rows(m: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    if rows.len() == m.nrows() {
        return m.clone();
    }
    DMatrix::from_fn(rows.len(), m.ncols(), |r, c| m[(rows[r], c)])
}

fn own_gram(samples: &DMatrix<f64>, config: &EstimatorConfig, stream: u64) -> Result<GramMatrix> {
    check_samples(samples)?;
    let coords: Vec<&[f64]> = (0..samples.ncols()).map(|c| column(samples, c)).collect();
    let bw = pooled_bandwidth(&coords, config.bandwidth, derive_seed(config.seed, stream));
    gram_matrix_with_bandwidth(samples, bw)
}

/// `I_α(X; Z)` for paired samples `x` (N×m) and `z` (N×k). Each variable gets
/// its own bandwidth from `config.bandwidth`; both are subsampled with the same
/// row indices when N exceeds `config.gram_cap`.
pub fn mutual_information(
    x: &DMatrix<f64>,
    z: &DMatrix<f64>,
    config: &EstimatorConfig,
) -> Result<MutualInformation> {
    config.validate()?;
    if x.nrows() != z.nrows() {
        return Err(Error::Consistency(format!(
            "mutual information needs paired samples, got N = {} and {}",
            x.nrows(),
            z.nrows()
        )));
    }
    let rows = subsample_indices(x.nrows(), config.gram_cap, config.seed);
    let x = select_rows(x, &rows);
    let z = select_rows(z, &rows);
    let a = own_gram(&x, config, 1)?;
    let b = own_gram(&z, config, 2)?;
    let h_x = renyi_entropy(&a, config.alpha)?.value;
    let h_z = renyi_entropy(&b, config.alpha)?.value;
    if a.degenerate || b.degenerate {
        // A constant variable shares no information; the joint equals the other marginal.
        return Ok(MutualInformation {
            value: 0.0,
            h_x,
            h_z,
            h_joint: h_x.max(h_z),
            degenerate: true,
        });
    }
    let h_joint = joint_renyi_entropy(&a, &b, config.alpha)?.value;
    Ok(MutualInformation {
        value: h_x + h_z - h_joint,
        h_x,
        h_z,
        h_joint,
        degenerate: false,
    })
}

/// Rényi entropy of every column with one shared, pooled bandwidth.
pub fn renyi_column_entropies(
    columns: &[&[f64]],
    config: &EstimatorConfig,
) -> Result<Vec<EntropyEstimate>> {
    config.validate()?;
    let subsampled: Vec<Vec<f64>> = columns
        .iter()
        .enumerate()
        .map(|(i, c)| {
            if c.len() < 2 {
                return Err(Error::param(
                    "samples",
                    "a Gram matrix needs N >= 2 samples",
                ));
            }
            if c.iter().any(|v| !v.is_finite()) {
                return Err(Error::Data(format!(
                    "column {i} contains non-finite values"
                )));
            }
            // Equal-length columns share one row subsample so rows stay paired.
            let stream = if c.len() == columns[0].len() {
                0
            } else {
                i as u64 + 1
            };
            let rows =
                subsample_indices(c.len(), config.gram_cap, derive_seed(config.seed, stream));
            Ok(rows.into_iter().map(|r| c[r]).collect())
        })
        .collect::<Result<_>>()?;
    let coords: Vec<&[f64]> = subsampled.iter().map(Vec::as_slice).collect();
    let bw = pooled_bandwidth(&coords, config.bandwidth, config.seed);
    subsampled
        .par_iter()
        .map(|c| {
            let m = DMatrix::from_column_slice(c.len(), 1, c);
            let gram = gram_matrix_with_bandwidth(&m, bw)?;
            renyi_entropy(&gram, config.alpha)
        })
        .collect()
}
