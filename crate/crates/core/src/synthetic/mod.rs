//! Ground-truth generators: the continuous spike-and-slab model and planted
//! active/passive/mixed dumps.

pub mod oracle;

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::estimators::{estimate_1d, renyi_column_entropies};
use crate::model::{
    matrix_from_columns, DumpMeta, EstimatorConfig, EstimatorKind, Label, LatentDump,
};
use crate::rng::{derive_seed, stream};
use oracle::{gaussian_entropy, gaussian_mixture_entropy};

/// Centre of the variance representation of an active dimension.
pub const ACTIVE_SIGMA_SQ: f64 = 0.01;
/// Variance of the mean representation of a passive dimension.
pub const PASSIVE_MU_VAR: f64 = 0.001;
/// Log-space spread of planted variance representations.
pub const SIGMA_LOG_SPREAD: f64 = 0.05;

// Stream indices for the non-dimension draws of a planted dump.
const LAYOUT_STREAM: u64 = u64::MAX;
const WEIGHT_STREAM: u64 = u64::MAX - 1;
const NOISE_STREAM: u64 = u64::MAX - 2;

/// `z ~ (1 - pi) N(0, epsilon²) + pi N(0, slab_var)` with `slab_var` chosen so
/// that `Var(z) = target_var`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpikeSlabSpec {
    pub pi: f64,
    pub epsilon: f64,
    pub target_var: f64,
    pub n: usize,
    pub seed: u64,
}

impl Default for SpikeSlabSpec {
    fn default() -> Self {
        SpikeSlabSpec {
            pi: 0.5,
            epsilon: 0.05,
            target_var: 1.0,
            n: 100_000,
            seed: 0,
        }
    }
}

impl SpikeSlabSpec {
    pub fn with_pi(self, pi: f64) -> Self {
        SpikeSlabSpec { pi, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.pi > 0.0 && self.pi <= 1.0) {
            return Err(Error::param("pi", format!("{} is outside (0, 1]", self.pi)));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::param("epsilon", "spike std must be > 0"));
        }
        if self.target_var <= (1.0 - self.pi) * self.epsilon * self.epsilon
            || !self.target_var.is_finite()
        {
            return Err(Error::param(
                "target_var",
                format!(
                    "{} must exceed (1 - pi) * epsilon² = {}",
                    self.target_var,
                    (1.0 - self.pi) * self.epsilon * self.epsilon
                ),
            ));
        }
        if self.n < 2 {
            return Err(Error::param("n", "need at least 2 samples"));
        }
        Ok(())
    }

    /// Slab variance `(V - (1 - pi) epsilon²) / pi`.
    pub fn slab_variance(&self) -> f64 {
        (self.target_var - (1.0 - self.pi) * self.epsilon * self.epsilon) / self.pi
    }

    /// Exact differential entropy of the mixture by quadrature.
    pub fn oracle_entropy(&self) -> f64 {
        gaussian_mixture_entropy(&[
            (1.0 - self.pi, 0.0, self.epsilon * self.epsilon),
            (self.pi, 0.0, self.slab_variance()),
        ])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpikeSlabSample {
    pub samples: Vec<f64>,
    pub slab_var: f64,
    /// Whether each sample was drawn from the slab.
    pub from_slab: Vec<bool>,
}

pub fn spike_slab_sample(spec: &SpikeSlabSpec) -> Result<SpikeSlabSample> {
    spec.validate()?;
    let slab_var = spec.slab_variance();
    let slab_sd = slab_var.sqrt();
    let mut rng = stream(spec.seed, 0);
    let mut samples = Vec::with_capacity(spec.n);
    let mut from_slab = Vec::with_capacity(spec.n);
    for _ in 0..spec.n {
        let slab = rng.random::<f64>() < spec.pi;
        let z: f64 = StandardNormal.sample(&mut rng);
        samples.push(z * if slab { slab_sd } else { spec.epsilon });
        from_slab.push(slab);
    }
    Ok(SpikeSlabSample {
        samples,
        slab_var,
        from_slab,
    })
}

/// One-column dump of a spike-and-slab sample; the derived slab variance is
/// recorded in the metadata.
pub fn spike_slab_dump(spec: &SpikeSlabSpec) -> Result<LatentDump> {
    let sample = spike_slab_sample(spec)?;
    let mut hyper = BTreeMap::new();
    hyper.insert("pi".to_string(), json!(spec.pi));
    hyper.insert("epsilon".to_string(), json!(spec.epsilon));
    hyper.insert("target_var".to_string(), json!(spec.target_var));
    hyper.insert("slab_var".to_string(), json!(sample.slab_var));
    Ok(
        LatentDump::new(DMatrix::from_vec(spec.n, 1, sample.samples)).with_meta(DumpMeta {
            source: "synthetic:spike_slab".into(),
            seed: Some(spec.seed),
            hyper_params: hyper,
        }),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub pi: f64,
    pub slab_var: f64,
    pub sample_variance: f64,
    pub oracle_entropy: f64,
    /// Estimated entropy keyed by estimator name.
    pub entropies: BTreeMap<String, f64>,
}

/// Entropy of the spike-and-slab model over a grid of mixture weights.
///
/// Each grid point gets its own random stream. Rényi estimates share one
/// bandwidth pooled over all grid points so they are comparable along the grid.
pub fn spike_slab_sweep(
    pi_grid: &[f64],
    base: &SpikeSlabSpec,
    estimators: &[EstimatorKind],
    config: &EstimatorConfig,
) -> Result<Vec<SweepPoint>> {
    let samples: Vec<(SpikeSlabSpec, SpikeSlabSample)> = pi_grid
        .iter()
        .enumerate()
        .map(|(i, &pi)| {
            let spec = SpikeSlabSpec {
                pi,
                seed: derive_seed(base.seed, i as u64),
                ..*base
            };
            spike_slab_sample(&spec).map(|s| (spec, s))
        })
        .collect::<Result<_>>()?;

    let renyi = if estimators.contains(&EstimatorKind::Renyi) {
        let cols: Vec<&[f64]> = samples.iter().map(|(_, s)| s.samples.as_slice()).collect();
        Some(renyi_column_entropies(
            &cols,
            &config.clone().with_estimator(EstimatorKind::Renyi),
        )?)
    } else {
        None
    };

    samples
        .par_iter()
        .enumerate()
        .map(|(i, (spec, sample))| {
            let mut entropies = BTreeMap::new();
            for &e in estimators {
                let value = match (e, &renyi) {
                    (EstimatorKind::Renyi, Some(r)) => r[i].value,
                    _ => {
                        estimate_1d(&sample.samples, &config.clone().with_estimator(e), i as u64)?
                            .value
                    }
                };
                entropies.insert(e.name().to_string(), value);
            }
            let n = sample.samples.len() as f64;
            let mean = sample.samples.iter().sum::<f64>() / n;
            let sample_variance = sample
                .samples
                .iter()
                .map(|x| (x - mean).powi(2))
                .sum::<f64>()
                / n;
            Ok(SweepPoint {
                pi: spec.pi,
                slab_var: sample.slab_var,
                sample_variance,
                oracle_entropy: spec.oracle_entropy(),
                entropies,
            })
        })
        .collect()
}

/// Evenly spaced grid `start, start + step, ...` up to `stop` (inclusive within 1e-9).
pub fn pi_grid(start: f64, stop: f64, step: f64) -> Result<Vec<f64>> {
    if step.is_nan() || step <= 0.0 {
        return Err(Error::param("pi_step", "must be > 0"));
    }
    let count = ((stop - start) / step + 1e-9).floor();
    if count < 0.0 {
        return Err(Error::param("pi_max", "must be >= pi_min"));
    }
    // Rounded to 12 decimals so 0.1 + 2 * 0.1 prints as 0.3.
    Ok((0..=count as usize)
        .map(|i| ((start + i as f64 * step) * 1e12).round() / 1e12)
        .collect())
}

/// Layout and distribution parameters of a planted polarised-regime dump.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantedSpec {
    pub n_active: usize,
    pub n_passive: usize,
    pub n_mixed: usize,
    pub n: usize,
    /// Standard deviation of an active mean representation.
    pub active_scale: f64,
    /// Probability that a mixed dimension is in its passive state for a datapoint.
    pub mixed_p: f64,
    pub n_classes: usize,
    pub label_noise: f64,
    pub seed: u64,
}

impl Default for PlantedSpec {
    fn default() -> Self {
        PlantedSpec {
            n_active: 8,
            n_passive: 24,
            n_mixed: 0,
            n: 5000,
            active_scale: 2.0,
            mixed_p: 0.5,
            n_classes: 2,
            label_noise: 0.05,
            seed: 0,
        }
    }
}

impl PlantedSpec {
    pub fn d(&self) -> usize {
        self.n_active + self.n_passive + self.n_mixed
    }

    pub fn validate(&self) -> Result<()> {
        if self.d() == 0 {
            return Err(Error::param("dims", "need at least one dimension"));
        }
        if self.n < 100 {
            return Err(Error::param("n", format!("need n >= 100, got {}", self.n)));
        }
        if !(self.active_scale > 0.0 && self.active_scale.is_finite()) {
            return Err(Error::param("active_scale", "must be > 0"));
        }
        if !(self.mixed_p > 0.0 && self.mixed_p < 1.0) {
            return Err(Error::param("mixed_p", "must lie in (0, 1)"));
        }
        if self.n_classes < 2 {
            return Err(Error::param("n_classes", "need at least 2 categories"));
        }
        if !(0.0..1.0).contains(&self.label_noise) {
            return Err(Error::param("label_noise", "must lie in [0, 1)"));
        }
        Ok(())
    }

    /// Exact entropy of each planted kind's mean representation.
    pub fn oracle_entropy(&self, kind: Label) -> f64 {
        let active_var = self.active_scale * self.active_scale;
        match kind {
            Label::Active => gaussian_entropy(active_var),
            Label::Passive => gaussian_entropy(PASSIVE_MU_VAR),
            _ => gaussian_mixture_entropy(&[
                (self.mixed_p, 0.0, PASSIVE_MU_VAR),
                (1.0 - self.mixed_p, 0.0, active_var),
            ]),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedDump {
    pub dump: LatentDump,
    /// Planted kind of each dimension.
    pub ground_truth: Vec<Label>,
    /// Exact entropy of each dimension's mean-representation distribution.
    pub oracle_entropy: Vec<f64>,
}

fn lognormal_around(centre: f64, rng: &mut impl rand::Rng) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    centre * (SIGMA_LOG_SPREAD * z).exp()
}

fn planted_column(kind: Label, spec: &PlantedSpec, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = crate::rng::seeded(seed);
    let active = Normal::new(0.0, spec.active_scale).expect("valid scale");
    let passive = Normal::new(0.0, PASSIVE_MU_VAR.sqrt()).expect("valid scale");
    let mut mu = Vec::with_capacity(spec.n);
    let mut sigma_sq = Vec::with_capacity(spec.n);
    for _ in 0..spec.n {
        let passive_state = match kind {
            Label::Active => false,
            Label::Passive => true,
            _ => rng.random::<f64>() < spec.mixed_p,
        };
        if passive_state {
            mu.push(passive.sample(&mut rng));
            sigma_sq.push(lognormal_around(1.0, &mut rng));
        } else {
            mu.push(active.sample(&mut rng));
            sigma_sq.push(lognormal_around(ACTIVE_SIGMA_SQ, &mut rng));
        }
    }
    (mu, sigma_sq)
}

/// Generates a dump whose dimensions are planted active, passive or mixed, in a
/// seeded random order, with downstream labels from a linear rule on the
/// active dimensions.
pub fn planted_regime_dump(spec: &PlantedSpec) -> Result<PlantedDump> {
    spec.validate()?;
    let mut ground_truth: Vec<Label> = std::iter::repeat_n(Label::Active, spec.n_active)
        .chain(std::iter::repeat_n(Label::Passive, spec.n_passive))
        .chain(std::iter::repeat_n(Label::Mixed, spec.n_mixed))
        .collect();
    ground_truth.shuffle(&mut stream(spec.seed, LAYOUT_STREAM));

    let columns: Vec<(Vec<f64>, Vec<f64>)> = ground_truth
        .par_iter()
        .enumerate()
        .map(|(d, &kind)| planted_column(kind, spec, derive_seed(spec.seed, d as u64)))
        .collect();
    let (mu_cols, sigma_cols): (Vec<Vec<f64>>, Vec<Vec<f64>>) = columns.into_iter().unzip();
    let labels = planted_labels(spec, &ground_truth, &mu_cols);

    let mut hyper = BTreeMap::new();
    hyper.insert("n_active".to_string(), json!(spec.n_active));
    hyper.insert("n_passive".to_string(), json!(spec.n_passive));
    hyper.insert("n_mixed".to_string(), json!(spec.n_mixed));
    hyper.insert("active_scale".to_string(), json!(spec.active_scale));
    hyper.insert("mixed_p".to_string(), json!(spec.mixed_p));
    hyper.insert("n_classes".to_string(), json!(spec.n_classes));
    hyper.insert("label_noise".to_string(), json!(spec.label_noise));
    let dump = LatentDump::new(matrix_from_columns(&mu_cols)?)
        .with_sigma_sq(matrix_from_columns(&sigma_cols)?)
        .with_labels(labels)
        .with_meta(DumpMeta {
            source: "synthetic:planted".into(),
            seed: Some(spec.seed),
            hyper_params: hyper,
        });
    let oracle_entropy = ground_truth
        .iter()
        .map(|&k| spec.oracle_entropy(k))
        .collect();
    Ok(PlantedDump {
        dump,
        ground_truth,
        oracle_entropy,
    })
}

/// Categories from quantile thresholds on a random projection of the active
/// dimensions, then a `label_noise` fraction reassigned to another category.
fn planted_labels(spec: &PlantedSpec, truth: &[Label], mu_cols: &[Vec<f64>]) -> Vec<i64> {
    let k = spec.n_classes;
    let mut rng = stream(spec.seed, WEIGHT_STREAM);
    let mut score = vec![0.0; spec.n];
    for (col, _) in mu_cols
        .iter()
        .zip(truth)
        .filter(|(_, &t)| t == Label::Active)
    {
        let w: f64 = StandardNormal.sample(&mut rng);
        for (s, x) in score.iter_mut().zip(col) {
            *s += w * x;
        }
    }
    let mut sorted = score.clone();
    sorted.sort_by(f64::total_cmp);
    let cuts: Vec<f64> = (1..k).map(|c| sorted[c * spec.n / k]).collect();
    let mut noise = stream(spec.seed, NOISE_STREAM);
    score
        .iter()
        .map(|s| {
            let mut label = cuts.iter().filter(|&&c| *s >= c).count();
            if spec.n_active == 0 {
                label = noise.random_range(0..k);
            } else if noise.random::<f64>() < spec.label_noise {
                label = (label + noise.random_range(1..k)) % k;
            }
            label as i64
        })
        .collect()
}

/// Dump of independent zero-mean Gaussian columns with the given standard deviations.
pub fn gaussian_scale_dump(scales: &[f64], n: usize, seed: u64) -> Result<LatentDump> {
    if scales.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
        return Err(Error::param("scales", "every scale must be > 0"));
    }
    let cols: Vec<Vec<f64>> = scales
        .iter()
        .enumerate()
        .map(|(d, &s)| {
            let mut rng = stream(seed, d as u64);
            (0..n)
                .map(|_| s * Distribution::<f64>::sample(&StandardNormal, &mut rng))
                .collect()
        })
        .collect();
    let mut dump = LatentDump::from_columns(&cols)?;
    dump.meta = DumpMeta {
        source: "synthetic:gaussian_scales".into(),
        seed: Some(seed),
        hyper_params: BTreeMap::from([("scales".to_string(), json!(scales))]),
    };
    Ok(dump)
}
