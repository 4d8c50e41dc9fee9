//! One-dimensional Gaussian mixtures fitted by EM, selected by BIC, and used
//! as a density model for Monte Carlo entropy.

use std::f64::consts::PI;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{mean_and_variance, quantile_sorted, sorted_copy, EntropyEstimate};
use crate::error::{Error, Result};
use crate::model::{EstimatorConfig, EstimatorKind};
use crate::rng::seeded;

const SINGULAR_VARIANCE: f64 = 1e-12;
const VARIANCE_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianMixture1d {
    pub weights: Vec<f64>,
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
}

impl GaussianMixture1d {
    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    /// Free parameters: k means, k variances and k - 1 weights.
    pub fn n_params(&self) -> usize {
        3 * self.n_components() - 1
    }

    fn component_logs(&self, x: f64, out: &mut [f64]) {
        for (j, slot) in out.iter_mut().enumerate() {
            let v = self.variances[j];
            let d = x - self.means[j];
            *slot = self.weights[j].ln() - 0.5 * ((2.0 * PI * v).ln() + d * d / v);
        }
    }

    pub fn log_pdf(&self, x: f64) -> f64 {
        let mut logs = vec![0.0; self.n_components()];
        self.component_logs(x, &mut logs);
        log_sum_exp(&logs)
    }

    pub fn sample(&self, rng: &mut impl rand::Rng) -> f64 {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut pick = self.n_components() - 1;
        for (j, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                pick = j;
                break;
            }
        }
        let z: f64 = StandardNormal.sample(rng);
        self.means[pick] + self.variances[pick].sqrt() * z
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmFit {
    pub mixture: GaussianMixture1d,
    /// Total log-likelihood of the training samples.
    pub log_likelihood: f64,
    pub bic: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn em(x: &[f64], init: GaussianMixture1d, max_iter: usize, tol: f64) -> GmmFit {
    let n = x.len();
    let k = init.n_components();
    let mut model = init;
    let mut resp = vec![0.0; n * k];
    let mut logs = vec![0.0; k];
    let mut prev_ll = f64::NEG_INFINITY;
    let mut best: Option<(f64, GaussianMixture1d)> = None;
    let mut converged = false;
    let mut iterations = 0;

    for _ in 0..max_iter {
        iterations += 1;
        // E-step under the current parameters.
        let mut ll = 0.0;
        for (i, &xi) in x.iter().enumerate() {
            model.component_logs(xi, &mut logs);
            let lse = log_sum_exp(&logs);
            ll += lse;
            for j in 0..k {
                resp[i * k + j] = (logs[j] - lse).exp();
            }
        }
        if best.as_ref().is_none_or(|(b, _)| ll > *b) {
            best = Some((ll, model.clone()));
        }
        if (ll - prev_ll).abs() / n as f64 <= tol {
            converged = true;
            break;
        }
        prev_ll = ll;

        // M-step.
        for j in 0..k {
            let nk: f64 = (0..n).map(|i| resp[i * k + j]).sum();
            if nk <= f64::MIN_POSITIVE {
                model.weights[j] = 0.0;
                continue;
            }
            let mean = (0..n).map(|i| resp[i * k + j] * x[i]).sum::<f64>() / nk;
            let mut var = (0..n)
                .map(|i| resp[i * k + j] * (x[i] - mean).powi(2))
                .sum::<f64>()
                / nk;
            if var < SINGULAR_VARIANCE {
                var = VARIANCE_FLOOR;
            }
            model.weights[j] = nk / n as f64;
            model.means[j] = mean;
            model.variances[j] = var;
        }
    }

    if !converged {
        // Score the final M-step too before settling on the best iterate.
        let ll: f64 = x.iter().map(|&xi| model.log_pdf(xi)).sum();
        if best.as_ref().is_none_or(|(b, _)| ll > *b) {
            best = Some((ll, model));
        }
    }
    let (log_likelihood, mixture) = best.expect("at least one EM iteration");
    let bic = -2.0 * log_likelihood + mixture.n_params() as f64 * (n as f64).ln();
    GmmFit {
        mixture,
        log_likelihood,
        bic,
        iterations,
        converged,
    }
}

fn initialisations(sorted: &[f64], k: usize) -> Vec<GaussianMixture1d> {
    let (mean, var) = mean_and_variance(sorted);
    let var = var.max(VARIANCE_FLOOR);
    let weights = vec![1.0 / k as f64; k];
    if k == 1 {
        return vec![GaussianMixture1d {
            weights,
            means: vec![mean],
            variances: vec![var],
        }];
    }
    // Components spread over the quantiles...
    let spread = GaussianMixture1d {
        weights: weights.clone(),
        means: (0..k)
            .map(|j| quantile_sorted(sorted, (j as f64 + 0.5) / k as f64))
            .collect(),
        variances: vec![var / (k * k) as f64; k],
    };
    // ...and nested components sharing a centre with geometric scales.
    let median = quantile_sorted(sorted, 0.5);
    let nested = GaussianMixture1d {
        weights,
        means: vec![median; k],
        variances: (0..k)
            .map(|j| var * 10f64.powf(-3.0 * j as f64 / (k - 1) as f64))
            .collect(),
    };
    vec![spread, nested]
}

/// Fits a `k`-component mixture by EM; the best of several deterministic
/// initialisations is returned.
pub fn fit_gmm(samples: &[f64], k: usize, max_iter: usize, tol: f64) -> Result<GmmFit> {
    if k == 0 || samples.len() < k {
        return Err(Error::param(
            "k",
            format!("cannot fit {k} components to {} samples", samples.len()),
        ));
    }
    if max_iter == 0 {
        return Err(Error::param("gmm_max_iter", "must be >= 1"));
    }
    let sorted = sorted_copy(samples);
    Ok(initialisations(&sorted, k)
        .into_iter()
        .map(|init| em(samples, init, max_iter, tol))
        .max_by(|a, b| a.log_likelihood.total_cmp(&b.log_likelihood))
        .expect("at least one initialisation"))
}

/// Entropy of the BIC-selected mixture, `-mean(ln p(z_m))` over fresh draws.
pub fn gmm_mc_entropy(
    samples: &[f64],
    config: &EstimatorConfig,
    seed: u64,
) -> Result<EntropyEstimate> {
    let n = samples.len();
    if n < 50 {
        return Err(Error::param(
            "samples",
            format!("GMM entropy needs N >= 50, got {n}"),
        ));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("GMM input contains non-finite values".into()));
    }
    if samples.iter().all(|v| *v == samples[0]) {
        return Ok(EntropyEstimate::degenerate(
            EstimatorKind::GmmMc,
            "zero-spread input",
        ));
    }

    let mut best: Option<GmmFit> = None;
    for k in 1..=config.gmm_max_components.min(n) {
        let fit = fit_gmm(samples, k, config.gmm_max_iter, config.gmm_tol)?;
        if best.as_ref().is_none_or(|b| fit.bic < b.bic) {
            best = Some(fit);
        }
    }
    let fit = best.expect("at least one component count");

    let mut rng = seeded(seed);
    let m = config.mc_samples;
    let total: f64 = (0..m)
        .map(|_| {
            let z = fit.mixture.sample(&mut rng);
            fit.mixture.log_pdf(z)
        })
        .sum();
    let mut est = EntropyEstimate::new(-total / m as f64, EstimatorKind::GmmMc);
    if !fit.converged {
        est.warning = Some(format!(
            "EM did not converge in {} iterations ({} components); using best iterate",
            fit.iterations,
            fit.mixture.n_components()
        ));
    }
    Ok(est)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::Normal;

    fn normal(n: usize, mean: f64, sd: f64, rng: &mut impl rand::Rng) -> Vec<f64> {
        let d = Normal::new(mean, sd).unwrap();
        (0..n).map(|_| d.sample(rng)).collect()
    }

    #[test]
    fn log_pdf_of_standard_normal() {
        let m = GaussianMixture1d {
            weights: vec![1.0],
            means: vec![0.0],
            variances: vec![1.0],
        };
        assert!((m.log_pdf(0.0) + 0.5 * (2.0 * PI).ln()).abs() < 1e-14);
    }

    #[test]
    fn em_recovers_separated_components() {
        let mut rng = seeded(3);
        let mut x = normal(3000, -5.0, 1.0, &mut rng);
        x.extend(normal(1000, 5.0, 0.5, &mut rng));
        let fit = fit_gmm(&x, 2, 200, 1e-8).unwrap();
        let mut comps: Vec<(f64, f64, f64)> = (0..2)
            .map(|j| {
                (
                    fit.mixture.means[j],
                    fit.mixture.variances[j],
                    fit.mixture.weights[j],
                )
            })
            .collect();
        comps.sort_by(|a, b| a.0.total_cmp(&b.0));
        assert!((comps[0].0 + 5.0).abs() < 0.1 && (comps[1].0 - 5.0).abs() < 0.1);
        assert!((comps[0].1 - 1.0).abs() < 0.1 && (comps[1].1 - 0.25).abs() < 0.05);
        assert!((comps[0].2 - 0.75).abs() < 0.03);
    }

    #[test]
    fn bic_prefers_two_components_for_bimodal_data() {
        let mut rng = seeded(4);
        let mut x = normal(2000, -5.0, 1.0, &mut rng);
        x.extend(normal(2000, 5.0, 1.0, &mut rng));
        let one = fit_gmm(&x, 1, 100, 1e-6).unwrap();
        let two = fit_gmm(&x, 2, 100, 1e-6).unwrap();
        assert!(two.bic < one.bic);
    }

    #[test]
    fn entropy_of_standard_normal() {
        let mut rng = seeded(5);
        let x = normal(10_000, 0.0, 1.0, &mut rng);
        let est = gmm_mc_entropy(&x, &EstimatorConfig::default(), 1).unwrap();
        assert!((est.value - 1.4189).abs() < 0.1, "{}", est.value);
    }

    #[test]
    fn entropy_of_separated_mixture() {
        let mut rng = seeded(6);
        let mut x = normal(5000, -5.0, 1.0, &mut rng);
        x.extend(normal(5000, 5.0, 1.0, &mut rng));
        let est = gmm_mc_entropy(&x, &EstimatorConfig::default(), 2).unwrap();
        assert!((est.value - 2.1121).abs() < 0.1, "{}", est.value);
    }

    #[test]
    fn reproducible_given_seed() {
        let mut rng = seeded(7);
        let x = normal(500, 0.0, 1.0, &mut rng);
        let c = EstimatorConfig::default();
        assert_eq!(
            gmm_mc_entropy(&x, &c, 9).unwrap(),
            gmm_mc_entropy(&x, &c, 9).unwrap()
        );
    }

    #[test]
    fn constant_input_is_degenerate() {
        let est = gmm_mc_entropy(&[4.2; 300], &EstimatorConfig::default(), 0).unwrap();
        assert!(est.degenerate);
    }

    #[test]
    fn singular_component_is_floored() {
        // Half the mass sits on a single point.
        let mut rng = seeded(8);
        let mut x = normal(200, 0.0, 1.0, &mut rng);
        x.extend(std::iter::repeat_n(3.0, 200));
        let fit = fit_gmm(&x, 2, 100, 1e-6).unwrap();
        assert!(fit.mixture.variances.iter().all(|&v| v >= VARIANCE_FLOOR));
        assert!(fit.log_likelihood.is_finite());
    }
}
