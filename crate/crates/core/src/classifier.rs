//! Active / passive / mixed labels under three criteria: an entropy threshold,
//! variance-representation rules, and the fraction of datapoints with small KL.

use std::collections::BTreeMap;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Classification, DimClassification, DimensionStats, Label, LatentDump};
use crate::statistics::{gaussian_kl, moments};

/// Cut separating the near-0 (active) and near-1 (passive) variance states.
pub const MIXED_CUT: f64 = 0.5;

/// How the entropy threshold is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TauMethod {
    LargestGap,
    Otsu,
    Fixed(f64),
}

impl FromStr for TauMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "largest-gap" => Ok(TauMethod::LargestGap),
            "otsu" => Ok(TauMethod::Otsu),
            _ => Err(Error::param(
                "tau_method",
                format!("unknown method {s:?} (expected largest-gap or otsu; pass --tau for a fixed value)"),
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub tau: f64,
    /// Largest gap between sorted entropies over their range; 0 when all are equal.
    pub separation_score: f64,
    /// All entropies are equal, so there is no regime to separate.
    pub no_regime: bool,
}

fn largest_gap(desc: &[f64]) -> (usize, f64) {
    desc.windows(2)
        .map(|w| w[0] - w[1])
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, g)| {
            if g > best.1 {
                (i, g)
            } else {
                best
            }
        })
}

fn otsu_split(asc: &[f64]) -> usize {
    // Index k minimising the pooled within-class sum of squares of asc[..k], asc[k..].
    let n = asc.len();
    let total: f64 = asc.iter().sum();
    let total_sq: f64 = asc.iter().map(|x| x * x).sum();
    let (mut s, mut sq) = (0.0, 0.0);
    let mut best = (1, f64::INFINITY);
    for k in 1..n {
        s += asc[k - 1];
        sq += asc[k - 1] * asc[k - 1];
        let (nl, nr) = (k as f64, (n - k) as f64);
        let within = (sq - s * s / nl) + ((total_sq - sq) - (total - s).powi(2) / nr);
        if within < best.1 {
            best = (k, within);
        }
    }
    best.0
}

/// Picks the entropy threshold and reports how clearly the entropies separate.
pub fn select_threshold(entropies: &[f64], method: TauMethod) -> Result<Threshold> {
    if entropies.iter().any(|h| h.is_nan()) {
        return Err(Error::Data("entropy vector contains NaN".into()));
    }
    if let TauMethod::Fixed(tau) = method {
        if !tau.is_finite() {
            return Err(Error::param("tau", "must be finite"));
        }
        if entropies.len() < 2 {
            return Ok(Threshold {
                tau,
                separation_score: 0.0,
                no_regime: true,
            });
        }
    } else if entropies.len() < 2 {
        return Err(Error::param(
            "entropies",
            "threshold selection needs d >= 2",
        ));
    }

    let mut desc = entropies.to_vec();
    desc.sort_by(|a, b| b.total_cmp(a));
    let range = desc[0] - desc[desc.len() - 1];
    if range == 0.0 {
        let tau = match method {
            TauMethod::Fixed(t) => t,
            _ => desc[0],
        };
        return Ok(Threshold {
            tau,
            separation_score: 0.0,
            no_regime: true,
        });
    }
    let (gap_at, gap) = largest_gap(&desc);
    let tau = match method {
        TauMethod::Fixed(t) => t,
        TauMethod::LargestGap => 0.5 * (desc[gap_at] + desc[gap_at + 1]),
        TauMethod::Otsu => {
            let mut asc = desc.clone();
            asc.reverse();
            let k = otsu_split(&asc);
            0.5 * (asc[k - 1] + asc[k])
        }
    };
    Ok(Threshold {
        tau,
        separation_score: gap / range,
        no_regime: false,
    })
}

/// Active iff `h > tau`; the boundary itself is passive.
pub fn entropy_classify(entropies: &[f64], tau: f64) -> Vec<Label> {
    entropies
        .iter()
        .map(|&h| {
            if h > tau {
                Label::Active
            } else {
                Label::Passive
            }
        })
        .collect()
}

/// Thresholds of the variance-representation criterion, applied to
/// `sigma = sqrt(sigma_sq)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BonhemeThresholds {
    /// Active iff mean sigma is below this.
    pub t_act: f64,
    /// Passive needs |mean sigma - 1| below this.
    pub t_pas: f64,
    /// Passive needs Var(sigma) and Var(mu) below this.
    pub t_var: f64,
    /// Passive needs |mean mu| below this.
    pub t_mu: f64,
    /// Mixed needs at least this fraction of sigma_sq on each side of the cut.
    pub mixed_mass: f64,
}

impl Default for BonhemeThresholds {
    fn default() -> Self {
        BonhemeThresholds {
            t_act: 0.5,
            t_pas: 0.1,
            t_var: 0.01,
            t_mu: 0.1,
            mixed_mass: 0.1,
        }
    }
}

impl BonhemeThresholds {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("t_act", self.t_act),
            ("t_pas", self.t_pas),
            ("t_var", self.t_var),
            ("t_mu", self.t_mu),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::param(name, "must be > 0"));
            }
        }
        if !(self.mixed_mass > 0.0 && self.mixed_mass <= 0.5) {
            return Err(Error::param("mixed_mass", "must lie in (0, 0.5]"));
        }
        Ok(())
    }
}

/// Label of one dimension from its mean and variance representations.
pub fn bonheme_label(mu: &[f64], sigma_sq: &[f64], t: &BonhemeThresholds) -> Label {
    let sigma: Vec<f64> = sigma_sq.iter().map(|s| s.sqrt()).collect();
    let s = moments(&sigma);
    let m = moments(mu);
    if s.mean < t.t_act {
        return Label::Active;
    }
    if (s.mean - 1.0).abs() < t.t_pas
        && s.variance < t.t_var
        && m.mean.abs() < t.t_mu
        && m.variance < t.t_var
    {
        return Label::Passive;
    }
    let high = passive_state_fraction(sigma_sq);
    if high >= t.mixed_mass && 1.0 - high >= t.mixed_mass {
        Label::Mixed
    } else {
        Label::Unclassified
    }
}

/// Labels every dimension; all unclassified when the dump has no variances.
pub fn bonheme_classify(dump: &LatentDump, t: &BonhemeThresholds) -> Result<Vec<Label>> {
    t.validate()?;
    Ok((0..dump.d())
        .map(|d| match dump.sigma_sq_column(d) {
            Some(s) => bonheme_label(dump.mu_column(d), s, t),
            None => Label::Unclassified,
        })
        .collect())
}

/// Fraction of datapoints whose pointwise KL is below `epsilon`.
pub fn kl_pass_fraction(mu: &[f64], sigma_sq: &[f64], epsilon: f64) -> Result<f64> {
    let mut below = 0usize;
    for (&m, &s) in mu.iter().zip(sigma_sq) {
        if gaussian_kl(m, s)? < epsilon {
            below += 1;
        }
    }
    Ok(below as f64 / mu.len() as f64)
}

fn check_epsilon_delta(epsilon: f64, delta: f64) -> Result<()> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::param("epsilon", "must be > 0"));
    }
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::param("delta", "must lie in (0, 1]"));
    }
    Ok(())
}

/// Passive iff at least a `delta` fraction of datapoints have KL below `epsilon`.
pub fn kl_classify(dump: &LatentDump, epsilon: f64, delta: f64) -> Result<Vec<Label>> {
    check_epsilon_delta(epsilon, delta)?;
    (0..dump.d())
        .map(|d| match dump.sigma_sq_column(d) {
            Some(s) => Ok(
                if kl_pass_fraction(dump.mu_column(d), s, epsilon)? >= delta {
                    Label::Passive
                } else {
                    Label::Active
                },
            ),
            None => Ok(Label::Unclassified),
        })
        .collect()
}

fn passive_state_fraction(sigma_sq: &[f64]) -> f64 {
    sigma_sq.iter().filter(|&&s| s >= MIXED_CUT).count() as f64 / sigma_sq.len() as f64
}

/// Bernoulli entropy (nats) of the fraction of datapoints in the passive variance state.
pub fn mixed_score(sigma_sq: &[f64]) -> f64 {
    let p = passive_state_fraction(sigma_sq);
    let term = |x: f64| if x > 0.0 { -x * x.ln() } else { 0.0 };
    term(p) + term(1.0 - p)
}

/// Agreement between two criteria, ignoring dimensions either leaves unclassified.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairAgreement {
    pub a: String,
    pub b: String,
    /// Dimensions labelled by both.
    pub compared: usize,
    /// `None` when no dimension was labelled by both.
    pub agreement: Option<f64>,
    /// Counts keyed by the label under `a`, then under `b`.
    pub confusion: BTreeMap<Label, BTreeMap<Label, usize>>,
}

/// Pairwise confusion matrices for every pair of named label vectors.
pub fn compare_criteria(criteria: &[(&str, &[Label])]) -> Result<Vec<PairAgreement>> {
    if criteria.len() < 2 {
        return Err(Error::param(
            "criteria",
            "need at least two criteria to compare",
        ));
    }
    let d = criteria[0].1.len();
    if let Some((name, _)) = criteria.iter().find(|(_, l)| l.len() != d) {
        return Err(Error::Consistency(format!(
            "criterion {name} labels a different number of dimensions"
        )));
    }
    let mut out = Vec::new();
    for (i, (na, la)) in criteria.iter().enumerate() {
        for (nb, lb) in &criteria[i + 1..] {
            let mut confusion: BTreeMap<Label, BTreeMap<Label, usize>> = BTreeMap::new();
            let (mut compared, mut agree) = (0, 0);
            for (&x, &y) in la.iter().zip(lb.iter()) {
                if x == Label::Unclassified || y == Label::Unclassified {
                    continue;
                }
                compared += 1;
                agree += usize::from(x == y);
                *confusion.entry(x).or_default().entry(y).or_default() += 1;
            }
            out.push(PairAgreement {
                a: na.to_string(),
                b: nb.to_string(),
                compared,
                agreement: (compared > 0).then(|| agree as f64 / compared as f64),
                confusion,
            });
        }
    }
    Ok(out)
}

/// Settings for [`classify_all`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub tau_method: TauMethod,
    pub bonheme: BonhemeThresholds,
    pub epsilon: f64,
    pub delta: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            tau_method: TauMethod::LargestGap,
            bonheme: BonhemeThresholds::default(),
            epsilon: 0.01,
            delta: 0.95,
        }
    }
}

/// Labels every dimension under all three criteria. Entropies come from
/// `estimator` in `stats`.
pub fn classify_all(
    dump: &LatentDump,
    stats: &DimensionStats,
    estimator: &str,
    config: &ClassifierConfig,
) -> Result<Classification> {
    check_epsilon_delta(config.epsilon, config.delta)?;
    let entropies = stats.entropies(estimator).ok_or_else(|| {
        Error::param(
            "estimator",
            format!("no {estimator} entropies in the statistics"),
        )
    })?;
    if entropies.len() != dump.d() {
        return Err(Error::Consistency(format!(
            "statistics cover {} dimensions, dump has {}",
            entropies.len(),
            dump.d()
        )));
    }
    let threshold = select_threshold(&entropies, config.tau_method)?;
    let entropy_labels = entropy_classify(&entropies, threshold.tau);
    let bonheme = bonheme_classify(dump, &config.bonheme)?;
    let kl = kl_classify(dump, config.epsilon, config.delta)?;

    let mut notes = Vec::new();
    if threshold.no_regime {
        notes.push("all entropies are equal: no polarised regime to separate".to_string());
    }
    if !dump.has_sigma() {
        notes.push(
            "dump has no variance representation (deterministic encoder): \
             bonheme and kl criteria left unclassified"
                .to_string(),
        );
    }
    if !matches!(config.tau_method, TauMethod::Fixed(_)) {
        notes.push(format!(
            "tau chosen by the {} rule, not supplied by the user",
            match config.tau_method {
                TauMethod::Otsu => "otsu",
                _ => "largest-gap",
            }
        ));
    }

    let dims = (0..dump.d())
        .map(|d| {
            let mut scores = BTreeMap::new();
            scores.insert("entropy".to_string(), entropies[d]);
            if let Some(s) = dump.sigma_sq_column(d) {
                let mu = dump.mu_column(d);
                scores.insert("mixed_score".to_string(), mixed_score(s));
                scores.insert(
                    "kl_pass_fraction".to_string(),
                    kl_pass_fraction(mu, s, config.epsilon)?,
                );
                let sigma: Vec<f64> = s.iter().map(|v| v.sqrt()).collect();
                scores.insert("mean_sigma".to_string(), moments(&sigma).mean);
            }
            Ok(DimClassification {
                dim: d,
                entropy_label: entropy_labels[d],
                bonheme_label: bonheme[d],
                kl_label: kl[d],
                scores,
            })
        })
        .collect::<Result<_>>()?;
    Ok(Classification {
        tau_used: threshold.tau,
        separation_score: threshold.separation_score,
        dims,
        notes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    #[test]
    fn largest_gap_threshold() {
        let t = select_threshold(&[2.1, 1.9, 0.05, 0.03], TauMethod::LargestGap).unwrap();
        assert!((t.tau - 0.975).abs() < 1e-12);
        assert!((t.separation_score - 1.85 / 2.07).abs() < 1e-12);
        assert!(!t.no_regime);
    }

    #[test]
    fn equal_entropies_signal_no_regime() {
        let t = select_threshold(&[1.0, 1.0, 1.0], TauMethod::LargestGap).unwrap();
        assert!(t.no_regime);
        assert_eq!((t.tau, t.separation_score), (1.0, 0.0));
    }

    #[test]
    fn otsu_splits_two_clusters() {
        let t = select_threshold(&[3.0, 3.1, 2.9, -1.0, -1.2, -0.9], TauMethod::Otsu).unwrap();
        assert!(t.tau > -0.9 && t.tau < 2.9);
    }

    #[test]
    fn fixed_threshold_passes_through() {
        let t = select_threshold(&[0.0, 5.0], TauMethod::Fixed(1.5)).unwrap();
        assert_eq!(t.tau, 1.5);
        assert_eq!(t.separation_score, 1.0);
    }

    #[test]
    fn too_few_entropies_is_a_parameter_error() {
        assert!(select_threshold(&[1.0], TauMethod::LargestGap).is_err());
    }

    #[test]
    fn boundary_and_sentinel_are_passive() {
        assert_eq!(
            entropy_classify(&[1.0, -50.0, 1.5], 1.0),
            vec![Label::Passive, Label::Passive, Label::Active]
        );
    }

    #[test]
    fn bonheme_prototypes() {
        let t = BonhemeThresholds::default();
        let spread: Vec<f64> = (0..100).map(|i| (i as f64 - 50.0) / 10.0).collect();
        assert_eq!(bonheme_label(&spread, &[0.01; 100], &t), Label::Active);
        assert_eq!(bonheme_label(&[0.0; 100], &[1.0; 100], &t), Label::Passive);
        let half: Vec<f64> = (0..100)
            .map(|i| if i % 2 == 0 { 0.01 } else { 1.0 })
            .collect();
        assert_eq!(bonheme_label(&spread, &half, &t), Label::Mixed);
        // Neither collapsed nor informative nor bimodal.
        assert_eq!(
            bonheme_label(&spread, &[0.36; 100], &t),
            Label::Unclassified
        );
    }

    #[test]
    fn missing_sigma_leaves_dims_unclassified() {
        let dump = LatentDump::new(DMatrix::from_vec(3, 2, vec![0.0; 6]));
        let t = BonhemeThresholds::default();
        assert_eq!(
            bonheme_classify(&dump, &t).unwrap(),
            vec![Label::Unclassified; 2]
        );
        assert_eq!(
            kl_classify(&dump, 0.01, 0.95).unwrap(),
            vec![Label::Unclassified; 2]
        );
    }

    #[test]
    fn kl_criterion_examples() {
        let dump = LatentDump::new(DMatrix::from_vec(
            4,
            2,
            vec![0.0, 0.0, 0.0, 0.0, 3.0, 3.0, 3.0, 3.0],
        ))
        .with_sigma_sq(DMatrix::from_vec(
            4,
            2,
            vec![1.0, 1.0, 1.0, 1.0, 0.01, 0.01, 0.01, 0.01],
        ));
        assert_eq!(
            kl_classify(&dump, 1.0, 0.95).unwrap(),
            vec![Label::Passive, Label::Active]
        );
        assert!(kl_classify(&dump, 0.0, 0.95).is_err());
    }

    #[test]
    fn mixed_score_values() {
        let half: Vec<f64> = (0..100).map(|i| if i < 50 { 0.01 } else { 1.0 }).collect();
        assert!((mixed_score(&half) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(mixed_score(&[1.0; 10]), 0.0);
        assert_eq!(mixed_score(&[0.01; 10]), 0.0);
        let quarter: Vec<f64> = (0..100).map(|i| if i < 25 { 1.0 } else { 0.01 }).collect();
        assert!((mixed_score(&quarter) - 0.562_335_144_618_808).abs() < 1e-12);
    }

    #[test]
    fn identical_criteria_agree_fully() {
        let l = [Label::Active, Label::Passive, Label::Unclassified];
        let r = compare_criteria(&[("x", &l), ("y", &l)]).unwrap();
        assert_eq!(r[0].agreement, Some(1.0));
        assert_eq!(r[0].compared, 2);
        assert_eq!(r[0].confusion[&Label::Active][&Label::Active], 1);
    }

    #[test]
    fn compare_needs_two_criteria_of_equal_length() {
        let a = [Label::Active];
        let b = [Label::Active, Label::Passive];
        assert!(compare_criteria(&[("a", &a)]).is_err());
        assert!(compare_criteria(&[("a", &a), ("b", &b)]).is_err());
    }
}
