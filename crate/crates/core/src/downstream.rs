//! Linear probes on the top-n dimensions ranked by entropy, trained on raw and
//! z-scored features.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::LatentDump;
use crate::rng::{derive_seed, seeded};

/// Columns whose training standard deviation is below this are only centred.
pub const MIN_STD: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub l2: f64,
    pub train_fraction: f64,
    pub normalise: bool,
    pub seed: u64,
}

impl Default for RegressionConfig {
    fn default() -> Self {
        RegressionConfig {
            learning_rate: 0.1,
            epochs: 500,
            l2: 1e-4,
            train_fraction: 0.8,
            normalise: false,
            seed: 0,
        }
    }
}

impl RegressionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::param("learning_rate", "must be > 0"));
        }
        if self.epochs == 0 {
            return Err(Error::param("epochs", "must be >= 1"));
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return Err(Error::param("l2", "must be >= 0"));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::param("train_fraction", "must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// Dimension indices by descending entropy; ties keep ascending index order.
pub fn rank_by_entropy(entropies: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..entropies.len()).collect();
    idx.sort_by(|&a, &b| entropies[b].total_cmp(&entropies[a]).then(a.cmp(&b)));
    idx
}

/// Per-column z-scoring fitted on a training matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalisation {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Columns with (near) zero spread, which are centred but not scaled.
    pub degenerate: Vec<bool>,
}

impl Normalisation {
    pub fn fit(train: &DMatrix<f64>) -> Result<Self> {
        let n = train.nrows();
        if n < 2 {
            return Err(Error::param("train", "normalisation needs N >= 2"));
        }
        let mut mean = Vec::with_capacity(train.ncols());
        let mut std = Vec::with_capacity(train.ncols());
        let mut degenerate = Vec::with_capacity(train.ncols());
        for col in train.column_iter() {
            let m = col.sum() / n as f64;
            let v = col.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n as f64;
            mean.push(m);
            std.push(v.sqrt());
            degenerate.push(v.sqrt() < MIN_STD);
        }
        Ok(Normalisation {
            mean,
            std,
            degenerate,
        })
    }

    pub fn apply(&self, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if m.ncols() != self.mean.len() {
            return Err(Error::Consistency(format!(
                "normalisation fitted on {} columns, applied to {}",
                self.mean.len(),
                m.ncols()
            )));
        }
        Ok(DMatrix::from_fn(m.nrows(), m.ncols(), |r, c| {
            let centred = m[(r, c)] - self.mean[c];
            if self.degenerate[c] {
                centred
            } else {
                centred / self.std[c]
            }
        }))
    }
}

/// Z-scores `apply_to` with the column statistics of `train`.
pub fn normalise_features(
    train: &DMatrix<f64>,
    apply_to: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, Vec<bool>)> {
    let norm = Normalisation::fit(train)?;
    Ok((norm.apply(apply_to)?, norm.degenerate))
}

/// Appends a constant-one column.
pub fn with_bias(x: &DMatrix<f64>) -> DMatrix<f64> {
    x.clone().insert_column(x.ncols(), 1.0)
}

/// Row-wise softmax of a logit matrix.
pub fn softmax_rows(logits: &DMatrix<f64>) -> DMatrix<f64> {
    let mut p = logits.clone();
    for mut row in p.row_iter_mut() {
        let max = row.max();
        row.apply(|v| *v = (*v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    p
}

/// Mean cross-entropy plus `l2 * ||W||²` and its gradient with respect to `W`.
///
/// `x` is N×p (bias column included), `w` is p×K, `y` holds class indices.
pub fn loss_and_grad(
    x: &DMatrix<f64>,
    y: &[usize],
    w: &DMatrix<f64>,
    l2: f64,
) -> (f64, DMatrix<f64>) {
    let n = x.nrows() as f64;
    let mut p = softmax_rows(&(x * w));
    let mut ce = 0.0;
    for (i, &c) in y.iter().enumerate() {
        ce -= p[(i, c)].max(f64::MIN_POSITIVE).ln();
        p[(i, c)] -= 1.0;
    }
    let loss = ce / n + l2 * w.norm_squared();
    let grad = x.tr_mul(&p) / n + w * (2.0 * l2);
    (loss, grad)
}

/// A fitted multinomial logistic regression.
#[derive(Debug, Clone, PartialEq)]
pub struct LogReg {
    /// p×K weights, last row the bias.
    pub weights: DMatrix<f64>,
    /// Label value of each class index.
    pub classes: Vec<i64>,
    /// Loss after each epoch, starting with the initial loss.
    pub losses: Vec<f64>,
    pub final_learning_rate: f64,
}

impl LogReg {
    /// Class indices predicted for rows of `x` (bias column included).
    pub fn predict(&self, x: &DMatrix<f64>) -> Vec<usize> {
        let logits = x * &self.weights;
        logits
            .row_iter()
            .map(|r| {
                r.iter()
                    .enumerate()
                    .fold(
                        (0, f64::NEG_INFINITY),
                        |b, (j, &v)| if v > b.1 { (j, v) } else { b },
                    )
                    .0
            })
            .collect()
    }
}

/// Full-batch gradient descent from zero weights. A step that would raise the
/// loss is rejected and the learning rate halved, so losses never increase.
pub fn fit_logreg(
    x: &DMatrix<f64>,
    y: &[usize],
    n_classes: usize,
    config: &RegressionConfig,
) -> LogReg {
    let mut w = DMatrix::zeros(x.ncols(), n_classes);
    let mut lr = config.learning_rate;
    let (mut loss, mut grad) = loss_and_grad(x, y, &w, config.l2);
    let mut losses = vec![loss];
    for _ in 0..config.epochs {
        let candidate = &w - &grad * lr;
        let (l, g) = loss_and_grad(x, y, &candidate, config.l2);
        if l <= loss {
            w = candidate;
            loss = l;
            grad = g;
        } else {
            lr *= 0.5;
        }
        losses.push(loss);
    }
    LogReg {
        weights: w,
        classes: Vec::new(),
        losses,
        final_learning_rate: lr,
    }
}

/// Maps arbitrary label values to class indices `0..K` in ascending value order.
pub fn encode_labels(labels: &[i64]) -> (Vec<usize>, Vec<i64>) {
    let mut classes = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let y = labels
        .iter()
        .map(|l| classes.binary_search(l).expect("label present"))
        .collect();
    (y, classes)
}

/// Seeded shuffle split into (train, test) row indices.
pub fn split_indices(n: usize, train_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seeded(seed));
    let n_train = ((n as f64 * train_fraction).round() as usize).clamp(1, n - 1);
    let test = idx.split_off(n_train);
    (idx, test)
}

fn select_rows(m: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), m.ncols(), |r, c| m[(rows[r], c)])
}

fn check_task(n: usize, labels: &[i64]) -> Result<()> {
    if labels.len() != n {
        return Err(Error::Consistency(format!(
            "{} labels for {n} datapoints",
            labels.len()
        )));
    }
    if n < 20 {
        return Err(Error::param(
            "samples",
            format!("regression needs N >= 20, got {n}"),
        ));
    }
    if labels.iter().all(|&l| l == labels[0]) {
        return Err(Error::DegenerateTask(
            "labels contain a single category".into(),
        ));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainResult {
    pub model: LogReg,
    pub accuracy: f64,
}

fn train_on_split(
    features: &DMatrix<f64>,
    y: &[usize],
    n_classes: usize,
    train: &[usize],
    test: &[usize],
    config: &RegressionConfig,
) -> Result<TrainResult> {
    let mut xtr = select_rows(features, train);
    let mut xte = select_rows(features, test);
    if config.normalise {
        let norm = Normalisation::fit(&xtr)?;
        xtr = norm.apply(&xtr)?;
        xte = norm.apply(&xte)?;
    }
    let ytr: Vec<usize> = train.iter().map(|&i| y[i]).collect();
    let model = fit_logreg(&with_bias(&xtr), &ytr, n_classes, config);
    let pred = model.predict(&with_bias(&xte));
    let correct = pred.iter().zip(test).filter(|(p, &i)| **p == y[i]).count();
    Ok(TrainResult {
        model,
        accuracy: correct as f64 / test.len() as f64,
    })
}

/// Trains on a seeded split of `features` and reports held-out accuracy.
pub fn train_logreg(
    features: &DMatrix<f64>,
    labels: &[i64],
    config: &RegressionConfig,
) -> Result<TrainResult> {
    config.validate()?;
    check_task(features.nrows(), labels)?;
    let (y, classes) = encode_labels(labels);
    let (train, test) = split_indices(features.nrows(), config.train_fraction, config.seed);
    let mut r = train_on_split(features, &y, classes.len(), &train, &test, config)?;
    r.model.classes = classes;
    Ok(r)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub n_dims: usize,
    /// Mean held-out accuracy over repeats.
    pub accuracy_raw: f64,
    pub accuracy_normalised: f64,
    /// Population standard deviation over repeats.
    pub accuracy_raw_std: f64,
    pub accuracy_normalised_std: f64,
    /// Dimensions used, by descending entropy.
    pub dims_used: Vec<usize>,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (
        m,
        (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt(),
    )
}

/// Accuracy of probes on the top-n dimensions for n = 1..d, raw and normalised.
///
/// Each repeat draws one split (seed derived from `config.seed` and the repeat
/// index) shared by every n and both feature modes.
pub fn topn_curve(
    dump: &LatentDump,
    entropies: &[f64],
    config: &RegressionConfig,
    repeats: usize,
) -> Result<Vec<CurvePoint>> {
    config.validate()?;
    if repeats == 0 {
        return Err(Error::param("repeats", "must be >= 1"));
    }
    let labels = dump
        .labels
        .as_ref()
        .ok_or_else(|| Error::param("labels", "downstream probing needs a labelled dump"))?;
    if entropies.len() != dump.d() {
        return Err(Error::Consistency(format!(
            "{} entropies for {} dimensions",
            entropies.len(),
            dump.d()
        )));
    }
    check_task(dump.n(), labels)?;
    let (y, classes) = encode_labels(labels);
    let order = rank_by_entropy(entropies);
    let splits: Vec<(Vec<usize>, Vec<usize>)> = (0..repeats)
        .map(|r| {
            split_indices(
                dump.n(),
                config.train_fraction,
                derive_seed(config.seed, r as u64),
            )
        })
        .collect();

    (1..=dump.d())
        .into_par_iter()
        .map(|n| {
            let dims_used = order[..n].to_vec();
            let features = DMatrix::from_fn(dump.n(), n, |r, c| dump.mu[(r, dims_used[c])]);
            let mut raw = Vec::with_capacity(repeats);
            let mut norm = Vec::with_capacity(repeats);
            for (train, test) in &splits {
                for (normalise, out) in [(false, &mut raw), (true, &mut norm)] {
                    let cfg = RegressionConfig {
                        normalise,
                        ..config.clone()
                    };
                    out.push(
                        train_on_split(&features, &y, classes.len(), train, test, &cfg)?.accuracy,
                    );
                }
            }
            let (accuracy_raw, accuracy_raw_std) = mean_std(&raw);
            let (accuracy_normalised, accuracy_normalised_std) = mean_std(&norm);
            Ok(CurvePoint {
                n_dims: n,
                accuracy_raw,
                accuracy_normalised,
                accuracy_raw_std,
                accuracy_normalised_std,
                dims_used,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranking_examples() {
        assert_eq!(rank_by_entropy(&[0.1, 3.0, 1.0]), vec![1, 2, 0]);
        assert_eq!(rank_by_entropy(&[2.0; 4]), vec![0, 1, 2, 3]);
    }

    #[test]
    fn normalise_small_examples() {
        let m = DMatrix::from_vec(2, 2, vec![1.0, 3.0, 5.0, 5.0]);
        let (z, degenerate) = normalise_features(&m, &m).unwrap();
        assert_eq!(z.column(0).as_slice(), &[-1.0, 1.0]);
        assert_eq!(z.column(1).as_slice(), &[0.0, 0.0]);
        assert_eq!(degenerate, vec![false, true]);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let l = DMatrix::from_row_slice(2, 3, &[1000.0, 0.0, -1000.0, 0.1, 0.2, 0.3]);
        let p = softmax_rows(&l);
        for r in p.row_iter() {
            assert!((r.sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn labels_are_encoded_in_value_order() {
        let (y, classes) = encode_labels(&[7, -1, 7, 3]);
        assert_eq!(y, vec![2, 0, 2, 1]);
        assert_eq!(classes, vec![-1, 3, 7]);
    }

    #[test]
    fn single_category_is_a_degenerate_task() {
        let x = DMatrix::from_fn(30, 1, |r, _| r as f64);
        let r = train_logreg(&x, &[4; 30], &RegressionConfig::default());
        assert!(matches!(r, Err(Error::DegenerateTask(_))));
    }

    #[test]
    fn split_is_a_partition() {
        let (mut tr, te) = split_indices(50, 0.8, 3);
        assert_eq!((tr.len(), te.len()), (40, 10));
        tr.extend(te);
        tr.sort_unstable();
        assert_eq!(tr, (0..50).collect::<Vec<_>>());
    }

    #[test]
    fn missing_labels_is_a_parameter_error() {
        let dump = LatentDump::new(DMatrix::zeros(30, 2));
        let r = topn_curve(&dump, &[0.0, 0.0], &RegressionConfig::default(), 1);
        assert!(matches!(r, Err(Error::Parameter { name: "labels", .. })));
    }
}
