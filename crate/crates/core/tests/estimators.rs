use lel_core::estimators::{
    estimate_1d, gram_matrix, joint_renyi_entropy, mutual_information, renyi_column_entropies,
    renyi_entropy, GramMatrix,
};
use lel_core::model::{BandwidthRule, EstimatorConfig, EstimatorKind};
use lel_core::rng::seeded;
use lel_core::synthetic::gaussian_scale_dump;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand_distr::{Distribution, Normal, StandardNormal};

const GAUSS_H: f64 = 1.418_938_533_204_672_7;

fn normal_matrix(n: usize, m: usize, sd: f64, seed: u64) -> DMatrix<f64> {
    let mut rng = seeded(seed);
    DMatrix::from_fn(n, m, |_, _| {
        let z: f64 = StandardNormal.sample(&mut rng);
        sd * z
    })
}

fn check_gram(g: &GramMatrix) -> Result<(), TestCaseError> {
    let e = g.entries();
    let n = g.n();
    for i in 0..n {
        for j in 0..n {
            prop_assert!((e[(i, j)] - e[(j, i)]).abs() <= 1e-12);
        }
    }
    prop_assert!((e.trace() - 1.0).abs() <= 1e-9);
    let min = g.eigenvalues().into_iter().fold(f64::INFINITY, f64::min);
    prop_assert!(min >= -1e-9, "min eigenvalue {min}");
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn gram_is_symmetric_unit_trace_psd(
        n in 2usize..60,
        m in 1usize..4,
        log_sd in -3.0f64..3.0,
        seed in any::<u64>(),
    ) {
        let x = normal_matrix(n, m, 10f64.powf(log_sd), seed);
        check_gram(&gram_matrix(&x, BandwidthRule::Median)?)?;
        check_gram(&gram_matrix(&x, BandwidthRule::Silverman)?)?;
    }

    #[test]
    fn entropy_stays_in_range(n in 2usize..80, seed in any::<u64>(), alpha in 0.1f64..2.0) {
        prop_assume!((alpha - 1.0).abs() > 1e-3);
        let g = gram_matrix(&normal_matrix(n, 1, 1.0, seed), BandwidthRule::Median)?;
        let h = renyi_entropy(&g, alpha)?.value;
        prop_assert!(h >= 0.0 && h <= (n as f64).ln() + 1e-12);
    }

    // Continuity through alpha = 1, on Grams of 1-D and 2-D samples.
    #[test]
    fn alpha_limit_is_continuous(n in 20usize..300, m in 1usize..3, seed in any::<u64>()) {
        let g = gram_matrix(&normal_matrix(n, m, 1.0, seed), BandwidthRule::Median)?;
        let hi = renyi_entropy(&g, 1.01)?.value;
        let lo = renyi_entropy(&g, 0.99)?.value;
        prop_assert!((hi - lo).abs() <= 0.02, "{hi} vs {lo}");
    }
}

#[test]
fn joint_of_independent_variables_exceeds_marginals() {
    let a = gram_matrix(&normal_matrix(200, 1, 1.0, 1), BandwidthRule::Median).unwrap();
    let b = gram_matrix(&normal_matrix(200, 1, 1.0, 2), BandwidthRule::Median).unwrap();
    let ha = renyi_entropy(&a, 1.01).unwrap().value;
    let hb = renyi_entropy(&b, 1.01).unwrap().value;
    let hj = joint_renyi_entropy(&a, &b, 1.01).unwrap().value;
    assert!(hj >= ha.max(hb) - 0.05, "{hj} vs {ha}, {hb}");
}

#[test]
fn diagonal_grams_have_diagonal_joint() {
    let n = 7;
    let g = GramMatrix::from_entries(DMatrix::identity(n, n) / n as f64).unwrap();
    let h = joint_renyi_entropy(&g, &g, 2.0).unwrap().value;
    assert!((h - (n as f64).ln()).abs() < 1e-12);
}

#[test]
fn renyi_grows_with_spread_under_a_shared_bandwidth() {
    let base = normal_matrix(500, 1, 1.0, 3);
    let cols: Vec<Vec<f64>> = [0.1, 1.0, 10.0]
        .iter()
        .map(|s| base.iter().map(|v| v * s).collect())
        .collect();
    let refs: Vec<&[f64]> = cols.iter().map(Vec::as_slice).collect();
    let est = renyi_column_entropies(&refs, &EstimatorConfig::default()).unwrap();
    assert!(
        est[0].value < est[1].value && est[1].value < est[2].value,
        "{est:?}"
    );
}

#[test]
fn self_information_recovers_entropy() {
    let x = normal_matrix(500, 16, 1.0, 4);
    let mi = mutual_information(&x, &x, &EstimatorConfig::default()).unwrap();
    assert!(mi.value >= 0.9 * mi.h_x, "{mi:?}");
}

#[test]
fn constant_partner_gives_exactly_zero_information() {
    let x = normal_matrix(300, 2, 1.0, 5);
    let z = DMatrix::from_element(300, 1, 4.2);
    let mi = mutual_information(&x, &z, &EstimatorConfig::default()).unwrap();
    assert_eq!(mi.value, 0.0);
}

#[test]
fn one_dimensional_estimators_agree_on_gaussian_data() {
    let x: Vec<f64> = normal_matrix(10_000, 1, 1.0, 6).iter().copied().collect();
    let kinds = [
        EstimatorKind::Histogram,
        EstimatorKind::Knn,
        EstimatorKind::GmmMc,
    ];
    let values: Vec<f64> = kinds
        .iter()
        .map(|&k| {
            estimate_1d(&x, &EstimatorConfig::default().with_estimator(k), 0)
                .unwrap()
                .value
        })
        .collect();
    for (i, a) in values.iter().enumerate() {
        assert!((a - GAUSS_H).abs() <= 0.15, "{:?}: {a}", kinds[i]);
        for b in &values[i + 1..] {
            assert!((a - b).abs() <= 0.15);
        }
    }
}

#[test]
fn knn_entropy_of_wider_gaussian() {
    let mut rng = seeded(7);
    let d = Normal::new(0.0, 2.0).unwrap();
    let x: Vec<f64> = (0..10_000).map(|_| d.sample(&mut rng)).collect();
    let config = EstimatorConfig {
        knn_k: 3,
        ..Default::default()
    };
    let h = estimate_1d(&x, &config, 0).unwrap().value;
    assert!((h - (GAUSS_H + 2f64.ln())).abs() < 0.1, "{h}");
}

fn ordering(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    idx
}

#[test]
fn every_estimator_orders_dimensions_by_spread() {
    let scales = [1.0, 0.01, 10.0, 0.1, 3.0];
    let dump = gaussian_scale_dump(&scales, 1000, 8).unwrap();
    let cols: Vec<&[f64]> = (0..dump.d()).map(|d| dump.mu_column(d)).collect();
    let expected = ordering(&scales);
    for kind in [
        EstimatorKind::Histogram,
        EstimatorKind::Knn,
        EstimatorKind::GmmMc,
        EstimatorKind::Renyi,
    ] {
        let est = lel_core::estimators::estimate_columns(
            &cols,
            &EstimatorConfig::default().with_estimator(kind),
        )
        .unwrap();
        let values: Vec<f64> = est.iter().map(|e| e.value).collect();
        assert_eq!(ordering(&values), expected, "{kind}: {values:?}");
    }
}

#[test]
fn estimates_are_reproducible_for_a_seed() {
    let x: Vec<f64> = normal_matrix(400, 1, 1.0, 9).iter().copied().collect();
    for kind in [
        EstimatorKind::Knn,
        EstimatorKind::GmmMc,
        EstimatorKind::Renyi,
    ] {
        let c = EstimatorConfig::default()
            .with_estimator(kind)
            .with_seed(11);
        assert_eq!(
            estimate_1d(&x, &c, 3).unwrap(),
            estimate_1d(&x, &c, 3).unwrap()
        );
    }
}
