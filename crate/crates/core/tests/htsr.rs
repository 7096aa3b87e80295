mod common;

use common::{hill_direct, random_matrix, random_spectrum, rel_err, top_singular_value};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempbal_core::esd::{compute_esd, Esd, OrientedMatrix};
use tempbal_core::htsr::{
    hill_alpha, ks_distance, layer_metrics, log10_histogram, power_iteration_sigma, select_k,
    HtsrError, LambdaMinPolicy,
};

fn esd(vals: Vec<f64>) -> Esd {
    Esd::from_eigenvalues("t", vals, 0).unwrap()
}

#[test]
fn hill_matches_direct_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..200 {
        let n = rng.random_range(8..=512);
        let vals = random_spectrum(&mut rng, n);
        let got = hill_alpha(&esd(vals.clone()), n / 2).unwrap();
        assert!((got - hill_direct(&vals, n / 2)).abs() <= 1e-12);
    }
    let e = std::f64::consts::E;
    let five_thirds = hill_alpha(&esd(vec![1.0, e, e * e, e * e * e]), 2).unwrap();
    assert!((five_thirds - 5.0 / 3.0).abs() < 1e-12);
}

#[test]
fn goodness_of_fit_recovers_threshold() {
    // bulk: 512 evenly spaced values in (0, 1); tail: 512 exact quantiles of a
    // power law with α = 2.5 above λ = 1
    let alpha = 2.5;
    let mut vals: Vec<f64> = (0..512).map(|i| (i as f64 + 0.5) / 512.0).collect();
    vals.extend((0..512).map(|i| {
        let u = (i as f64 + 0.5) / 512.0;
        (1.0 - u).powf(-1.0 / (alpha - 1.0))
    }));
    let e = esd(vals);
    let k = select_k(&e, LambdaMinPolicy::GoodnessOfFit).unwrap();
    let lambda_min = e.eigenvalues()[e.len() - k - 1];
    assert!((0.1..=10.0).contains(&lambda_min), "k={k}, λ_min={lambda_min}");
    let m = layer_metrics(&e, LambdaMinPolicy::GoodnessOfFit).unwrap();
    assert!((m.alpha_hill - alpha).abs() < 0.5, "{m:?}");
}

#[test]
fn fix_finger_on_constructed_histogram() {
    // Bulk in log10 space piles up just below -1 (λ ≈ 0.1) and thins out
    // toward -2; 50 tail values spread over (1, 100]. With 100 bins over
    // [-2, 2] every bin is 0.04 wide and -1 is a bin edge.
    let mut logs: Vec<f64> = (0..500)
        .map(|i| {
            let u = (i as f64 + 0.5) / 500.0;
            -1.0 - u.powi(3)
        })
        .collect();
    logs.push(-2.0);
    logs.extend((1..=50).map(|i| 0.04 * i as f64));
    let vals: Vec<f64> = logs.iter().map(|l| 10f64.powf(*l)).collect();

    // oracle: count per bin directly and locate the mode
    let mut counts = [0usize; 100];
    for l in &logs {
        counts[(((l + 2.0) / 0.04) as usize).min(99)] += 1;
    }
    let peak = (0..100).fold(0, |b, i| if counts[i] > counts[b] { i } else { b });
    assert_eq!(peak, 24);
    let (_, lib_counts) = log10_histogram(&vals, 100);
    assert_eq!(lib_counts.iter().sum::<usize>(), vals.len());

    let k = select_k(&esd(vals), LambdaMinPolicy::fix_finger()).unwrap();
    assert!((45..=55).contains(&k), "k={k}");
}

#[test]
fn ks_distance_bounded() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..50 {
        let n = rng.random_range(4..64);
        let vals = random_spectrum(&mut rng, n);
        for k in 2..n {
            let a = hill_alpha(&esd(vals.clone()), k).unwrap();
            let d = ks_distance(&vals, k, a);
            assert!((0.0..=1.0).contains(&d), "D={d}");
        }
    }
}

#[test]
fn degenerate_inputs() {
    assert!(hill_alpha(&esd(vec![5.0; 4]), 2).unwrap().is_infinite());
    let flat = layer_metrics(&esd(vec![1.0; 8]), LambdaMinPolicy::Median).unwrap();
    assert!(flat.alpha_hill.is_infinite() && flat.alpha_weighted.is_infinite());
    assert!(matches!(
        layer_metrics(&esd(vec![0.0; 6]), LambdaMinPolicy::Median),
        Err(HtsrError::DegenerateSpectrum)
    ));
    assert!(matches!(
        hill_alpha(&esd(vec![0.0, 0.0, 1.0, 2.0]), 2),
        Err(HtsrError::DegenerateThreshold { k: 2 })
    ));
}

#[test]
fn power_iteration_matches_dense_svd() {
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    let vals = random_matrix(&mut rng, 50 * 30);
    let w = OrientedMatrix::from_row_major("w", 50, 30, vals.clone()).unwrap();
    let t = power_iteration_sigma(&w, 1e-7, 5000).unwrap();
    assert!(rel_err(t.sigma, top_singular_value(50, 30, &vals)) < 1e-6);
    let wv = w.mul_vec(&t.v);
    let resid: f64 = wv
        .iter()
        .zip(&t.u)
        .map(|(a, b)| (a - t.sigma * b).powi(2))
        .sum::<f64>()
        .sqrt();
    assert!(resid <= 1e-7 * t.sigma);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn hill_is_scale_free(seed in any::<u64>(), c in 1e-6f64..1e6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(8..64);
        let vals = random_spectrum(&mut rng, n);
        let scaled: Vec<f64> = vals.iter().map(|v| v * c).collect();
        let a = hill_alpha(&esd(vals), n / 2).unwrap();
        let b = hill_alpha(&esd(scaled), n / 2).unwrap();
        // ratios cancel up to the rounding of c·λ
        prop_assert!(rel_err(a, b) < 1e-12);
    }

    #[test]
    fn hill_is_exactly_scale_free_for_powers_of_two(seed in any::<u64>(), j in -40i32..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(8..64);
        let vals = random_spectrum(&mut rng, n);
        let scaled: Vec<f64> = vals.iter().map(|v| v * 2f64.powi(j)).collect();
        prop_assert_eq!(
            hill_alpha(&esd(vals), n / 2).unwrap(),
            hill_alpha(&esd(scaled), n / 2).unwrap()
        );
    }

    #[test]
    fn metric_invariants(rows in 2usize..16, cols in 2usize..16, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = OrientedMatrix::from_row_major("w", rows, cols, random_matrix(&mut rng, rows * cols)).unwrap();
        let e = compute_esd(&w).unwrap();
        let m = layer_metrics(&e, LambdaMinPolicy::Median).unwrap();
        prop_assert!(m.k >= 1 && m.k < e.len());
        prop_assert!(m.lambda_min <= m.spectral_norm);
        prop_assert_eq!(m.spectral_norm, *e.eigenvalues().last().unwrap());
        let sigma = power_iteration_sigma(&w, 1e-10, 20000).unwrap().sigma;
        prop_assert!(rel_err(sigma * sigma, m.spectral_norm) < 1e-9);
    }
}
