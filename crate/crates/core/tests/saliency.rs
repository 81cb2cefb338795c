mod common;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use wordwriter::saliency::{
    fd_bin_edges, fit_saliency, significance_weights, weights_with_mode, WeightMode, DEFAULT_EPSILON,
};
use wordwriter::sparsepca::CoefficientMatrix;

#[test]
fn hand_values_exact() {
    assert!(common::saliency::hand_value_error() <= 1e-12);
}

#[test]
fn randomized_divergence_properties() {
    let r = common::saliency::run_properties(300);
    assert!(r.diagonal_zero);
    assert!(r.nonnegative);
    assert!(r.permutation_consistent);
    assert!(r.oracle_entrywise);
}

#[test]
fn weights_decrease_on_sorted_grid() {
    let phi: Vec<f64> = (0..50).map(|i| f64::from(i) * 2.0).collect();
    let w = significance_weights(&phi).unwrap().w;
    assert!(w.windows(2).all(|p| p[0] > p[1]));
    assert!((significance_weights(&[99.0]).unwrap().w[0] - 0.01).abs() < 1e-15);
}

/// Component A separates the two writers, component B is shared noise.
fn separated_and_shared(seed: u64) -> (CoefficientMatrix, Vec<u32>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 1.0).unwrap();
    let mut values = Vec::new();
    let mut writers = Vec::new();
    for w in 0..2u32 {
        for _ in 0..200 {
            values.push(f64::from(w) * 10.0 + noise.sample(&mut rng));
            values.push(noise.sample(&mut rng));
            writers.push(w);
        }
    }
    (CoefficientMatrix { rows: 400, cols: 2, values }, writers)
}

#[test]
fn separated_component_has_higher_divergence() {
    let (alpha, writers) = separated_and_shared(4);
    let inverse = fit_saliency(&alpha, &writers, DEFAULT_EPSILON, WeightMode::Inverse).unwrap();
    let phi = inverse.phi();
    assert!(phi[0] > phi[1]);
    // The printed inverse relation gives the separating component the lower weight;
    // the direct mode ranks it first.
    assert!(inverse.weights()[0] < inverse.weights()[1]);
    let direct = fit_saliency(&alpha, &writers, DEFAULT_EPSILON, WeightMode::Direct).unwrap();
    assert!(direct.weights()[0] > direct.weights()[1]);
    assert_eq!(direct.weights()[0], 1.0);
}

#[test]
fn histogram_mass_is_conserved() {
    let (alpha, writers) = separated_and_shared(9);
    for k in 0..2 {
        let h = wordwriter::saliency::build_histograms(&alpha, &writers, k).unwrap();
        for counts in &h.counts {
            assert_eq!(counts.iter().sum::<usize>(), 200);
        }
        for p in &h.probs {
            assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }
}

proptest! {
    #[test]
    fn edges_increase_and_cover(values in prop::collection::vec(-50.0f64..50.0, 2..200)) {
        let e = fd_bin_edges(&values).unwrap();
        prop_assert!(e.edges.windows(2).all(|w| w[0] < w[1]));
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(e.edges[0] <= min && *e.edges.last().unwrap() >= max);
        for v in &values {
            prop_assert!(e.bin_of(*v) < e.bins());
        }
    }

    #[test]
    fn weights_in_unit_interval(phi in prop::collection::vec(0.0f64..1e6, 1..20)) {
        for mode in [WeightMode::Inverse, WeightMode::Direct] {
            let w = weights_with_mode(&phi, mode).unwrap().w;
            prop_assert!(w.iter().all(|v| *v > 0.0 && *v <= 1.0));
        }
    }

    #[test]
    fn inverse_weights_reverse_order(a in 0.0f64..100.0, b in 0.0f64..100.0) {
        prop_assume!(a != b);
        let w = significance_weights(&[a, b]).unwrap().w;
        prop_assert_eq!(a < b, w[0] > w[1]);
    }
}

#[test]
fn kl_rejects_negative_epsilon() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let p: Vec<f64> = vec![rng.random(), 0.0];
    assert!(wordwriter::saliency::kl_divergence(&p, &p, -1.0).is_err());
}
