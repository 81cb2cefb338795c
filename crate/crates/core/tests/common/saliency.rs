//! Hand values and randomized property checks for divergence weighting.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wordwriter::saliency::{
    average_divergence, divergence_matrix, kl_divergence, significance_weights, BinEdges, ComponentHistogramSet,
};

/// Largest deviation from the hand-computed reference values.
pub fn hand_value_error() -> f64 {
    let mut worst = 0.0f64;
    let one_bit = kl_divergence(&[1.0, 0.0], &[0.5, 0.5], 0.0).unwrap();
    worst = worst.max((one_bit - 1.0).abs());
    let (a, b) = (0.37, 1.91);
    let d = wordwriter::saliency::DivergenceMatrix {
        writers: 2,
        values: vec![0.0, a, b, 0.0],
    };
    worst = worst.max((average_divergence(&d).unwrap() - (a + b) / 2.0).abs());
    let w = significance_weights(&[0.0, 1.0]).unwrap().w;
    worst = worst.max((w[0] - 1.0).abs()).max((w[1] - 0.5).abs());
    worst
}

fn random_set(rng: &mut ChaCha8Rng, writers: usize, bins: usize) -> ComponentHistogramSet {
    let counts: Vec<Vec<usize>> = (0..writers)
        .map(|_| {
            let mut c: Vec<usize> = (0..bins).map(|_| rng.random_range(0..6)).collect();
            if c.iter().all(|v| *v == 0) {
                c[0] = 1;
            }
            c
        })
        .collect();
    let probs = counts
        .iter()
        .map(|c| {
            let n: usize = c.iter().sum();
            c.iter().map(|&v| v as f64 / n as f64).collect()
        })
        .collect();
    ComponentHistogramSet {
        component: 0,
        edges: BinEdges {
            edges: (0..=bins).map(|b| b as f64).collect(),
            constant: false,
        },
        writers: (0..writers as u32).collect(),
        counts,
        probs,
    }
}

pub struct PropertyReport {
    pub sets: usize,
    pub diagonal_zero: bool,
    pub nonnegative: bool,
    pub permutation_consistent: bool,
    pub oracle_entrywise: bool,
}

pub fn run_properties(sets: usize) -> PropertyReport {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut r = PropertyReport {
        sets,
        diagonal_zero: true,
        nonnegative: true,
        permutation_consistent: true,
        oracle_entrywise: true,
    };
    for _ in 0..sets {
        let w = rng.random_range(2..7);
        let bins = rng.random_range(1..9);
        let set = random_set(&mut rng, w, bins);
        let d = divergence_matrix(&set, 1e-6).unwrap();
        for i in 0..w {
            r.diagonal_zero &= d.get(i, i) == 0.0;
            for j in 0..w {
                r.nonnegative &= d.get(i, j) >= 0.0 && d.get(i, j).is_finite();
                if i != j {
                    let direct = kl_divergence(&set.probs[i], &set.probs[j], 1e-6).unwrap();
                    r.oracle_entrywise &= d.get(i, j) == direct;
                }
            }
        }
        let mut perm: Vec<usize> = (0..w).collect();
        for k in (1..w).rev() {
            perm.swap(k, rng.random_range(0..=k));
        }
        let mut shuffled = set.clone();
        shuffled.probs = perm.iter().map(|&i| set.probs[i].clone()).collect();
        shuffled.counts = perm.iter().map(|&i| set.counts[i].clone()).collect();
        let dp = divergence_matrix(&shuffled, 1e-6).unwrap();
        for a in 0..w {
            for b in 0..w {
                r.permutation_consistent &= dp.get(a, b) == d.get(perm[a], perm[b]);
            }
        }
        let (pa, pb) = (average_divergence(&d).unwrap(), average_divergence(&dp).unwrap());
        r.permutation_consistent &= (pa - pb).abs() <= 1e-12 * pa.abs().max(1.0);
    }
    r
}
