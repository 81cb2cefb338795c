//! Exhaustive randomized checks of the score fusion algebra.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wordwriter::classifier::{evaluate_topk, fuse_page, fuse_word, predict, ScoreVector};

pub struct FusionReport {
    pub trials: usize,
    pub single_identity: bool,
    pub permutation_invariant: bool,
    pub top1_le_top5: bool,
    pub monotone_invariant: bool,
    pub sort_oracle: bool,
}

fn close(a: &[f64], b: &[f64]) -> bool {
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-12)
}

pub fn run(trials: usize) -> FusionReport {
    let mut rng = ChaCha8Rng::seed_from_u64(314);
    let mut r = FusionReport {
        trials,
        single_identity: true,
        permutation_invariant: true,
        top1_le_top5: true,
        monotone_invariant: true,
        sort_oracle: true,
    };
    let transforms: [fn(f64) -> f64; 4] = [|x| x.powi(3), |x| (5.0 * x).exp(), |x| 2.0 * x + 1.0, |x| x.sqrt()];
    for _ in 0..trials {
        let w = rng.random_range(1..9);
        let writers: Vec<u32> = (1..=w as u32).collect();
        let frags = rng.random_range(1..7);
        // Coarse grid so exact ties occur.
        let rows: Vec<Vec<f64>> = (0..frags)
            .map(|_| (0..w).map(|_| f64::from(rng.random_range(0..=20u32)) / 20.0).collect())
            .collect();

        let single = fuse_word(&writers, &rows[..1]).unwrap();
        r.single_identity &= single.scores == rows[0];
        let page_single = fuse_page(std::slice::from_ref(&single)).unwrap();
        r.single_identity &= page_single.scores == single.scores;

        let fused = fuse_word(&writers, &rows).unwrap();
        let mut reversed = rows.clone();
        reversed.reverse();
        reversed.rotate_left(rng.random_range(0..frags));
        r.permutation_invariant &= close(&fuse_word(&writers, &reversed).unwrap().scores, &fused.scores);
        r.permutation_invariant &= fused.scores.iter().all(|s| (0.0..=1.0).contains(s));

        let words: Vec<ScoreVector> = rows.iter().map(|row| fuse_word(&writers, &[row.clone()]).unwrap()).collect();
        let mut words_rev = words.clone();
        words_rev.reverse();
        r.permutation_invariant &= close(&fuse_page(&words).unwrap().scores, &fuse_page(&words_rev).unwrap().scores);

        let pred = predict(&fused).unwrap();
        let mut oracle: Vec<(f64, u32)> = fused.scores.iter().copied().zip(writers.iter().copied()).collect();
        oracle.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        r.sort_oracle &= pred.ranking == oracle.iter().map(|p| p.1).collect::<Vec<_>>();

        // Raw grid scores: averaging can leave 1-ulp gaps that a transform rounds into ties.
        let raw = ScoreVector {
            scores: rows[0].clone(),
            ..fused.clone()
        };
        let raw_ranking = predict(&raw).unwrap().ranking;
        for f in transforms {
            let mapped = ScoreVector {
                scores: raw.scores.iter().map(|&s| f(s)).collect(),
                ..raw.clone()
            };
            r.monotone_invariant &= predict(&mapped).unwrap().ranking == raw_ranking;
        }

        let truths: Vec<u32> = (0..5).map(|_| rng.random_range(1..=w as u32)).collect();
        let preds = vec![pred; truths.len()];
        let t1 = evaluate_topk(&preds, &truths, 1).unwrap();
        let t5 = evaluate_topk(&preds, &truths, 5).unwrap();
        r.top1_le_top5 &= t1 <= t5;
    }
    r
}
