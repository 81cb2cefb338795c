//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.
//!
//! Run with `cargo test --release -p wordwriter --test acceptance`.

mod common;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::{enet, fusion, gradcheck, saliency, sift, svm};
use wordwriter::config::{FusionMode, PipelineConfig};
use wordwriter::corpus::generate_synthetic;
use wordwriter::imaging::GrayImage;
use wordwriter::keypoints::{detect, fitted_size, normalize_patch, DoGPyramid};
use wordwriter::pipeline::{results_csv, run_experiment, summary_json, Experiment};

const E2E_SEED: u64 = 7;
const E2E_WRITERS: usize = 10;
const E2E_WORDS: usize = 40;

struct Outcome {
    id: u32,
    name: &'static str,
    pass: bool,
    detail: String,
}

fn report(id: u32, name: &'static str, pass: bool, detail: String) -> Outcome {
    println!("{} {id:>2} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    Outcome { id, name, pass, detail }
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

fn gradients() -> Outcome {
    let t = Instant::now();
    let results = gradcheck::run_suite(20);
    let elapsed = t.elapsed();
    let worst = results.iter().map(|r| r.worst).fold(0.0, f64::max);
    let seeds = results.iter().map(|r| r.seeds).min().unwrap_or(0);
    let pass = worst < 1e-4 && seeds >= 20 && elapsed < Duration::from_secs(60);
    let cases: Vec<String> = results.iter().map(|r| format!("{} {:.1e}", r.name, r.worst)).collect();
    report(
        1,
        "gradient checks",
        pass,
        format!("worst rel err {worst:.2e} over {seeds} seeds [{}] in {:.1}s", cases.join(", "), secs(elapsed)),
    )
}

fn elastic_net() -> Outcome {
    let t = Instant::now();
    let r = enet::run_suite();
    let elapsed = t.elapsed();
    let pass = r.least_squares <= 1e-6
        && r.ridge <= 1e-6
        && r.zero_exact
        && r.monotone_instances == r.instances
        && r.instances >= 50
        && elapsed < Duration::from_secs(30);
    report(
        2,
        "elastic net oracles",
        pass,
        format!(
            "ls {:.1e}, ridge {:.1e}, exact zeros {}, monotone {}/{}, kkt {:.1e}, {:.1}s",
            r.least_squares,
            r.ridge,
            r.zero_exact,
            r.monotone_instances,
            r.instances,
            r.kkt,
            secs(elapsed)
        ),
    )
}

fn divergence() -> Outcome {
    let hand = saliency::hand_value_error();
    let p = saliency::run_properties(300);
    let pass = hand <= 1e-12 && p.diagonal_zero && p.nonnegative && p.permutation_consistent && p.oracle_entrywise;
    report(
        3,
        "KL and saliency",
        pass,
        format!(
            "hand values err {hand:.1e}; {} sets: diagonal zero {}, nonnegative {}, permutation {}, oracle {}",
            p.sets, p.diagonal_zero, p.nonnegative, p.permutation_consistent, p.oracle_entrywise
        ),
    )
}

fn svm_suite() -> Outcome {
    let r = svm::run_suite();
    let pass = r.max_alpha_excess <= 1e-6 && r.max_dual_sum <= 1e-6 && r.max_oracle_gap <= 1e-8 && r.training_accuracy == 1.0;
    report(
        4,
        "SVM",
        pass,
        format!(
            "max(|a|-C) {:.1e}, |sum ay| {:.1e}, oracle gap {:.1e}, train acc {:.3}",
            r.max_alpha_excess, r.max_dual_sum, r.max_oracle_gap, r.training_accuracy
        ),
    )
}

fn sift_suite() -> Outcome {
    let constant_empty = [(64, 48, 173u8), (120, 90, 255), (200, 70, 0)].iter().all(|&(w, h, v)| {
        let pyr = DoGPyramid::build(&GrayImage::filled(w, h, v), 3, 3, 1.6).unwrap();
        let flat = pyr.dogs.iter().flatten().all(|d| d.data.iter().all(|x| x.abs() < 1e-9));
        flat && detect(&pyr, 0.03, 10.0).unwrap().is_empty()
    });
    let tr = sift::translation(6);
    let translation = tr.compared > 0 && tr.unmatched == 0 && tr.worst_offset <= 1.0;
    let sc = sift::intensity_scaling(6);
    let scaling = sc.compared > 0 && sc.unmatched == 0 && sc.worst_offset <= 0.5 && sc.worst_scale <= 0.05;
    let mut exact = true;
    for seed in 0..3 {
        let pyr = DoGPyramid::build(&sift::test_word(seed), 4, 3, 1.6).unwrap();
        for (g, d) in pyr.gaussians.iter().zip(&pyr.dogs) {
            for (i, level) in d.iter().enumerate() {
                exact &= level
                    .data
                    .iter()
                    .zip(g[i + 1].data.iter().zip(&g[i].data))
                    .all(|(v, (hi, lo))| v.to_bits() == (hi - lo).to_bits());
            }
        }
    }
    report(
        5,
        "SIFT",
        constant_empty && translation && scaling && exact,
        format!(
            "constant empty {constant_empty}; shift (8,8): {}/{} matched, worst {:.2}px; \
             intensity x0.5: {}/{} matched, worst {:.2}px / {:.1}% scale; DoG bit-exact {exact}",
            tr.compared - tr.unmatched,
            tr.compared,
            tr.worst_offset,
            sc.compared - sc.unmatched,
            sc.compared,
            sc.worst_offset,
            100.0 * sc.worst_scale
        ),
    )
}

fn patch_normalization() -> Outcome {
    let mut square = GrayImage::filled(105, 105, 0);
    for y in 0..105 {
        for x in 0..105 {
            square.set(x, y, ((x * 7 + y * 13) % 256) as u8);
        }
    }
    let identity = normalize_patch(&square).unwrap().pixels == square;

    let wide = normalize_patch(&GrayImage::filled(210, 105, 0)).unwrap().pixels;
    let (fw, fh) = fitted_size(210, 105, 105);
    let top = (105 - fh) / 2;
    let mut centred = (fw, fh) == (105, 53);
    for y in 0..105 {
        let expect = if (top..top + fh).contains(&y) { 0 } else { 255 };
        centred &= (0..105).all(|x| wide.get(x, y) == expect);
    }
    report(
        6,
        "patch normalization",
        identity && centred,
        format!("105x105 identity {identity}; 210x105 -> {fw}x{fh} rows {top}..{} on white {centred}", top + fh),
    )
}

struct E2eRun {
    experiment: Experiment,
    elapsed: Duration,
    /// results_csv and summary_json per mode, then the ablation table.
    artifacts: Vec<String>,
}

fn e2e_run() -> E2eRun {
    let t = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let corpus = generate_synthetic(E2E_SEED, E2E_WRITERS, E2E_WORDS, dir.path()).unwrap();
    let cfg = PipelineConfig::default().with_seed(E2E_SEED);
    let experiment = run_experiment(&cfg, &corpus, &FusionMode::ALL, true).unwrap();
    let elapsed = t.elapsed();
    let mut artifacts = Vec::new();
    for r in &experiment.reports {
        artifacts.push(results_csv(&r.results, cfg.topk));
        artifacts.push(summary_json(&r.summary).unwrap());
    }
    artifacts.push(experiment.ablation_csv());
    E2eRun {
        experiment,
        elapsed,
        artifacts,
    }
}

fn end_to_end(run: &E2eRun) -> Outcome {
    let top1 = |m| run.experiment.report(m).map_or(0.0, |r| r.summary.top1);
    let (b, s, w) = (top1(FusionMode::Baseline), top1(FusionMode::Sparse), top1(FusionMode::Weighted));
    let pass = w >= 0.90 && w >= s - 0.02 && s >= b - 0.02 && run.elapsed < Duration::from_secs(20 * 60);
    report(
        7,
        "end-to-end synthetic run",
        pass,
        format!(
            "seed {E2E_SEED}, {E2E_WRITERS}x{E2E_WORDS}: weighted top1 {w:.4}, sparse {s:.4}, baseline {b:.4}, {:.0}s",
            secs(run.elapsed)
        ),
    )
}

fn word_count(run: &E2eRun) -> Outcome {
    let curve = run
        .experiment
        .report(FusionMode::Weighted)
        .map(|r| r.summary.curve.clone())
        .unwrap_or_default();
    let at = |k: usize| curve.iter().find(|p| p.words == k);
    let (one, four) = (at(1), at(4));
    let pass = matches!((one, four), (Some(a), Some(b)) if b.accuracy >= a.accuracy && a.per_resample.len() == 5 && b.per_resample.len() == 5);
    let points: Vec<String> = curve.iter().map(|p| format!("{}:{:.3}", p.words, p.accuracy)).collect();
    report(8, "word-count sensitivity", pass, format!("mean over 5 resamples [{}]", points.join(" ")))
}

fn fusion_algebra() -> Outcome {
    let r = fusion::run(2000);
    let pass = r.single_identity && r.permutation_invariant && r.top1_le_top5 && r.monotone_invariant && r.sort_oracle;
    report(
        9,
        "fusion algebra",
        pass,
        format!(
            "{} trials: identity {}, permutation {}, top1<=top5 {}, monotone {}, sort oracle {}",
            r.trials, r.single_identity, r.permutation_invariant, r.top1_le_top5, r.monotone_invariant, r.sort_oracle
        ),
    )
}

fn determinism(first: &E2eRun, second: &E2eRun) -> Outcome {
    let same = first.artifacts == second.artifacts;
    let bytes: usize = first.artifacts.iter().map(String::len).sum();
    report(
        10,
        "determinism",
        same,
        format!("{} report files, {bytes} bytes, identical on rerun: {same}", first.artifacts.len()),
    )
}

fn main() -> ExitCode {
    let mut outcomes = vec![gradients(), elastic_net(), divergence(), svm_suite(), sift_suite(), patch_normalization()];
    let first = e2e_run();
    outcomes.push(end_to_end(&first));
    outcomes.push(word_count(&first));
    outcomes.push(fusion_algebra());
    let second = e2e_run();
    outcomes.push(determinism(&first, &second));

    let failed: Vec<&Outcome> = outcomes.iter().filter(|o| !o.pass).collect();
    println!("acceptance: {}/{} criteria passed", outcomes.len() - failed.len(), outcomes.len());
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        for o in failed {
            eprintln!("failed criterion {} ({}): {}", o.id, o.name, o.detail);
        }
        ExitCode::FAILURE
    }
}
