//! Weighted descriptors, one-vs-all RBF SVMs trained by SMO, and score fusion.

use std::collections::BTreeMap;

use log::{debug, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sparsepca::CoefficientMatrix;

/// Descriptor rows with their writer labels.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedDescriptors {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
    pub writers: Vec<u32>,
}

impl WeightedDescriptors {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>, writers: Vec<u32>) -> Result<Self> {
        if values.len() != rows * cols || writers.len() != rows {
            return Err(Error::dim(format!(
                "{} values and {} labels for a {rows}x{cols} matrix",
                values.len(),
                writers.len()
            )));
        }
        Ok(Self {
            rows,
            cols,
            values,
            writers,
        })
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }
}

/// Scales column `k` of `z` by `w[k]`.
pub fn weight_descriptors(z: &CoefficientMatrix, w: &[f64], writers: &[u32]) -> Result<WeightedDescriptors> {
    if w.len() != z.cols {
        return Err(Error::dim(format!("{} weights for {} components", w.len(), z.cols)));
    }
    let mut values = z.values.clone();
    if z.cols > 0 {
        for row in values.chunks_mut(z.cols) {
            for (v, wk) in row.iter_mut().zip(w) {
                *v *= wk;
            }
        }
    }
    WeightedDescriptors::new(z.rows, z.cols, values, writers.to_vec())
}

pub fn rbf(a: &[f64], b: &[f64], gamma: f64) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    (-gamma * d2).exp()
}

/// Dense symmetric RBF kernel over all descriptor rows.
pub struct KernelMatrix {
    n: usize,
    values: Vec<f64>,
}

impl KernelMatrix {
    pub fn new(data: &WeightedDescriptors, gamma: f64) -> Self {
        let n = data.rows;
        let norms: Vec<f64> = (0..n).map(|i| data.row(i).iter().map(|v| v * v).sum()).collect();
        let values: Vec<f64> = (0..n)
            .into_par_iter()
            .flat_map_iter(|i| {
                let ri = data.row(i);
                let norms = &norms;
                (0..n).map(move |j| {
                    let dot: f64 = ri.iter().zip(data.row(j)).map(|(a, b)| a * b).sum();
                    (-gamma * (norms[i] + norms[j] - 2.0 * dot).max(0.0)).exp()
                })
            })
            .collect();
        Self { n, values }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }
}

pub const KKT_TOLERANCE: f64 = 1e-3;
const TAU: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct SmoSolution {
    pub alpha: Vec<f64>,
    /// Decision offset: `f(x) = sum_i alpha_i y_i K(x_i, x) + bias`.
    pub bias: f64,
    pub iterations: usize,
}

/// Solves the soft-margin dual on the rows `idx` of `kernel` with labels `y` in {-1, +1}
/// and per-class bounds, using second-order working set selection.
pub fn smo(kernel: &KernelMatrix, idx: &[usize], y: &[f64], c_pos: f64, c_neg: f64, tol: f64) -> SmoSolution {
    let n = idx.len();
    let bound = |t: usize| if y[t] > 0.0 { c_pos } else { c_neg };
    let k = |a: usize, b: usize| kernel.get(idx[a], idx[b]);
    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    let max_iter = (100 * n).max(10_000_000);
    let mut iterations = 0;
    while iterations < max_iter {
        let is_upper = |a: &[f64], t: usize| a[t] >= bound(t);
        let is_lower = |a: &[f64], t: usize| a[t] <= 0.0;
        let mut gmax = f64::NEG_INFINITY;
        let mut i = usize::MAX;
        for t in 0..n {
            let v = if y[t] > 0.0 {
                (!is_upper(&alpha, t)).then_some(-grad[t])
            } else {
                (!is_lower(&alpha, t)).then_some(grad[t])
            };
            if let Some(v) = v {
                if v >= gmax {
                    gmax = v;
                    i = t;
                }
            }
        }
        if i == usize::MAX {
            break;
        }
        let mut gmax2 = f64::NEG_INFINITY;
        let mut j = usize::MAX;
        let mut best = f64::INFINITY;
        for t in 0..n {
            let (eligible, gd, g2) = if y[t] > 0.0 {
                (!is_lower(&alpha, t), gmax + grad[t], grad[t])
            } else {
                (!is_upper(&alpha, t), gmax - grad[t], -grad[t])
            };
            if !eligible {
                continue;
            }
            gmax2 = gmax2.max(g2);
            if gd > 0.0 {
                let quad = k(i, i) + k(t, t) - 2.0 * k(i, t);
                let obj = -(gd * gd) / if quad > 0.0 { quad } else { TAU };
                if obj <= best {
                    best = obj;
                    j = t;
                }
            }
        }
        if gmax + gmax2 < tol || j == usize::MAX {
            break;
        }
        iterations += 1;

        let (ci, cj) = (bound(i), bound(j));
        let (old_i, old_j) = (alpha[i], alpha[j]);
        let qij = y[i] * y[j] * k(i, j);
        if y[i] != y[j] {
            let quad = (k(i, i) + k(j, j) + 2.0 * qij).max(TAU);
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > ci - cj {
                if alpha[i] > ci {
                    alpha[i] = ci;
                    alpha[j] = ci - diff;
                }
            } else if alpha[j] > cj {
                alpha[j] = cj;
                alpha[i] = cj + diff;
            }
        } else {
            let quad = (k(i, i) + k(j, j) - 2.0 * qij).max(TAU);
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > ci {
                if alpha[i] > ci {
                    alpha[i] = ci;
                    alpha[j] = sum - ci;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > cj {
                if alpha[j] > cj {
                    alpha[j] = cj;
                    alpha[i] = sum - cj;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
        for t in 0..n {
            grad[t] += y[t] * (y[i] * k(i, t) * di + y[j] * k(j, t) * dj);
        }
    }
    if iterations >= max_iter {
        warn!("SMO stopped at the iteration cap ({max_iter})");
    }

    // Offset from free vectors, or the midpoint of the feasible interval.
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut free, mut sum_free) = (0usize, 0.0);
    for t in 0..n {
        let yg = y[t] * grad[t];
        if alpha[t] >= bound(t) {
            if y[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if alpha[t] <= 0.0 {
            if y[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            free += 1;
            sum_free += yg;
        }
    }
    let rho = if free > 0 { sum_free / free as f64 } else { (ub + lb) / 2.0 };
    SmoSolution {
        alpha,
        bias: -rho,
        iterations,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmConfig {
    pub c_grid: Vec<f64>,
    /// Fixed gamma values; the data-scaled `1 / (L Var)` is always prepended.
    pub gamma_grid: Vec<f64>,
    pub folds: usize,
    pub seed: u64,
    pub tolerance: f64,
}

impl Default for SvmConfig {
    fn default() -> Self {
        Self {
            c_grid: vec![0.1, 1.0, 10.0, 100.0],
            gamma_grid: vec![0.01, 0.1, 1.0],
            folds: 3,
            seed: 0,
            tolerance: KKT_TOLERANCE,
        }
    }
}

/// One-vs-all RBF model for a single writer.
#[derive(Debug, Clone, PartialEq)]
pub struct WriterModel {
    pub writer: u32,
    pub support_vectors: Vec<Vec<f64>>,
    /// `alpha_i y_i` for each support vector.
    pub dual_coef: Vec<f64>,
    pub bias: f64,
    pub c: f64,
    pub gamma: f64,
    pub cv_accuracy: f64,
    pub positives: usize,
    pub negatives: usize,
}

const MODEL_MAGIC: &[u8; 4] = b"WSVM";
const MODEL_VERSION: u32 = 1;

impl WriterModel {
    pub fn dim(&self) -> usize {
        self.support_vectors.first().map_or(0, Vec::len)
    }

    pub fn decision(&self, x: &[f64]) -> Result<f64> {
        if !self.support_vectors.is_empty() && x.len() != self.dim() {
            return Err(Error::dim(format!("descriptor length {} for model of {}", x.len(), self.dim())));
        }
        Ok(self
            .support_vectors
            .iter()
            .zip(&self.dual_coef)
            .map(|(sv, a)| a * rbf(sv, x, self.gamma))
            .sum::<f64>()
            + self.bias)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MODEL_MAGIC);
        out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
        out.extend_from_slice(&self.writer.to_le_bytes());
        out.extend_from_slice(&(self.dim() as u64).to_le_bytes());
        out.extend_from_slice(&(self.support_vectors.len() as u64).to_le_bytes());
        out.extend_from_slice(&(self.positives as u64).to_le_bytes());
        out.extend_from_slice(&(self.negatives as u64).to_le_bytes());
        for v in [self.c, self.gamma, self.bias, self.cv_accuracy] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in &self.dual_coef {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for sv in &self.support_vectors {
            for v in sv {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Bundle(format!("writer model: {m}"));
        let mut pos = 0usize;
        let mut take = |n: usize| -> Result<&[u8]> {
            let s = bytes.get(pos..pos + n).ok_or_else(|| bad("truncated"))?;
            pos += n;
            Ok(s)
        };
        if take(4)? != MODEL_MAGIC {
            return Err(bad("bad magic"));
        }
        let u32_at = |s: &[u8]| u32::from_le_bytes(s.try_into().expect("4 bytes"));
        let u64_at = |s: &[u8]| u64::from_le_bytes(s.try_into().expect("8 bytes")) as usize;
        let f64_at = |s: &[u8]| f64::from_le_bytes(s.try_into().expect("8 bytes"));
        let version = u32_at(take(4)?);
        if version != MODEL_VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let writer = u32_at(take(4)?);
        let dim = u64_at(take(8)?);
        let nsv = u64_at(take(8)?);
        let positives = u64_at(take(8)?);
        let negatives = u64_at(take(8)?);
        let c = f64_at(take(8)?);
        let gamma = f64_at(take(8)?);
        let bias = f64_at(take(8)?);
        let cv_accuracy = f64_at(take(8)?);
        let dual_coef = (0..nsv).map(|_| take(8).map(f64_at)).collect::<Result<Vec<_>>>()?;
        let support_vectors = (0..nsv)
            .map(|_| (0..dim).map(|_| take(8).map(f64_at)).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        if pos != bytes.len() {
            return Err(bad("trailing bytes"));
        }
        Ok(Self {
            writer,
            support_vectors,
            dual_coef,
            bias,
            c,
            gamma,
            cv_accuracy,
            positives,
            negatives,
        })
    }
}

pub fn sigmoid(f: f64) -> f64 {
    1.0 / (1.0 + (-f).exp())
}

pub fn score_fragment(model: &WriterModel, descriptor: &[f64]) -> Result<f64> {
    Ok(sigmoid(model.decision(descriptor)?))
}

/// `1 / (L Var)` over every descriptor entry, or `None` for constant data.
pub fn scaled_gamma(data: &WeightedDescriptors) -> Option<f64> {
    let n = data.values.len() as f64;
    let mean = data.values.iter().sum::<f64>() / n;
    let var = data.values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (var > 0.0 && data.cols > 0).then(|| 1.0 / (data.cols as f64 * var))
}

/// Per-class bounds: the minority (positive) class keeps `C`, the other class gets
/// `C n_pos / n_neg`.
fn class_bounds(c: f64, y: &[f64]) -> (f64, f64) {
    let pos = y.iter().filter(|v| **v > 0.0).count() as f64;
    let neg = y.len() as f64 - pos;
    if pos <= neg {
        (c, c * pos / neg)
    } else {
        (c * neg / pos, c)
    }
}

fn fit_subset(kernel: &KernelMatrix, idx: &[usize], y: &[f64], c: f64, tol: f64) -> SmoSolution {
    let (cp, cn) = class_bounds(c, y);
    smo(kernel, idx, y, cp, cn, tol)
}

/// Stratified fold assignment for one writer's binary labels.
fn stratified_folds(y: &[f64], folds: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut assign = vec![0usize; y.len()];
    for class in [1.0, -1.0] {
        let mut members: Vec<usize> = (0..y.len()).filter(|&i| y[i] == class).collect();
        members.shuffle(rng);
        for (k, i) in members.into_iter().enumerate() {
            assign[i] = k % folds;
        }
    }
    assign
}

/// Mean of per-class accuracies on held-out folds.
fn cv_balanced_accuracy(kernel: &KernelMatrix, y: &[f64], assign: &[usize], folds: usize, c: f64, tol: f64) -> f64 {
    let mut correct = [0usize; 2];
    let mut total = [0usize; 2];
    for f in 0..folds {
        let train: Vec<usize> = (0..y.len()).filter(|&i| assign[i] != f).collect();
        let ty: Vec<f64> = train.iter().map(|&i| y[i]).collect();
        let sol = fit_subset(kernel, &train, &ty, c, tol);
        for i in (0..y.len()).filter(|&i| assign[i] == f) {
            let fx: f64 = train
                .iter()
                .zip(&sol.alpha)
                .filter(|(_, a)| **a > 0.0)
                .map(|(&t, a)| a * y[t] * kernel.get(t, i))
                .sum::<f64>()
                + sol.bias;
            let cls = usize::from(y[i] > 0.0);
            total[cls] += 1;
            correct[cls] += usize::from((fx > 0.0) == (y[i] > 0.0));
        }
    }
    (0..2)
        .filter(|&c| total[c] > 0)
        .map(|c| correct[c] as f64 / total[c] as f64)
        .sum::<f64>()
        / 2.0
}

fn build_model(data: &WeightedDescriptors, kernel: &KernelMatrix, writer: u32, c: f64, gamma: f64, cv: f64, tol: f64) -> WriterModel {
    let idx: Vec<usize> = (0..data.rows).collect();
    let y: Vec<f64> = data.writers.iter().map(|&w| if w == writer { 1.0 } else { -1.0 }).collect();
    let sol = fit_subset(kernel, &idx, &y, c, tol);
    let mut support_vectors = Vec::new();
    let mut dual_coef = Vec::new();
    for (i, a) in sol.alpha.iter().enumerate() {
        if *a > 0.0 {
            support_vectors.push(data.row(i).to_vec());
            dual_coef.push(a * y[i]);
        }
    }
    let positives = y.iter().filter(|v| **v > 0.0).count();
    WriterModel {
        writer,
        support_vectors,
        dual_coef,
        bias: sol.bias,
        c,
        gamma,
        cv_accuracy: cv,
        positives,
        negatives: y.len() - positives,
    }
}

/// Trains a fixed-parameter one-vs-all model for every writer.
pub fn train_fixed(data: &WeightedDescriptors, c: f64, gamma: f64, tol: f64) -> Result<Vec<WriterModel>> {
    let writers = check_writers(data)?;
    let kernel = KernelMatrix::new(data, gamma);
    Ok(writers
        .par_iter()
        .map(|&w| build_model(data, &kernel, w, c, gamma, f64::NAN, tol))
        .collect())
}

fn check_writers(data: &WeightedDescriptors) -> Result<Vec<u32>> {
    let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
    for &w in &data.writers {
        *counts.entry(w).or_default() += 1;
    }
    if counts.len() < 2 {
        return Err(Error::Corpus(format!("need at least 2 writers, got {}", counts.len())));
    }
    if let Some((w, n)) = counts.iter().find(|(_, n)| **n < 2) {
        return Err(Error::Corpus(format!("writer {w} has {n} fragment(s); need at least 2")));
    }
    Ok(counts.into_keys().collect())
}

/// Grid-searched one-vs-all models, one per writer in ascending id order.
pub fn train_ovr_svm(data: &WeightedDescriptors, cfg: &SvmConfig) -> Result<Vec<WriterModel>> {
    let writers = check_writers(data)?;
    if cfg.c_grid.is_empty() || cfg.c_grid.iter().any(|c| !(*c > 0.0)) {
        return Err(Error::param("C grid must be non-empty and positive"));
    }
    if cfg.folds < 2 {
        return Err(Error::param("cross-validation needs at least 2 folds"));
    }
    let mut gammas: Vec<f64> = scaled_gamma(data).into_iter().collect();
    gammas.extend(cfg.gamma_grid.iter().copied().filter(|g| *g > 0.0));
    if gammas.is_empty() {
        return Err(Error::param("gamma grid is empty"));
    }
    let mut c_grid = cfg.c_grid.clone();
    c_grid.sort_by(f64::total_cmp);

    let labels: Vec<Vec<f64>> = writers
        .iter()
        .map(|&w| data.writers.iter().map(|&x| if x == w { 1.0 } else { -1.0 }).collect())
        .collect();
    let assignments: Vec<(Vec<usize>, usize)> = writers
        .iter()
        .zip(&labels)
        .map(|(&w, y)| {
            let pos = y.iter().filter(|v| **v > 0.0).count();
            let folds = cfg.folds.min(pos);
            if folds < cfg.folds {
                warn!("writer {w}: {pos} positives, using {folds} folds");
            }
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (u64::from(w) << 20));
            (stratified_folds(y, folds, &mut rng), folds)
        })
        .collect();

    // best[(writer)] = (accuracy, C, gamma); ties keep the smaller C, then smaller gamma.
    let mut best: Vec<Option<(f64, f64, f64)>> = vec![None; writers.len()];
    let mut order: Vec<f64> = gammas.clone();
    order.sort_by(f64::total_cmp);
    order.dedup();
    for &gamma in &order {
        let kernel = KernelMatrix::new(data, gamma);
        let scores: Vec<Vec<f64>> = (0..writers.len())
            .into_par_iter()
            .map(|wi| {
                let (assign, folds) = &assignments[wi];
                c_grid
                    .iter()
                    .map(|&c| cv_balanced_accuracy(&kernel, &labels[wi], assign, *folds, c, cfg.tolerance))
                    .collect()
            })
            .collect();
        for (wi, accs) in scores.into_iter().enumerate() {
            for (&c, acc) in c_grid.iter().zip(accs) {
                let better = match best[wi] {
                    None => true,
                    Some((a, bc, bg)) => acc > a || (acc == a && (c < bc || (c == bc && gamma < bg))),
                };
                if better {
                    best[wi] = Some((acc, c, gamma));
                }
            }
        }
    }

    let mut by_gamma: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for (wi, b) in best.iter().enumerate() {
        by_gamma.entry(b.expect("grid is non-empty").2.to_bits()).or_default().push(wi);
    }
    let mut models: Vec<Option<WriterModel>> = vec![None; writers.len()];
    for (bits, members) in by_gamma {
        let gamma = f64::from_bits(bits);
        let kernel = KernelMatrix::new(data, gamma);
        let built: Vec<(usize, WriterModel)> = members
            .par_iter()
            .map(|&wi| {
                let (acc, c, _) = best[wi].expect("set above");
                (wi, build_model(data, &kernel, writers[wi], c, gamma, acc, cfg.tolerance))
            })
            .collect();
        for (wi, m) in built {
            debug!(
                "writer {}: C {} gamma {:.4} cv {:.3}, {} support vectors",
                m.writer,
                m.c,
                m.gamma,
                m.cv_accuracy,
                m.support_vectors.len()
            );
            models[wi] = Some(m);
        }
    }
    Ok(models.into_iter().map(|m| m.expect("every writer trained")).collect())
}

/// Per-writer scores in `[0, 1]`, aligned with `writers`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreVector {
    pub writers: Vec<u32>,
    pub scores: Vec<f64>,
    /// Fragments (or words) averaged into the scores.
    pub evidence: usize,
}

/// Sigmoid scores of one descriptor under every model.
pub fn score_all(models: &[WriterModel], descriptor: &[f64]) -> Result<Vec<f64>> {
    models.iter().map(|m| score_fragment(m, descriptor)).collect()
}

/// Mean of equal-length score rows.
fn mean_rows(rows: &[&[f64]]) -> Vec<f64> {
    let w = rows[0].len();
    let mut acc = vec![0.0; w];
    for r in rows {
        for (a, v) in acc.iter_mut().zip(r.iter()) {
            *a += v;
        }
    }
    acc.iter_mut().for_each(|a| *a /= rows.len() as f64);
    acc
}

/// Mean fragment score per writer.
pub fn fuse_word(writers: &[u32], fragment_scores: &[Vec<f64>]) -> Result<ScoreVector> {
    if fragment_scores.is_empty() {
        return Err(Error::NoEvidence("word has no scored fragments".into()));
    }
    if fragment_scores.iter().any(|s| s.len() != writers.len()) {
        return Err(Error::dim("fragment scores do not match the writer list"));
    }
    let rows: Vec<&[f64]> = fragment_scores.iter().map(Vec::as_slice).collect();
    Ok(ScoreVector {
        writers: writers.to_vec(),
        scores: mean_rows(&rows),
        evidence: fragment_scores.len(),
    })
}

/// Mean word score per writer.
pub fn fuse_page(word_scores: &[ScoreVector]) -> Result<ScoreVector> {
    let first = word_scores
        .first()
        .ok_or_else(|| Error::NoEvidence("page has no scored words".into()))?;
    if word_scores.iter().any(|s| s.writers != first.writers) {
        return Err(Error::dim("word scores cover different writers"));
    }
    let rows: Vec<&[f64]> = word_scores.iter().map(|s| s.scores.as_slice()).collect();
    Ok(ScoreVector {
        writers: first.writers.clone(),
        scores: mean_rows(&rows),
        evidence: word_scores.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    /// Writers by descending score; exact ties go to the smaller id.
    pub ranking: Vec<u32>,
    pub scores: Vec<f64>,
}

impl Prediction {
    pub fn top(&self) -> u32 {
        self.ranking[0]
    }

    pub fn rank_of(&self, writer: u32) -> Option<usize> {
        self.ranking.iter().position(|&w| w == writer)
    }
}

pub fn predict(scores: &ScoreVector) -> Result<Prediction> {
    if scores.writers.is_empty() {
        return Err(Error::NoEvidence("no enrolled writers".into()));
    }
    let mut order: Vec<usize> = (0..scores.writers.len()).collect();
    order.sort_by(|&a, &b| {
        scores.scores[b]
            .total_cmp(&scores.scores[a])
            .then(scores.writers[a].cmp(&scores.writers[b]))
    });
    Ok(Prediction {
        ranking: order.iter().map(|&i| scores.writers[i]).collect(),
        scores: order.iter().map(|&i| scores.scores[i]).collect(),
    })
}

/// Fraction of predictions whose truth is among the first `k` ranked writers.
pub fn evaluate_topk(predictions: &[Prediction], truths: &[u32], k: usize) -> Result<f64> {
    if predictions.len() != truths.len() {
        return Err(Error::dim(format!("{} predictions, {} truths", predictions.len(), truths.len())));
    }
    if k == 0 {
        return Err(Error::param("k must be >= 1"));
    }
    if predictions.is_empty() {
        return Err(Error::NoEvidence("no predictions to evaluate".into()));
    }
    let hits = predictions
        .iter()
        .zip(truths)
        .filter(|(p, t)| p.ranking.iter().take(k).any(|w| w == *t))
        .count();
    Ok(hits as f64 / predictions.len() as f64)
}
