//! Sparse principal components: elastic-net regression of each SVD component score on
//! the data, normalized into a loading vector.

use log::{debug, warn};
use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CD_TOLERANCE: f64 = 1e-8;
pub const CD_MAX_SWEEPS: usize = 10_000;

/// Row-major `rows x cols` matrix of fragment embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
    centered: bool,
}

impl DataMatrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 || values.len() != rows * cols {
            return Err(Error::dim(format!("{} values for a {rows}x{cols} matrix", values.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::param("data matrix contains non-finite values"));
        }
        Ok(Self {
            rows,
            cols,
            values,
            centered: false,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::dim("rows differ in length"));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    /// Marks the data as already centered; projection will not subtract means.
    pub fn assume_centered(mut self) -> Self {
        self.centered = true;
        self
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_centered(&self) -> bool {
        self.centered
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column_means(&self) -> Vec<f64> {
        let mut means = vec![0.0; self.cols];
        for i in 0..self.rows {
            for (m, v) in means.iter_mut().zip(self.row(i)) {
                *m += v;
            }
        }
        means.iter_mut().for_each(|m| *m /= self.rows as f64);
        means
    }

    /// Subtracts `means` from every row and flags the result as centered.
    pub fn center_with(&self, means: &[f64]) -> Result<Self> {
        if means.len() != self.cols {
            return Err(Error::dim(format!("{} means for {} columns", means.len(), self.cols)));
        }
        let mut values = self.values.clone();
        for row in values.chunks_mut(self.cols) {
            for (v, m) in row.iter_mut().zip(means) {
                *v -= m;
            }
        }
        Ok(Self {
            values,
            centered: true,
            ..*self
        })
    }

    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let mut values = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            values.extend_from_slice(self.row(i));
        }
        Self {
            rows: idx.len(),
            values,
            ..*self
        }
    }

    fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.values)
    }
}

/// Flips `v` so its first entry above `1e-12` in magnitude is positive. Returns whether it flipped.
pub fn canonicalize_sign(v: &mut [f64]) -> bool {
    match v.iter().find(|x| x.abs() > 1e-12) {
        Some(&x) if x < 0.0 => {
            v.iter_mut().for_each(|x| *x = -*x);
            true
        }
        _ => false,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvdTargets {
    /// Component scores `Z = X V`, one column per component, each of length N.
    pub z: Vec<Vec<f64>>,
    /// Loadings, one column per component, each of length D.
    pub v: Vec<Vec<f64>>,
    /// All singular values in descending order.
    pub singular_values: Vec<f64>,
}

/// Leading `l` right singular vectors of `x` and the matching scores `X V`.
pub fn svd_principal_targets(x: &DataMatrix, l: usize) -> Result<SvdTargets> {
    let k = x.rows.min(x.cols);
    if l == 0 || l > k {
        return Err(Error::param(format!("component count {l} must lie in 1..={k}")));
    }
    let m = x.to_dmatrix();
    let svd = m.clone().svd(false, true);
    let vt = svd.v_t.as_ref().expect("requested V^T");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let singular_values = order.iter().map(|&i| svd.singular_values[i]).collect();
    let mut v = Vec::with_capacity(l);
    let mut z = Vec::with_capacity(l);
    for &i in order.iter().take(l) {
        let mut col: Vec<f64> = vt.row(i).iter().copied().collect();
        canonicalize_sign(&mut col);
        let vc = DMatrix::from_column_slice(x.cols, 1, &col);
        z.push((&m * vc).as_slice().to_vec());
        v.push(col);
    }
    Ok(SvdTargets { z, v, singular_values })
}

/// Cached `X^T X` for repeated elastic-net fits on one data matrix.
#[derive(Debug, Clone)]
pub struct Gram {
    x: DMatrix<f64>,
    g: DMatrix<f64>,
}

impl Gram {
    pub fn new(x: &DataMatrix) -> Self {
        let m = x.to_dmatrix();
        let g = m.transpose() * &m;
        Self { x: m, g }
    }

    pub fn dim(&self) -> usize {
        self.g.nrows()
    }

    /// `X^T z`
    pub fn correlate(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.x.nrows() {
            return Err(Error::dim(format!("target length {} for {} rows", z.len(), self.x.nrows())));
        }
        let zc = DMatrix::from_column_slice(z.len(), 1, z);
        Ok((self.x.transpose() * zc).as_slice().to_vec())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadingFit {
    pub beta: Vec<f64>,
    pub sweeps: usize,
    /// Objective after each sweep.
    pub objective: Vec<f64>,
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// Feature-sign steps on the current active set. Each step solves
/// `(G_AA + lambda I) b_A = c_A - lambda1/2 sign(beta_A)` exactly; if signs flip, `beta`
/// moves to the best zero crossing on the way there, which drops a coordinate and lowers
/// the objective. Returns true once `beta` satisfies every optimality condition.
fn feature_sign(g: &DMatrix<f64>, c: &[f64], lambda: f64, lambda1: f64, beta: &mut [f64]) -> bool {
    let d = beta.len();
    for _ in 0..=d {
        let active: Vec<usize> = (0..d).filter(|&j| beta[j] != 0.0).collect();
        if active.is_empty() {
            return false;
        }
        let n = active.len();
        let a = DMatrix::from_fn(n, n, |r, k| g[(active[r], active[k])] + if r == k { lambda } else { 0.0 });
        let rhs = DVector::from_fn(n, |r, _| c[active[r]] - lambda1 / 2.0 * beta[active[r]].signum());
        let Some(chol) = a.cholesky() else {
            return false;
        };
        let sol = chol.solve(&rhs);
        let mut target = vec![0.0; d];
        for (r, &j) in active.iter().enumerate() {
            target[j] = sol[r];
        }
        // Along beta + t (target - beta) the smooth part is quadratic in t.
        let dir: Vec<f64> = (0..d).map(|j| target[j] - beta[j]).collect();
        let (mut lin, mut quad) = (0.0, 0.0);
        for &j in &active {
            let (mut gb_j, mut gd_j) = (0.0, 0.0);
            for &k in &active {
                gb_j += g[(j, k)] * beta[k];
                gd_j += g[(j, k)] * dir[k];
            }
            lin += 2.0 * (gb_j - c[j] + lambda * beta[j]) * dir[j];
            quad += (gd_j + lambda * dir[j]) * dir[j];
        }
        let f = |t: f64| lin * t + quad * t * t + lambda1 * active.iter().map(|&j| (beta[j] + t * dir[j]).abs()).sum::<f64>();
        let current = f(0.0);
        let consistent = active.iter().all(|&j| target[j] != 0.0 && target[j].signum() == beta[j].signum());
        if consistent {
            if f(1.0) > current {
                return false;
            }
            beta.copy_from_slice(&target);
            let slack = lambda1 / 2.0 * (1.0 + 1e-9) + 1e-12;
            return (0..d).all(|j| {
                beta[j] != 0.0 || {
                    let gbj: f64 = active.iter().map(|&k| g[(j, k)] * beta[k]).sum();
                    (c[j] - gbj).abs() <= slack
                }
            });
        }
        // Best of the zero crossings and the target itself.
        let mut best: Option<(f64, f64, Option<usize>)> = None;
        let crossings = active
            .iter()
            .filter(|&&j| target[j] == 0.0 || target[j].signum() != beta[j].signum())
            .map(|&j| (beta[j] / (beta[j] - target[j]), Some(j)));
        for (t, j) in crossings.chain(std::iter::once((1.0, None))) {
            let v = f(t);
            if v < best.map_or(current, |b| b.0) {
                best = Some((v, t, j));
            }
        }
        let Some((_, t, crossing)) = best else {
            return false;
        };
        for k in 0..d {
            beta[k] += t * dir[k];
        }
        if let Some(j) = crossing {
            beta[j] = 0.0;
        }
    }
    false
}

/// Sweeps between feature-sign steps.
const FEATURE_SIGN_EVERY: usize = 50;

/// Minimizes `|z - X b|^2 + lambda |b|^2 + lambda1 |b|_1` by cyclic coordinate descent on
/// the Gram matrix, starting from zero. Descent crawls on ill-conditioned Grams, so every
/// few sweeps [`feature_sign`] jumps to the exact solution of the current sign pattern;
/// the fit ends there once the optimality conditions hold.
pub fn elastic_net(gram: &Gram, c: &[f64], zz: f64, lambda: f64, lambda1: f64) -> Result<LoadingFit> {
    if !(lambda >= 0.0) || !(lambda1 >= 0.0) {
        return Err(Error::param("elastic-net penalties must be >= 0"));
    }
    let d = gram.dim();
    if c.len() != d {
        return Err(Error::dim(format!("correlation length {} for {d} features", c.len())));
    }
    let g = &gram.g;
    let mut beta = vec![0.0; d];
    let mut gb = vec![0.0; d];
    let objective_of = |beta: &[f64], gb: &[f64]| -> f64 {
        let mut obj = zz;
        for j in 0..d {
            obj += beta[j] * gb[j] - 2.0 * c[j] * beta[j] + lambda * beta[j] * beta[j] + lambda1 * beta[j].abs();
        }
        obj
    };
    let mut history = Vec::new();
    let mut prev = zz;
    for sweep in 1..=CD_MAX_SWEEPS {
        let mut max_change = 0.0f64;
        for j in 0..d {
            let gjj = g[(j, j)];
            let denom = gjj + lambda;
            let new = if denom > 0.0 {
                soft_threshold(c[j] - gb[j] + gjj * beta[j], lambda1 / 2.0) / denom
            } else {
                0.0
            };
            let delta = new - beta[j];
            if delta != 0.0 {
                beta[j] = new;
                for (k, v) in gb.iter_mut().enumerate() {
                    *v += delta * g[(k, j)];
                }
                max_change = max_change.max(delta.abs());
            }
        }
        let obj = objective_of(&beta, &gb);
        debug_assert!(
            obj <= prev + 1e-9 * prev.abs().max(1.0),
            "objective rose from {prev} to {obj} at sweep {sweep}"
        );
        prev = obj;
        history.push(obj);
        if max_change >= CD_TOLERANCE && sweep % FEATURE_SIGN_EVERY == 0 {
            let done = feature_sign(g, c, lambda, lambda1, &mut beta);
            for (k, v) in gb.iter_mut().enumerate() {
                *v = (0..d).filter(|&j| beta[j] != 0.0).map(|j| g[(k, j)] * beta[j]).sum();
            }
            let obj = objective_of(&beta, &gb);
            debug_assert!(obj <= prev + 1e-9 * prev.abs().max(1.0), "feature-sign step raised the objective");
            prev = obj;
            *history.last_mut().expect("pushed this sweep") = obj;
            if done {
                return Ok(LoadingFit {
                    beta,
                    sweeps: sweep,
                    objective: history,
                });
            }
        }
        if max_change < CD_TOLERANCE {
            return Ok(LoadingFit {
                beta,
                sweeps: sweep,
                objective: history,
            });
        }
        if sweep == CD_MAX_SWEEPS {
            return Err(Error::NoConvergence {
                sweeps: sweep,
                max_change,
                beta,
            });
        }
    }
    unreachable!("loop returns on the final sweep")
}

/// Elastic-net loading for one target column.
pub fn fit_sparse_loading(x: &DataMatrix, z: &[f64], lambda: f64, lambda1: f64) -> Result<LoadingFit> {
    let gram = Gram::new(x);
    let c = gram.correlate(z)?;
    let zz = z.iter().map(|v| v * v).sum();
    elastic_net(&gram, &c, zz, lambda, lambda1)
}

/// `beta / |beta|`, keeping the zero pattern.
pub fn normalize_loading(beta: &[f64]) -> Result<Vec<f64>> {
    let norm = beta.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::Degenerate("all-zero loading".into()));
    }
    Ok(beta.iter().map(|v| v / norm).collect())
}

/// How the sparsity penalty is chosen for each component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", content = "value", rename_all = "lowercase")]
pub enum Lambda1 {
    /// The same penalty for every component.
    Absolute(f64),
    /// A fraction of the smallest penalty that zeroes component k, `2 |X^T Z_k|_inf`.
    Relative(f64),
    /// Relative fractions from [`LAMBDA1_GRID`], picked by held-out reconstruction.
    Auto,
}

pub const LAMBDA1_GRID: [f64; 5] = [0.02, 0.05, 0.1, 0.2, 0.35];
pub const TARGET_SPARSITY: (f64, f64) = (0.5, 0.9);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpcaConfig {
    /// Component count; 0 selects `min(64, D / 4)`.
    pub components: usize,
    pub lambda: f64,
    pub lambda1: Lambda1,
    /// Cap on rows used for fitting; 0 uses all.
    pub sample_cap: usize,
    pub seed: u64,
}

impl Default for SpcaConfig {
    fn default() -> Self {
        Self {
            components: 0,
            lambda: 1e-4,
            lambda1: Lambda1::Auto,
            sample_cap: 0,
            seed: 0,
        }
    }
}

impl SpcaConfig {
    pub fn component_count(&self, d: usize) -> usize {
        if self.components > 0 {
            self.components
        } else {
            (d / 4).clamp(1, 64)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseBasis {
    pub dim: usize,
    /// Unit-norm loading columns, each of length `dim`.
    pub loadings: Vec<Vec<f64>>,
    pub lambda: f64,
    pub lambda1: Lambda1,
    /// Absolute penalty applied to each retained component.
    pub lambda1_used: Vec<f64>,
    /// Fraction of zero entries per retained column.
    pub sparsity: Vec<f64>,
    /// Indices of SVD components whose loading came out all zero.
    pub dropped: Vec<usize>,
    pub means: Vec<f64>,
}

impl SparseBasis {
    pub fn components(&self) -> usize {
        self.loadings.len()
    }

    pub fn mean_sparsity(&self) -> f64 {
        self.sparsity.iter().sum::<f64>() / self.sparsity.len() as f64
    }
}

/// Per-component penalties for a relative fraction.
fn relative_penalties(gram: &Gram, targets: &SvdTargets, frac: f64) -> Result<Vec<f64>> {
    targets
        .z
        .iter()
        .map(|z| {
            let c = gram.correlate(z)?;
            Ok(frac * 2.0 * c.iter().fold(0.0f64, |m, v| m.max(v.abs())))
        })
        .collect()
}

/// Fits one basis on centered data with explicit per-component penalties.
fn fit_with_penalties(
    x: &DataMatrix,
    gram: &Gram,
    targets: &SvdTargets,
    lambda: f64,
    penalties: &[f64],
    means: Vec<f64>,
    mode: Lambda1,
) -> Result<SparseBasis> {
    let l = targets.z.len();
    let fits: Vec<Result<Vec<f64>>> = targets
        .z
        .par_iter()
        .zip(penalties.par_iter())
        .map(|(z, &l1)| {
            let c = gram.correlate(z)?;
            let zz = z.iter().map(|v| v * v).sum();
            Ok(elastic_net(gram, &c, zz, lambda, l1)?.beta)
        })
        .collect();
    let mut basis = SparseBasis {
        dim: x.cols,
        loadings: Vec::new(),
        lambda,
        lambda1: mode,
        lambda1_used: Vec::new(),
        sparsity: Vec::new(),
        dropped: Vec::new(),
        means,
    };
    for (k, fit) in fits.into_iter().enumerate() {
        match normalize_loading(&fit?) {
            Ok(mut v) => {
                canonicalize_sign(&mut v);
                basis.sparsity.push(v.iter().filter(|x| **x == 0.0).count() as f64 / v.len() as f64);
                basis.loadings.push(v);
                basis.lambda1_used.push(penalties[k]);
            }
            Err(_) => basis.dropped.push(k),
        }
    }
    if !basis.dropped.is_empty() {
        warn!("dropped {} degenerate sparse components: {:?}", basis.dropped.len(), basis.dropped);
    }
    if basis.dropped.len() * 2 > l {
        return Err(Error::Degenerate(format!(
            "{} of {l} sparse components are all zero",
            basis.dropped.len()
        )));
    }
    Ok(basis)
}

/// Relative reconstruction error of `x` from its least-squares coefficients on `basis`.
fn reconstruction_error(x: &DataMatrix, basis: &SparseBasis) -> f64 {
    let xm = x.to_dmatrix();
    let v = DMatrix::from_fn(basis.dim, basis.components(), |i, j| basis.loadings[j][i]);
    let Some(pinv) = v.clone().pseudo_inverse(1e-12).ok() else {
        return f64::INFINITY;
    };
    let recon = &xm * pinv.transpose() * v.transpose();
    let denom = xm.norm();
    if denom == 0.0 {
        0.0
    } else {
        (xm - recon).norm() / denom
    }
}

fn fit_centered(x: &DataMatrix, l: usize, lambda: f64, mode: Lambda1, means: Vec<f64>) -> Result<SparseBasis> {
    let targets = svd_principal_targets(x, l)?;
    let gram = Gram::new(x);
    let penalties = match mode {
        Lambda1::Absolute(v) => vec![v; l],
        Lambda1::Relative(f) => relative_penalties(&gram, &targets, f)?,
        Lambda1::Auto => unreachable!("resolved by caller"),
    };
    fit_with_penalties(x, &gram, &targets, lambda, &penalties, means, mode)
}

/// Picks a relative fraction from the grid: among candidates whose mean sparsity falls
/// in the target band, the one with the lowest held-out reconstruction error; otherwise
/// the one closest to the band.
fn choose_fraction(x: &DataMatrix, l: usize, lambda: f64, seed: u64) -> Result<f64> {
    let n = x.rows;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5bca);
    let held = (n / 5).max(1);
    let mut idx: Vec<usize> = sample(&mut rng, n, n).into_vec();
    let (test_idx, train_idx) = idx.split_at_mut(held);
    train_idx.sort_unstable();
    test_idx.sort_unstable();
    let train = x.select_rows(train_idx);
    let means = train.column_means();
    let train = train.center_with(&means)?;
    let test = x.select_rows(test_idx).center_with(&means)?;
    let l = l.min(train.rows.min(train.cols));
    let mut best: Option<(bool, f64, f64)> = None;
    for &frac in &LAMBDA1_GRID {
        let basis = match fit_centered(&train, l, lambda, Lambda1::Relative(frac), means.clone()) {
            Ok(b) => b,
            Err(Error::Degenerate(_)) => continue,
            Err(e) => return Err(e),
        };
        let s = basis.mean_sparsity();
        let in_band = (TARGET_SPARSITY.0..=TARGET_SPARSITY.1).contains(&s);
        let score = if in_band {
            reconstruction_error(&test, &basis)
        } else {
            (TARGET_SPARSITY.0 - s).max(s - TARGET_SPARSITY.1)
        };
        debug!("lambda1 fraction {frac}: sparsity {s:.3}, score {score:.5}");
        let better = match best {
            None => true,
            Some((b_in, b_score, _)) => (in_band && !b_in) || (in_band == b_in && score < b_score),
        };
        if better {
            best = Some((in_band, score, frac));
        }
    }
    best.map(|(_, _, f)| f)
        .ok_or_else(|| Error::Degenerate("every sparsity penalty on the grid degenerated".into()))
}

/// Fits `L` sparse loadings. Uncentered input is centered with its column means, which
/// are stored for projection.
pub fn fit_basis(x: &DataMatrix, cfg: &SpcaConfig) -> Result<SparseBasis> {
    if x.rows < 2 {
        return Err(Error::param("sparse PCA needs at least 2 rows"));
    }
    if !(cfg.lambda >= 0.0) {
        return Err(Error::param("lambda must be >= 0"));
    }
    let x = if cfg.sample_cap > 0 && x.rows > cfg.sample_cap {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut idx = sample(&mut rng, x.rows, cfg.sample_cap).into_vec();
        idx.sort_unstable();
        x.select_rows(&idx)
    } else {
        x.clone()
    };
    let (xc, means) = if x.centered {
        (x.clone(), vec![0.0; x.cols])
    } else {
        let m = x.column_means();
        (x.center_with(&m)?, m)
    };
    let l = cfg.component_count(x.cols);
    let mode = match cfg.lambda1 {
        Lambda1::Auto => {
            let frac = choose_fraction(&xc, l, cfg.lambda, cfg.seed)?;
            debug!("chose relative lambda1 fraction {frac}");
            Lambda1::Relative(frac)
        }
        m => m,
    };
    fit_centered(&xc, l, cfg.lambda, mode, means)
}

/// Row-major `rows x cols` coefficients `alpha = X V`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientMatrix {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

impl CoefficientMatrix {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, k: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.values[i * self.cols + k]).collect()
    }
}

/// Coefficients of `x` on the basis, centering with the fit means unless `x` is flagged centered.
pub fn project(x: &DataMatrix, basis: &SparseBasis) -> Result<CoefficientMatrix> {
    if x.cols != basis.dim {
        return Err(Error::dim(format!("data has {} columns, basis expects {}", x.cols, basis.dim)));
    }
    let l = basis.components();
    let mut values = Vec::with_capacity(x.rows * l);
    for i in 0..x.rows {
        let row = x.row(i);
        for v in &basis.loadings {
            let dot: f64 = if x.centered {
                row.iter().zip(v).map(|(a, b)| a * b).sum()
            } else {
                row.iter().zip(v).zip(&basis.means).map(|((a, b), m)| (a - m) * b).sum()
            };
            values.push(dot);
        }
    }
    Ok(CoefficientMatrix {
        rows: x.rows,
        cols: l,
        values,
    })
}
