//! Per-component significance weights from the relative entropy between writers'
//! coefficient histograms.

use std::collections::BTreeMap;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sparsepca::CoefficientMatrix;

pub const DEFAULT_EPSILON: f64 = 1e-6;

/// Linear-interpolation quantile of sorted data (the `(n - 1) q` position rule).
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = (sorted.len() - 1) as f64 * q;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinEdges {
    pub edges: Vec<f64>,
    /// Every value was equal; `edges` is a single unit-width bin around it.
    pub constant: bool,
}

impl BinEdges {
    pub fn bins(&self) -> usize {
        self.edges.len() - 1
    }

    /// Half-open bins `[h_b, h_{b+1})` with the last closed at the top; values outside
    /// the range land in the boundary bins.
    pub fn bin_of(&self, v: f64) -> usize {
        let last = self.bins() - 1;
        if v.is_nan() || v < self.edges[0] {
            return 0;
        }
        // First edge strictly greater than v, minus one.
        let idx = self.edges.partition_point(|&e| e <= v);
        idx.saturating_sub(1).min(last)
    }
}

/// Freedman-Diaconis bin edges over `[min, max]`, falling back to Sturges' rule when the
/// interquartile range is zero.
pub fn fd_bin_edges(values: &[f64]) -> Result<BinEdges> {
    if values.len() < 2 {
        return Err(Error::param("histogram needs at least 2 values"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::param("histogram values must be finite"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let (min, max) = (sorted[0], sorted[sorted.len() - 1]);
    if min == max {
        return Ok(BinEdges {
            edges: vec![min - 0.5, min + 0.5],
            constant: true,
        });
    }
    let n = sorted.len() as f64;
    let iqr = quantile(&sorted, 0.75) - quantile(&sorted, 0.25);
    let range = max - min;
    let bins = if iqr > 0.0 {
        let width = 2.0 * iqr / n.cbrt();
        // Guard against ratios a rounding error above an integer.
        ((range / width) - 1e-9).ceil().max(1.0) as usize
    } else {
        n.log2().ceil() as usize + 1
    };
    let mut edges: Vec<f64> = (0..=bins).map(|b| min + range * b as f64 / bins as f64).collect();
    edges[bins] = max;
    Ok(BinEdges { edges, constant: false })
}

/// Counts and probabilities per writer for one component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentHistogramSet {
    pub component: usize,
    pub edges: BinEdges,
    pub writers: Vec<u32>,
    pub counts: Vec<Vec<usize>>,
    pub probs: Vec<Vec<f64>>,
}

/// Histograms of column `k` for each writer over edges pooled from all writers.
pub fn build_histograms(alpha: &CoefficientMatrix, writer_ids: &[u32], k: usize) -> Result<ComponentHistogramSet> {
    if writer_ids.len() != alpha.rows {
        return Err(Error::dim(format!("{} labels for {} rows", writer_ids.len(), alpha.rows)));
    }
    if k >= alpha.cols {
        return Err(Error::dim(format!("component {k} of {}", alpha.cols)));
    }
    let column = alpha.column(k);
    let edges = fd_bin_edges(&column)?;
    histograms_over(&column, writer_ids, edges, k)
}

/// Histograms of `values` per writer over fixed `edges`.
pub fn histograms_over(values: &[f64], writer_ids: &[u32], edges: BinEdges, k: usize) -> Result<ComponentHistogramSet> {
    if writer_ids.len() != values.len() {
        return Err(Error::dim(format!("{} labels for {} values", writer_ids.len(), values.len())));
    }
    let mut by_writer: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (&w, v) in writer_ids.iter().zip(values) {
        by_writer.entry(w).or_insert_with(|| vec![0; edges.bins()])[edges.bin_of(*v)] += 1;
    }
    let writers: Vec<u32> = by_writer.keys().copied().collect();
    let counts: Vec<Vec<usize>> = by_writer.into_values().collect();
    let probs = counts.iter().map(|c| normalize_counts(c)).collect();
    Ok(ComponentHistogramSet {
        component: k,
        edges,
        writers,
        counts,
        probs,
    })
}

fn normalize_counts(c: &[usize]) -> Vec<f64> {
    let n: usize = c.iter().sum();
    c.iter().map(|&v| v as f64 / n as f64).collect()
}

/// `sum_b p_b log2(p_b / q_b)` after adding `epsilon` to every bin and renormalizing
/// both vectors; `0 log 0 = 0`.
pub fn kl_divergence(p: &[f64], q: &[f64], epsilon: f64) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::dim(format!("distributions of length {} and {}", p.len(), q.len())));
    }
    if !(epsilon >= 0.0) {
        return Err(Error::param("epsilon must be >= 0"));
    }
    let smooth = |v: &[f64]| -> Vec<f64> {
        let total: f64 = v.iter().map(|x| x + epsilon).sum();
        v.iter().map(|x| (x + epsilon) / total).collect()
    };
    let (ps, qs) = (smooth(p), smooth(q));
    let mut d = 0.0;
    for (a, b) in ps.iter().zip(&qs) {
        if *a > 0.0 {
            d += a * (a / b).log2();
        }
    }
    Ok(d.max(0.0))
}

/// `W x W` row-major matrix with entry `(i, j) = KL(p_i || p_j)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceMatrix {
    pub writers: usize,
    pub values: Vec<f64>,
}

impl DivergenceMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.writers + j]
    }
}

pub fn divergence_matrix(hists: &ComponentHistogramSet, epsilon: f64) -> Result<DivergenceMatrix> {
    let w = hists.probs.len();
    if w < 2 {
        return Err(Error::Corpus(format!("divergence needs at least 2 writers, got {w}")));
    }
    let mut values = vec![0.0; w * w];
    for i in 0..w {
        for j in 0..w {
            if i != j {
                values[i * w + j] = kl_divergence(&hists.probs[i], &hists.probs[j], epsilon)?;
            }
        }
    }
    Ok(DivergenceMatrix { writers: w, values })
}

/// Mean off-diagonal divergence.
pub fn average_divergence(d: &DivergenceMatrix) -> Result<f64> {
    let w = d.writers;
    if w < 2 {
        return Err(Error::Corpus("average divergence needs at least 2 writers".into()));
    }
    let sum: f64 = (0..w)
        .flat_map(|i| (0..w).filter(move |&j| j != i).map(move |j| (i, j)))
        .map(|(i, j)| d.get(i, j))
        .sum();
    Ok(sum / (w * (w - 1)) as f64)
}

/// `inverse`: `w = 1 / (1 + phi)`. `direct`: `w = (1 + phi) / (1 + max phi)`, so the most
/// divergent component gets weight 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightMode {
    #[default]
    Inverse,
    Direct,
}

impl std::str::FromStr for WeightMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "inverse" => Ok(Self::Inverse),
            "direct" => Ok(Self::Direct),
            other => Err(Error::Config(format!("unknown weight mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaliencyWeights {
    pub phi: Vec<f64>,
    pub w: Vec<f64>,
    pub mode: WeightMode,
}

pub fn significance_weights(phi: &[f64]) -> Result<SaliencyWeights> {
    weights_with_mode(phi, WeightMode::Inverse)
}

pub fn weights_with_mode(phi: &[f64], mode: WeightMode) -> Result<SaliencyWeights> {
    if let Some(p) = phi.iter().find(|p| !(**p >= 0.0) || !p.is_finite()) {
        return Err(Error::param(format!("average divergence must be finite and >= 0, got {p}")));
    }
    let w = match mode {
        WeightMode::Inverse => phi.iter().map(|p| 1.0 / (1.0 + p)).collect(),
        WeightMode::Direct => {
            let top = phi.iter().copied().fold(0.0, f64::max);
            phi.iter().map(|p| (1.0 + p) / (1.0 + top)).collect()
        }
    };
    Ok(SaliencyWeights {
        phi: phi.to_vec(),
        w,
        mode,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentSaliency {
    pub edges: Vec<f64>,
    pub bins: usize,
    pub constant: bool,
    pub phi: f64,
    pub w: f64,
}

/// Fitted saliency for every component, frozen after training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaliencyModel {
    pub epsilon: f64,
    pub mode: WeightMode,
    pub components: Vec<ComponentSaliency>,
}

impl SaliencyModel {
    pub fn weights(&self) -> Vec<f64> {
        self.components.iter().map(|c| c.w).collect()
    }

    pub fn phi(&self) -> Vec<f64> {
        self.components.iter().map(|c| c.phi).collect()
    }
}

/// Histograms, divergences and weights for every column of `alpha`.
pub fn fit_saliency(alpha: &CoefficientMatrix, writer_ids: &[u32], epsilon: f64, mode: WeightMode) -> Result<SaliencyModel> {
    let fits: Vec<(ComponentHistogramSet, f64)> = (0..alpha.cols)
        .into_par_iter()
        .map(|k| {
            let h = build_histograms(alpha, writer_ids, k)?;
            let phi = average_divergence(&divergence_matrix(&h, epsilon)?)?;
            Ok((h, phi))
        })
        .collect::<Result<_>>()?;
    let constant = fits.iter().filter(|(h, _)| h.edges.constant).count();
    if constant > 0 {
        warn!("{constant} components are constant over the training fragments");
    }
    let phi: Vec<f64> = fits.iter().map(|(_, p)| *p).collect();
    let weights = weights_with_mode(&phi, mode)?;
    let components = fits
        .into_iter()
        .zip(weights.w)
        .map(|((h, phi), w)| ComponentSaliency {
            bins: h.edges.bins(),
            constant: h.edges.constant,
            edges: h.edges.edges,
            phi,
            w,
        })
        .collect();
    Ok(SaliencyModel {
        epsilon,
        mode,
        components,
    })
}
