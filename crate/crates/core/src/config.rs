//! Pipeline configuration as flat `key = value` text.
//!
//! Blank lines and lines starting with `#` are ignored. Lists are comma separated.
//! [`PipelineConfig::to_text`] writes every key in a fixed order, so a parsed and
//! re-serialized file is byte-stable.

use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::classifier::SvmConfig;
use crate::embednet::{LossKind, NetArch, TrainConfig, EMBED_DIMS};
use crate::error::{Error, Result};
use crate::keypoints::SiftConfig;
use crate::saliency::{WeightMode, DEFAULT_EPSILON};
use crate::sparsepca::{Lambda1, SpcaConfig};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Which descriptor feeds the SVMs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionMode {
    /// Raw embeddings.
    Baseline,
    /// Sparse coefficients.
    Sparse,
    /// Sparse coefficients scaled by the saliency weights.
    #[default]
    Weighted,
}

impl FusionMode {
    pub const ALL: [FusionMode; 3] = [FusionMode::Baseline, FusionMode::Sparse, FusionMode::Weighted];

    pub fn name(self) -> &'static str {
        match self {
            FusionMode::Baseline => "baseline",
            FusionMode::Sparse => "sparse",
            FusionMode::Weighted => "weighted",
        }
    }
}

impl FromStr for FusionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(FusionMode::Baseline),
            "sparse" => Ok(FusionMode::Sparse),
            "weighted" => Ok(FusionMode::Weighted),
            _ => Err(Error::Config(format!("unknown fusion mode {s:?}"))),
        }
    }
}

/// Page segmentation parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentConfig {
    pub denoise_sigma: f64,
    pub threshold: f64,
    pub log_sigma: f64,
    pub min_area: usize,
}

impl Default for SegmentConfig {
    fn default() -> Self {
        Self {
            denoise_sigma: 1.0,
            threshold: 160.0,
            log_sigma: 6.0,
            min_area: 30,
        }
    }
}

/// Where the embedder's training patches come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbedSource {
    /// Training-split patches labelled by writer.
    #[default]
    Corpus,
    /// Keep the seeded random initialization.
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub version: String,
    pub seed: u64,
    pub segment: SegmentConfig,
    pub sift: SiftConfig,
    pub net: NetArch,
    pub train: TrainConfig,
    pub embed_source: EmbedSource,
    /// Cap on embedder training patches per writer (0 = all).
    pub embed_patches_per_writer: usize,
    pub spca: SpcaConfig,
    pub saliency_epsilon: f64,
    pub weight_mode: WeightMode,
    pub svm: SvmConfig,
    /// Cap on SVM training fragments per writer (0 = all).
    pub svm_fragments_per_writer: usize,
    pub mode: FusionMode,
    pub topk: usize,
    pub curve_max_words: usize,
    pub curve_resamples: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            version: VERSION.into(),
            seed: 0,
            segment: SegmentConfig::default(),
            sift: SiftConfig {
                max_patches: 24,
                upsample: true,
                ..SiftConfig::default()
            },
            net: NetArch::default(),
            train: TrainConfig {
                epochs: 30,
                ..TrainConfig::default()
            },
            embed_source: EmbedSource::Corpus,
            embed_patches_per_writer: 64,
            spca: SpcaConfig::default(),
            saliency_epsilon: DEFAULT_EPSILON,
            weight_mode: WeightMode::Direct,
            svm: SvmConfig::default(),
            svm_fragments_per_writer: 200,
            mode: FusionMode::Weighted,
            topk: 5,
            curve_max_words: 8,
            curve_resamples: 5,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("{key}: cannot parse {value:?}: {e}")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>>
where
    T::Err: Display,
{
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

fn join<T: Display>(values: &[T]) -> String {
    values.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

fn lambda1_text(l: Lambda1) -> String {
    match l {
        Lambda1::Auto => "auto".into(),
        Lambda1::Relative(f) => format!("relative:{f}"),
        Lambda1::Absolute(v) => format!("absolute:{v}"),
    }
}

fn parse_lambda1(value: &str) -> Result<Lambda1> {
    if value == "auto" {
        return Ok(Lambda1::Auto);
    }
    match value.split_once(':') {
        Some(("relative", v)) => Ok(Lambda1::Relative(parse("spca.lambda1", v)?)),
        Some(("absolute", v)) => Ok(Lambda1::Absolute(parse("spca.lambda1", v)?)),
        _ => Err(Error::Config(format!(
            "spca.lambda1: expected auto, relative:<f> or absolute:<v>, got {value:?}"
        ))),
    }
}

impl PipelineConfig {
    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "version" => self.version = v.into(),
            "seed" => self.seed = parse(key, v)?,
            "segment.denoise_sigma" => self.segment.denoise_sigma = parse(key, v)?,
            "segment.threshold" => self.segment.threshold = parse(key, v)?,
            "segment.log_sigma" => self.segment.log_sigma = parse(key, v)?,
            "segment.min_area" => self.segment.min_area = parse(key, v)?,
            "sift.octaves" => self.sift.octaves = parse(key, v)?,
            "sift.scales_per_octave" => self.sift.scales_per_octave = parse(key, v)?,
            "sift.base_sigma" => self.sift.base_sigma = parse(key, v)?,
            "sift.contrast_threshold" => self.sift.contrast_threshold = parse(key, v)?,
            "sift.edge_threshold" => self.sift.edge_threshold = parse(key, v)?,
            "sift.clamp_octaves" => self.sift.clamp_octaves = parse(key, v)?,
            "sift.size_factor" => self.sift.size_factor = parse(key, v)?,
            "sift.max_patches" => self.sift.max_patches = parse(key, v)?,
            "sift.upsample" => self.sift.upsample = parse(key, v)?,
            "net.stem_filters" => self.net.stem_filters = parse(key, v)?,
            "net.stem_kernel" => self.net.stem_kernel = parse(key, v)?,
            "net.stem_stride" => self.net.stem_stride = parse(key, v)?,
            "net.block_filters" => self.net.block_filters = parse_list(key, v)?,
            "net.embed_dim" => self.net.embed_dim = parse(key, v)?,
            "train.source" => {
                self.embed_source = match v {
                    "corpus" => EmbedSource::Corpus,
                    "none" => EmbedSource::None,
                    _ => return Err(Error::Config(format!("train.source: expected corpus or none, got {v:?}"))),
                }
            }
            "train.patches_per_writer" => self.embed_patches_per_writer = parse(key, v)?,
            "train.loss" => {
                self.train.loss = match v {
                    "triplet" => LossKind::Triplet,
                    "contrastive" => LossKind::Contrastive,
                    _ => return Err(Error::Config(format!("train.loss: expected triplet or contrastive, got {v:?}"))),
                }
            }
            "train.margin" => self.train.margin = parse(key, v)?,
            "train.batch_size" => self.train.batch_size = parse(key, v)?,
            "train.learning_rate" => self.train.learning_rate = parse(key, v)?,
            "train.beta1" => self.train.beta1 = parse(key, v)?,
            "train.beta2" => self.train.beta2 = parse(key, v)?,
            "train.eps" => self.train.eps = parse(key, v)?,
            "train.epochs" => self.train.epochs = parse(key, v)?,
            "train.samples_per_epoch" => self.train.samples_per_epoch = parse(key, v)?,
            "spca.components" => self.spca.components = parse(key, v)?,
            "spca.lambda" => self.spca.lambda = parse(key, v)?,
            "spca.lambda1" => self.spca.lambda1 = parse_lambda1(v)?,
            "spca.sample_cap" => self.spca.sample_cap = parse(key, v)?,
            "saliency.epsilon" => self.saliency_epsilon = parse(key, v)?,
            "saliency.weight_mode" => self.weight_mode = parse(key, v)?,
            "svm.c_grid" => self.svm.c_grid = parse_list(key, v)?,
            "svm.gamma_grid" => self.svm.gamma_grid = parse_list(key, v)?,
            "svm.folds" => self.svm.folds = parse(key, v)?,
            "svm.tolerance" => self.svm.tolerance = parse(key, v)?,
            "svm.fragments_per_writer" => self.svm_fragments_per_writer = parse(key, v)?,
            "fusion.mode" => self.mode = parse(key, v)?,
            "eval.topk" => self.topk = parse(key, v)?,
            "eval.curve_max_words" => self.curve_max_words = parse(key, v)?,
            "eval.curve_resamples" => self.curve_resamples = parse(key, v)?,
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Applies `key=value` strings such as `--set` arguments.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let (k, v) = o
                .as_ref()
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {:?} is not key=value", o.as_ref())))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn parse_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse_text(&std::fs::read_to_string(path)?)
    }

    /// The seed propagated into every stage.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn to_text(&self) -> String {
        let s = &self.sift;
        let n = &self.net;
        let t = &self.train;
        let entries: Vec<(&str, String)> = vec![
            ("version", self.version.clone()),
            ("seed", self.seed.to_string()),
            ("segment.denoise_sigma", self.segment.denoise_sigma.to_string()),
            ("segment.threshold", self.segment.threshold.to_string()),
            ("segment.log_sigma", self.segment.log_sigma.to_string()),
            ("segment.min_area", self.segment.min_area.to_string()),
            ("sift.octaves", s.octaves.to_string()),
            ("sift.scales_per_octave", s.scales_per_octave.to_string()),
            ("sift.base_sigma", s.base_sigma.to_string()),
            ("sift.contrast_threshold", s.contrast_threshold.to_string()),
            ("sift.edge_threshold", s.edge_threshold.to_string()),
            ("sift.clamp_octaves", s.clamp_octaves.to_string()),
            ("sift.size_factor", s.size_factor.to_string()),
            ("sift.max_patches", s.max_patches.to_string()),
            ("sift.upsample", s.upsample.to_string()),
            ("net.stem_filters", n.stem_filters.to_string()),
            ("net.stem_kernel", n.stem_kernel.to_string()),
            ("net.stem_stride", n.stem_stride.to_string()),
            ("net.block_filters", join(&n.block_filters)),
            ("net.embed_dim", n.embed_dim.to_string()),
            (
                "train.source",
                match self.embed_source {
                    EmbedSource::Corpus => "corpus".into(),
                    EmbedSource::None => "none".into(),
                },
            ),
            ("train.patches_per_writer", self.embed_patches_per_writer.to_string()),
            (
                "train.loss",
                match t.loss {
                    LossKind::Triplet => "triplet".into(),
                    LossKind::Contrastive => "contrastive".into(),
                },
            ),
            ("train.margin", t.margin.to_string()),
            ("train.batch_size", t.batch_size.to_string()),
            ("train.learning_rate", t.learning_rate.to_string()),
            ("train.beta1", t.beta1.to_string()),
            ("train.beta2", t.beta2.to_string()),
            ("train.eps", t.eps.to_string()),
            ("train.epochs", t.epochs.to_string()),
            ("train.samples_per_epoch", t.samples_per_epoch.to_string()),
            ("spca.components", self.spca.components.to_string()),
            ("spca.lambda", self.spca.lambda.to_string()),
            ("spca.lambda1", lambda1_text(self.spca.lambda1)),
            ("spca.sample_cap", self.spca.sample_cap.to_string()),
            ("saliency.epsilon", self.saliency_epsilon.to_string()),
            (
                "saliency.weight_mode",
                match self.weight_mode {
                    WeightMode::Inverse => "inverse".into(),
                    WeightMode::Direct => "direct".into(),
                },
            ),
            ("svm.c_grid", join(&self.svm.c_grid)),
            ("svm.gamma_grid", join(&self.svm.gamma_grid)),
            ("svm.folds", self.svm.folds.to_string()),
            ("svm.tolerance", self.svm.tolerance.to_string()),
            ("svm.fragments_per_writer", self.svm_fragments_per_writer.to_string()),
            ("fusion.mode", self.mode.name().into()),
            ("eval.topk", self.topk.to_string()),
            ("eval.curve_max_words", self.curve_max_words.to_string()),
            ("eval.curve_resamples", self.curve_resamples.to_string()),
        ];
        entries.into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Range checks run before any stage.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let major = |v: &str| v.split('.').next().unwrap_or("").to_string();
        if major(&self.version) != major(VERSION) {
            return bad(format!("config version {} does not match tool version {VERSION}", self.version));
        }
        if !(self.segment.denoise_sigma > 0.0) || !(self.segment.log_sigma > 0.0) {
            return bad("segment sigmas must be > 0".into());
        }
        if !(0.0..=255.0).contains(&self.segment.threshold) {
            return bad("segment.threshold must lie in [0, 255]".into());
        }
        let s = &self.sift;
        if s.octaves == 0 || s.scales_per_octave == 0 {
            return bad("sift.octaves and sift.scales_per_octave must be >= 1".into());
        }
        if !(s.base_sigma > 0.0) || !(s.contrast_threshold >= 0.0) || !(s.edge_threshold > 1.0) || !(s.size_factor > 0.0) {
            return bad("sift: base_sigma > 0, contrast_threshold >= 0, edge_threshold > 1 and size_factor > 0 required".into());
        }
        if !EMBED_DIMS.contains(&self.net.embed_dim) {
            return bad(format!("net.embed_dim must be one of {EMBED_DIMS:?}, got {}", self.net.embed_dim));
        }
        self.net.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.train.validate().map_err(|e| Error::Config(e.to_string()))?;
        if self.spca.components > self.net.embed_dim {
            return bad("spca.components exceeds net.embed_dim".into());
        }
        if !(self.spca.lambda >= 0.0) {
            return bad("spca.lambda must be >= 0".into());
        }
        match self.spca.lambda1 {
            Lambda1::Absolute(v) if !(v >= 0.0) => return bad("spca.lambda1 must be >= 0".into()),
            Lambda1::Relative(f) if !(0.0..1.0).contains(&f) => return bad("relative spca.lambda1 must lie in [0, 1)".into()),
            _ => {}
        }
        if !(self.saliency_epsilon > 0.0 && self.saliency_epsilon < 0.01) {
            return bad("saliency.epsilon must lie in (0, 0.01)".into());
        }
        if self.svm.c_grid.is_empty() || self.svm.c_grid.iter().any(|c| !(*c > 0.0)) {
            return bad("svm.c_grid needs positive values".into());
        }
        if self.svm.gamma_grid.iter().any(|g| !(*g > 0.0)) {
            return bad("svm.gamma_grid values must be positive".into());
        }
        if self.svm.folds < 2 || !(self.svm.tolerance > 0.0) {
            return bad("svm.folds >= 2 and svm.tolerance > 0 required".into());
        }
        if self.topk == 0 || self.curve_max_words == 0 || self.curve_resamples == 0 {
            return bad("eval.topk, eval.curve_max_words and eval.curve_resamples must be >= 1".into());
        }
        Ok(())
    }
}
