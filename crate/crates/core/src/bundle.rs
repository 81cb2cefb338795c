//! Model bundle: a self-describing directory holding every fitted stage of a
//! [`TrainedModel`], with SHA-256 checksums recorded in `manifest.json`.
//!
//! ```text
//! manifest.json         format, tool version, architecture, D, mode, writers, checksums
//! config.txt            the pipeline config, verbatim
//! weights/<layer>.f64   one little-endian float64 array per parameter
//! sparse_basis.json     L, λ, λ₁, column means, sparsity report
//! sparse_loadings.f64   L × D loadings, one column after another
//! saliency.json         per-component bin edges, φ, w, B, constant flags
//! svm/writer_<id>.bin   one-vs-all model per writer
//! loss_history.csv      epoch,mean_loss
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::classifier::WriterModel;
use crate::config::{FusionMode, PipelineConfig, VERSION};
use crate::embednet::io::{load_weights, read_f64_file, save_weights, write_f64_file, write_loss_history};
use crate::embednet::{NetArch, TrainConfig};
use crate::error::{Error, Result};
use crate::pipeline::{FeatureModel, TrainedModel};
use crate::saliency::SaliencyModel;
use crate::sparsepca::{Lambda1, SparseBasis};

pub const FORMAT: u32 = 1;

/// Environment variable naming the default bundle directory.
pub const BUNDLE_DIR_ENV: &str = "WORDWRITER_BUNDLE_DIR";

const MANIFEST: &str = "manifest.json";
const CONFIG: &str = "config.txt";
const WEIGHTS: &str = "weights";
const BASIS: &str = "sparse_basis.json";
const LOADINGS: &str = "sparse_loadings.f64";
const SALIENCY: &str = "saliency.json";
const SVM_DIR: &str = "svm";
const LOSS: &str = "loss_history.csv";

/// `$WORDWRITER_BUNDLE_DIR` when set, otherwise `./bundle`.
pub fn default_bundle_dir() -> PathBuf {
    std::env::var_os(BUNDLE_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("bundle"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: u32,
    pub version: String,
    pub embed_dim: usize,
    pub arch: NetArch,
    pub train: TrainConfig,
    pub mode: FusionMode,
    pub components: usize,
    pub writers: Vec<u32>,
    /// Relative path (with `/` separators) -> lowercase hex SHA-256.
    pub files: BTreeMap<String, String>,
}

/// Basis metadata; the loadings themselves live in a flat float64 file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct BasisHeader {
    dim: usize,
    components: usize,
    lambda: f64,
    lambda1: Lambda1,
    lambda1_used: Vec<f64>,
    sparsity: Vec<f64>,
    dropped: Vec<usize>,
    means: Vec<f64>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn major(v: &str) -> &str {
    v.split('.').next().unwrap_or("")
}

fn svm_file(writer: u32) -> String {
    format!("{SVM_DIR}/writer_{writer}.bin")
}

/// Writes `model` to `dir`, replacing any previous bundle there. The bundle is
/// assembled in a sibling staging directory and renamed into place, so a failure
/// leaves neither a partial bundle nor a damaged old one.
pub fn save(model: &TrainedModel, dir: &Path) -> Result<Manifest> {
    let name = dir
        .file_name()
        .ok_or_else(|| Error::Bundle(format!("{} is not a usable bundle path", dir.display())))?;
    let parent = dir.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(parent)?;
    let mut staging_name = name.to_os_string();
    staging_name.push(format!(".partial-{}", std::process::id()));
    let staging = parent.join(staging_name);
    if staging.exists() {
        fs::remove_dir_all(&staging)?;
    }
    let written = write_contents(model, &staging).and_then(|m| {
        if dir.exists() {
            fs::remove_dir_all(dir)?;
        }
        fs::rename(&staging, dir)?;
        Ok(m)
    });
    if written.is_err() && staging.exists() {
        let _ = fs::remove_dir_all(&staging);
    }
    written
}

fn write_contents(model: &TrainedModel, dir: &Path) -> Result<Manifest> {
    fs::create_dir_all(dir.join(SVM_DIR))?;
    let mut files = Vec::new();

    fs::write(dir.join(CONFIG), model.config.to_text())?;
    files.push(CONFIG.to_string());

    for w in save_weights(&model.features.net, &dir.join(WEIGHTS))? {
        files.push(format!("{WEIGHTS}/{w}"));
    }

    let basis = &model.features.basis;
    let header = BasisHeader {
        dim: basis.dim,
        components: basis.components(),
        lambda: basis.lambda,
        lambda1: basis.lambda1,
        lambda1_used: basis.lambda1_used.clone(),
        sparsity: basis.sparsity.clone(),
        dropped: basis.dropped.clone(),
        means: basis.means.clone(),
    };
    fs::write(dir.join(BASIS), serde_json::to_string_pretty(&header)? + "\n")?;
    write_f64_file(&dir.join(LOADINGS), &basis.loadings.concat())?;
    files.push(BASIS.to_string());
    files.push(LOADINGS.to_string());

    fs::write(dir.join(SALIENCY), serde_json::to_string_pretty(&model.features.saliency)? + "\n")?;
    files.push(SALIENCY.to_string());

    for m in &model.svms {
        let f = svm_file(m.writer);
        fs::write(dir.join(&f), m.to_bytes())?;
        files.push(f);
    }

    write_loss_history(&dir.join(LOSS), &model.features.loss_history)?;
    files.push(LOSS.to_string());

    let mut sums = BTreeMap::new();
    for f in files {
        let bytes = fs::read(dir.join(&f))?;
        sums.insert(f, sha256_hex(&bytes));
    }
    let manifest = Manifest {
        format: FORMAT,
        version: VERSION.to_string(),
        embed_dim: model.features.net.arch.embed_dim,
        arch: model.features.net.arch.clone(),
        train: model.config.train.clone(),
        mode: model.mode,
        components: basis.components(),
        writers: model.writers(),
        files: sums,
    };
    fs::write(dir.join(MANIFEST), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::Bundle(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Bundle(format!("{}: {e}", path.display())))
}

/// Checks format, version major, file presence and checksums. Every file the loader
/// will read must be listed in the manifest.
pub fn verify(dir: &Path) -> Result<Manifest> {
    let m = read_manifest(dir)?;
    if m.format != FORMAT {
        return Err(Error::Bundle(format!("bundle format {} is not supported (expected {FORMAT})", m.format)));
    }
    if major(&m.version) != major(VERSION) {
        return Err(Error::Bundle(format!(
            "bundle version {} does not match tool version {VERSION}",
            m.version
        )));
    }
    let mut required = vec![CONFIG.to_string(), BASIS.into(), LOADINGS.into(), SALIENCY.into(), LOSS.into()];
    required.extend(m.writers.iter().map(|&w| svm_file(w)));
    for r in &required {
        if !m.files.contains_key(r) {
            return Err(Error::Bundle(format!("manifest does not list {r}")));
        }
    }
    for (f, expected) in &m.files {
        let bytes = fs::read(dir.join(f)).map_err(|e| Error::Bundle(format!("{f}: {e}")))?;
        if &sha256_hex(&bytes) != expected {
            return Err(Error::Bundle(format!("checksum mismatch for {f}")));
        }
    }
    Ok(m)
}

fn bundle_err(what: &str) -> impl Fn(Error) -> Error + '_ {
    move |e| match e {
        Error::Bundle(_) => e,
        other => Error::Bundle(format!("{what}: {other}")),
    }
}

/// Verifies and loads a bundle.
pub fn load(dir: &Path) -> Result<TrainedModel> {
    let m = verify(dir)?;
    let config = PipelineConfig::parse_text(&fs::read_to_string(dir.join(CONFIG))?).map_err(bundle_err(CONFIG))?;
    if config.net != m.arch {
        return Err(Error::Bundle("config.txt and manifest disagree on the architecture".into()));
    }
    let weight_files = m.files.keys().filter(|f| f.starts_with(&format!("{WEIGHTS}/"))).count();
    let net = load_weights(&m.arch, &dir.join(WEIGHTS))?;
    if net.named_params().len() != weight_files {
        return Err(Error::Bundle(format!(
            "manifest lists {weight_files} weight files, architecture has {} parameters",
            net.named_params().len()
        )));
    }

    let header: BasisHeader = serde_json::from_str(&fs::read_to_string(dir.join(BASIS))?).map_err(|e| Error::Bundle(format!("{BASIS}: {e}")))?;
    let flat = read_f64_file(&dir.join(LOADINGS))?;
    if header.dim != m.embed_dim || flat.len() != header.dim * header.components || header.components != m.components {
        return Err(Error::Bundle(format!(
            "{LOADINGS} holds {} values, expected {} x {}",
            flat.len(),
            header.components,
            header.dim
        )));
    }
    let basis = SparseBasis {
        dim: header.dim,
        loadings: flat.chunks(header.dim.max(1)).map(<[f64]>::to_vec).collect(),
        lambda: header.lambda,
        lambda1: header.lambda1,
        lambda1_used: header.lambda1_used,
        sparsity: header.sparsity,
        dropped: header.dropped,
        means: header.means,
    };

    let saliency: SaliencyModel = serde_json::from_str(&fs::read_to_string(dir.join(SALIENCY))?).map_err(|e| Error::Bundle(format!("{SALIENCY}: {e}")))?;
    if saliency.components.len() != basis.components() {
        return Err(Error::Bundle("saliency and basis disagree on the component count".into()));
    }

    let svms = m
        .writers
        .iter()
        .map(|&w| {
            let f = svm_file(w);
            let model = WriterModel::from_bytes(&fs::read(dir.join(&f))?).map_err(bundle_err(&f))?;
            if model.writer != w {
                return Err(Error::Bundle(format!("{f} holds writer {}", model.writer)));
            }
            Ok(model)
        })
        .collect::<Result<Vec<_>>>()?;

    let loss_history = read_loss_history(&fs::read_to_string(dir.join(LOSS))?)?;
    let mut config = config;
    config.mode = m.mode;
    Ok(TrainedModel {
        config,
        features: FeatureModel {
            net,
            basis,
            saliency,
            loss_history,
        },
        mode: m.mode,
        svms,
    })
}

fn read_loss_history(text: &str) -> Result<Vec<f64>> {
    text.lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.split(',')
                .nth(1)
                .and_then(|v| v.trim().parse().ok())
                .ok_or_else(|| Error::Bundle(format!("{LOSS}: bad row {l:?}")))
        })
        .collect()
}
