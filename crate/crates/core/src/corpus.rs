//! Dataset layouts, train/test splits and a synthetic handwriting generator.
//!
//! Directory conventions:
//!
//! * IAM-style: `root/<writer id>/<document>/` holding segmented word PNGs, or
//!   `root/<writer id>/<document>.png` for an unsegmented page.
//! * CVL-style: the same tree, where a document directory named `<doc>-de` or `<doc>_de`
//!   is a German page and is skipped; other documents count as English.
//! * Omniglot-style: `root/<alphabet>/<character>/*.png`.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use log::warn;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::GrayImage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ItemKind {
    Word,
    Page,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusItem {
    pub writer: u32,
    pub document: String,
    /// Relative to the corpus root.
    pub path: PathBuf,
    pub kind: ItemKind,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Corpus {
    pub layout: String,
    pub root: PathBuf,
    pub seed: Option<u64>,
    pub writers: Vec<u32>,
    pub items: Vec<CorpusItem>,
}

impl Corpus {
    pub fn path_of(&self, item: &CorpusItem) -> PathBuf {
        self.root.join(&item.path)
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &CorpusItem> {
        self.items.iter().filter(move |i| i.split == split)
    }

    pub fn count(&self, writer: u32, split: Split) -> usize {
        self.items.iter().filter(|i| i.writer == writer && i.split == split).count()
    }

    /// Every writer has train and test items and no path is in both splits.
    pub fn validate(&self) -> Result<()> {
        for &w in &self.writers {
            if self.count(w, Split::Train) == 0 || self.count(w, Split::Test) == 0 {
                return Err(Error::Corpus(format!("writer {w} lacks a train or test item")));
            }
        }
        let mut seen: BTreeMap<&Path, Split> = BTreeMap::new();
        for item in &self.items {
            if let Some(prev) = seen.insert(&item.path, item.split) {
                if prev != item.split {
                    return Err(Error::Corpus(format!("{} is in both splits", item.path.display())));
                }
            }
        }
        Ok(())
    }

    pub fn save_manifest(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn load_manifest(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

fn is_png(p: &Path) -> bool {
    p.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("png"))
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::Ingestion {
            paths: vec![dir.to_path_buf()],
            reason: e.to_string(),
        })?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    out.sort();
    Ok(out)
}

fn name_of(p: &Path) -> String {
    p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

#[derive(Debug, Clone)]
struct DocEntry {
    name: String,
    /// Word images (relative), or a single page image.
    files: Vec<PathBuf>,
    kind: ItemKind,
}

/// Writer directories with their documents, in ascending writer order.
fn scan_writers(root: &Path) -> Result<BTreeMap<u32, Vec<DocEntry>>> {
    if !root.is_dir() {
        return Err(Error::Ingestion {
            paths: vec![root.to_path_buf()],
            reason: "corpus root is not a directory".into(),
        });
    }
    let mut writers = BTreeMap::new();
    let mut bad = Vec::new();
    for wdir in sorted_entries(root)? {
        if !wdir.is_dir() {
            continue;
        }
        let Ok(id) = name_of(&wdir).parse::<u32>() else {
            bad.push(wdir);
            continue;
        };
        let mut docs = Vec::new();
        for d in sorted_entries(&wdir)? {
            let rel = |p: &Path| p.strip_prefix(root).expect("under root").to_path_buf();
            if d.is_dir() {
                let files: Vec<PathBuf> = sorted_entries(&d)?.into_iter().filter(|p| is_png(p)).map(|p| rel(&p)).collect();
                if files.is_empty() {
                    warn!("{} has no word images", d.display());
                    continue;
                }
                docs.push(DocEntry {
                    name: name_of(&d),
                    files,
                    kind: ItemKind::Word,
                });
            } else if is_png(&d) {
                let stem = d.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                docs.push(DocEntry {
                    name: stem,
                    files: vec![rel(&d)],
                    kind: ItemKind::Page,
                });
            }
        }
        if docs.is_empty() {
            bad.push(wdir);
            continue;
        }
        writers.insert(id, docs);
    }
    if !bad.is_empty() {
        return Err(Error::Ingestion {
            paths: bad,
            reason: "writer directories must be numeric ids holding document folders or page PNGs".into(),
        });
    }
    if writers.is_empty() {
        return Err(Error::Ingestion {
            paths: vec![root.to_path_buf()],
            reason: "no writer directories found".into(),
        });
    }
    Ok(writers)
}

fn doc_items(writer: u32, doc: &DocEntry, split: Split) -> impl Iterator<Item = CorpusItem> + '_ {
    doc.files.iter().map(move |p| CorpusItem {
        writer,
        document: doc.name.clone(),
        path: p.clone(),
        kind: doc.kind,
        split,
    })
}

/// First half of a single document's words for training, the rest for testing.
fn halve(writer: u32, doc: &DocEntry) -> Option<Vec<CorpusItem>> {
    if doc.kind == ItemKind::Page || doc.files.len() < 2 {
        return None;
    }
    let half = doc.files.len() / 2;
    Some(
        doc_items(writer, doc, Split::Train)
            .enumerate()
            .map(|(i, mut it)| {
                if i >= half {
                    it.split = Split::Test;
                }
                it
            })
            .collect(),
    )
}

fn finish(layout: &str, root: &Path, seed: Option<u64>, items: Vec<CorpusItem>) -> Result<Corpus> {
    let mut writers: Vec<u32> = items.iter().map(|i| i.writer).collect();
    writers.dedup();
    let corpus = Corpus {
        layout: layout.into(),
        root: root.to_path_buf(),
        seed,
        writers,
        items,
    };
    if corpus.writers.len() < 2 {
        return Err(Error::Corpus(format!("{} usable writer(s); need at least 2", corpus.writers.len())));
    }
    corpus.validate()?;
    Ok(corpus)
}

/// Two random documents per writer (one train, one test); single-document writers are
/// split by halving their word list.
pub fn load_iam_layout(root: &Path, seed: u64) -> Result<Corpus> {
    let writers = scan_writers(root)?;
    let mut items = Vec::new();
    for (&w, docs) in &writers {
        if docs.len() >= 2 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (u64::from(w).wrapping_mul(0x9e37_79b9_7f4a_7c15)));
            let pick = sample(&mut rng, docs.len(), 2).into_vec();
            items.extend(doc_items(w, &docs[pick[0]], Split::Train));
            items.extend(doc_items(w, &docs[pick[1]], Split::Test));
        } else if let Some(halves) = halve(w, &docs[0]) {
            items.extend(halves);
        } else {
            warn!("writer {w}: a single document with fewer than 2 words, skipped");
        }
    }
    finish("iam", root, Some(seed), items)
}

fn is_german(doc: &str) -> bool {
    let lower = doc.to_ascii_lowercase();
    lower.ends_with("-de") || lower.ends_with("_de")
}

/// English documents only: three for training and one for testing per writer, in sorted
/// order, with a 3:1 proportional split for writers with fewer documents.
pub fn load_cvl_layout(root: &Path) -> Result<Corpus> {
    let writers = scan_writers(root)?;
    let mut items = Vec::new();
    for (&w, docs) in &writers {
        let english: Vec<&DocEntry> = docs.iter().filter(|d| !is_german(&d.name)).collect();
        match english.len() {
            0 => warn!("writer {w}: no English documents, skipped"),
            1 => match halve(w, english[0]) {
                Some(h) => {
                    warn!("writer {w}: one English document, splitting its words in half");
                    items.extend(h);
                }
                None => warn!("writer {w}: one English document with fewer than 2 words, skipped"),
            },
            n => {
                let (train, test) = if n >= 4 {
                    (3, 1)
                } else {
                    warn!("writer {w}: {n} English documents, using a proportional split");
                    let t = ((n as f64 * 0.75).round() as usize).clamp(1, n - 1);
                    (t, n - t)
                };
                for d in &english[..train] {
                    items.extend(doc_items(w, d, Split::Train));
                }
                for d in &english[train..train + test] {
                    items.extend(doc_items(w, d, Split::Test));
                }
            }
        }
    }
    finish("cvl", root, None, items)
}

/// `(image path, class index)` for every character image; classes are numbered in sorted
/// `alphabet/character` order.
pub fn load_omniglot_layout(root: &Path) -> Result<Vec<(PathBuf, u32)>> {
    let mut out = Vec::new();
    let mut class = 0u32;
    for alphabet in sorted_entries(root)? {
        if !alphabet.is_dir() {
            continue;
        }
        for ch in sorted_entries(&alphabet)? {
            if !ch.is_dir() {
                continue;
            }
            let images: Vec<PathBuf> = sorted_entries(&ch)?.into_iter().filter(|p| is_png(p)).collect();
            if images.is_empty() {
                continue;
            }
            out.extend(images.into_iter().map(|p| (p, class)));
            class += 1;
        }
    }
    if class < 2 {
        return Err(Error::Ingestion {
            paths: vec![root.to_path_buf()],
            reason: format!("found {class} character classes; need at least 2"),
        });
    }
    Ok(out)
}

/// Writer style for the synthetic generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StyleParams {
    /// Shear angle in radians; positive leans right.
    pub slant: f64,
    pub stroke_width: f64,
    /// Per-instance control point noise, in x-height units.
    pub jitter: f64,
    pub glyph_seed: u64,
    /// Baseline wave amplitude in pixels.
    pub wobble: f64,
    pub x_height: f64,
    pub spacing: f64,
    /// Darkest ink intensity.
    pub ink: u8,
}

impl StyleParams {
    pub fn for_writer(seed: u64, writer: u32) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x2545_f491_4f6c_dd1d) ^ u64::from(writer));
        Self {
            slant: rng.random_range(-0.35..0.45),
            stroke_width: rng.random_range(1.5..5.0),
            jitter: rng.random_range(0.02..0.07),
            glyph_seed: rng.random(),
            wobble: rng.random_range(0.0..3.0),
            x_height: rng.random_range(18.0..28.0),
            spacing: rng.random_range(0.85..1.25),
            ink: rng.random_range(0..70),
        }
    }
}

pub const ALPHABET_SIZE: usize = 16;
const ALPHABET_SEED: u64 = 0xa1fa_be7;

/// Control points of one glyph in x-height units, `y` up from the baseline.
type Glyph = Vec<(f64, f64)>;

/// Shared letter skeletons.
fn base_alphabet() -> Vec<Glyph> {
    let mut rng = ChaCha8Rng::seed_from_u64(ALPHABET_SEED);
    (0..ALPHABET_SIZE)
        .map(|g| {
            let n = rng.random_range(3..6);
            let tall = g % 5 == 1;
            let deep = g % 7 == 3;
            (0..n)
                .map(|i| {
                    let x = i as f64 / (n - 1) as f64 * rng.random_range(0.5..0.9);
                    let mut y = rng.random_range(0.0..1.0);
                    if tall && i == n / 2 {
                        y = rng.random_range(1.5..1.9);
                    }
                    if deep && i == n / 2 {
                        y = rng.random_range(-0.8..-0.5);
                    }
                    (x, y)
                })
                .collect()
        })
        .collect()
}

/// The writer's allographs: the shared skeletons with writer-specific displacements.
pub fn writer_alphabet(style: &StyleParams) -> Vec<Vec<(f64, f64)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(style.glyph_seed);
    let shift = Normal::new(0.0, 0.18).expect("finite std");
    base_alphabet()
        .into_iter()
        .map(|g| {
            let loop_bias = rng.random_range(-0.3..0.3);
            g.into_iter()
                .enumerate()
                .map(|(i, (x, y))| {
                    let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
                    (x + shift.sample(&mut rng), y + shift.sample(&mut rng) + sign * loop_bias)
                })
                .collect()
        })
        .collect()
}

/// Catmull-Rom spline through `pts`, `per_segment` samples per span.
fn spline(pts: &[(f64, f64)], per_segment: usize) -> Vec<(f64, f64)> {
    if pts.len() < 2 {
        return pts.to_vec();
    }
    let at = |i: isize| pts[i.clamp(0, pts.len() as isize - 1) as usize];
    let mut out = Vec::with_capacity(pts.len() * per_segment + 1);
    for i in 0..pts.len() as isize - 1 {
        let (p0, p1, p2, p3) = (at(i - 1), at(i), at(i + 1), at(i + 2));
        for s in 0..per_segment {
            let t = s as f64 / per_segment as f64;
            let (t2, t3) = (t * t, t * t * t);
            let f = |a: f64, b: f64, c: f64, d: f64| {
                0.5 * (2.0 * b + (-a + c) * t + (2.0 * a - 5.0 * b + 4.0 * c - d) * t2 + (-a + 3.0 * b - 3.0 * c + d) * t3)
            };
            out.push((f(p0.0, p1.0, p2.0, p3.0), f(p0.1, p1.1, p2.1, p3.1)));
        }
    }
    out.push(pts[pts.len() - 1]);
    out
}

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    };
    ((p.0 - a.0 - t * dx).powi(2) + (p.1 - a.1 - t * dy).powi(2)).sqrt()
}

/// Draws `text` (glyph indices) as one connected stroke in the writer's style.
pub fn render_word(style: &StyleParams, alphabet: &[Vec<(f64, f64)>], text: &[usize], rng: &mut impl Rng) -> Result<GrayImage> {
    if text.is_empty() {
        return Err(Error::param("cannot render an empty word"));
    }
    let jitter = Normal::new(0.0, style.jitter.max(1e-9)).map_err(|e| Error::param(e.to_string()))?;
    let mut pts = Vec::new();
    let mut cursor = 0.0;
    for &g in text {
        let glyph = alphabet.get(g).ok_or_else(|| Error::param(format!("glyph {g} outside the alphabet")))?;
        let width = glyph.iter().map(|p| p.0).fold(0.0f64, f64::max).max(0.3);
        for &(x, y) in glyph {
            pts.push((cursor + x + jitter.sample(rng), y + jitter.sample(rng)));
        }
        cursor += (width + 0.35) * style.spacing;
    }
    let curve = spline(&pts, 12);
    let shear = style.slant.tan();
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    let h = style.x_height;
    let px: Vec<(f64, f64)> = curve
        .iter()
        .map(|&(x, y)| {
            let wob = style.wobble * (x * 1.3 + phase).sin();
            ((x + shear * y) * h, -(y * h) + wob)
        })
        .collect();
    let margin = style.stroke_width + 8.0;
    let min_x = px.iter().map(|p| p.0).fold(f64::INFINITY, f64::min) - margin;
    let max_x = px.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max) + margin;
    let min_y = px.iter().map(|p| p.1).fold(f64::INFINITY, f64::min) - margin;
    let max_y = px.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max) + margin;
    let (w, hgt) = ((max_x - min_x).ceil() as usize, (max_y - min_y).ceil() as usize);
    let mut dist = vec![f64::INFINITY; w * hgt];
    let r = style.stroke_width / 2.0;
    for seg in px.windows(2) {
        let (a, b) = ((seg[0].0 - min_x, seg[0].1 - min_y), (seg[1].0 - min_x, seg[1].1 - min_y));
        let x0 = (a.0.min(b.0) - r - 1.0).floor().max(0.0) as usize;
        let x1 = ((a.0.max(b.0) + r + 1.0).ceil() as usize).min(w - 1);
        let y0 = (a.1.min(b.1) - r - 1.0).floor().max(0.0) as usize;
        let y1 = ((a.1.max(b.1) + r + 1.0).ceil() as usize).min(hgt - 1);
        for y in y0..=y1 {
            for x in x0..=x1 {
                let d = segment_distance((x as f64 + 0.5, y as f64 + 0.5), a, b);
                let cell = &mut dist[y * w + x];
                if d < *cell {
                    *cell = d;
                }
            }
        }
    }
    let ink = f64::from(style.ink);
    let pixels = dist
        .iter()
        .map(|&d| {
            let cover = (r + 0.5 - d).clamp(0.0, 1.0);
            (255.0 - cover * (255.0 - ink)).round() as u8
        })
        .collect();
    GrayImage::new(w, hgt, pixels)
}

/// `2 * ink area / ink perimeter` with ink below 128, which is the width of a long stroke.
pub fn mean_stroke_width(image: &GrayImage) -> f64 {
    let (w, h) = (image.width(), image.height());
    let ink = |x: isize, y: isize| {
        x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h && image.get(x as usize, y as usize) < 128
    };
    let (mut area, mut perimeter) = (0usize, 0usize);
    for y in 0..h as isize {
        for x in 0..w as isize {
            if ink(x, y) {
                area += 1;
                perimeter += [(1, 0), (-1, 0), (0, 1), (0, -1)]
                    .iter()
                    .filter(|(dx, dy)| !ink(x + dx, y + dy))
                    .count();
            }
        }
    }
    if perimeter == 0 {
        0.0
    } else {
        2.0 * area as f64 / perimeter as f64
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub path: String,
    pub writer: u32,
    pub document: String,
    pub word: usize,
    pub text: String,
    pub split: Split,
}

pub const SYNTH_DOCUMENT: &str = "doc0";

fn glyph_text(text: &[usize]) -> String {
    text.iter().map(|&g| char::from(b'a' + g as u8)).collect()
}

/// Renders `words_per_writer` pseudo-words for each writer into an IAM-style tree with one
/// document per writer, plus `labels.jsonl` and `corpus.json`. Writers are numbered from 1.
pub fn generate_synthetic(seed: u64, writers: usize, words_per_writer: usize, out: &Path) -> Result<Corpus> {
    if writers < 2 {
        return Err(Error::param("synthetic corpus needs at least 2 writers"));
    }
    if words_per_writer < 4 {
        return Err(Error::param("synthetic corpus needs at least 4 words per writer"));
    }
    fs::create_dir_all(out)?;
    let mut labels = BufWriter::new(fs::File::create(out.join("labels.jsonl"))?);
    let mut items = Vec::new();
    for wi in 1..=writers as u32 {
        let style = StyleParams::for_writer(seed, wi);
        let alphabet = writer_alphabet(&style);
        let dir = out.join(format!("{wi:03}")).join(SYNTH_DOCUMENT);
        fs::create_dir_all(&dir)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (u64::from(wi) << 32) ^ 0x5717);
        let half = words_per_writer / 2;
        for k in 0..words_per_writer {
            let len = rng.random_range(3..=6);
            let text: Vec<usize> = (0..len).map(|_| rng.random_range(0..ALPHABET_SIZE)).collect();
            let img = render_word(&style, &alphabet, &text, &mut rng)?;
            let rel = PathBuf::from(format!("{wi:03}")).join(SYNTH_DOCUMENT).join(format!("w{k:03}.png"));
            img.save_png(out.join(&rel))?;
            let split = if k < half { Split::Train } else { Split::Test };
            let rec = LabelRecord {
                path: rel.to_string_lossy().replace('\\', "/"),
                writer: wi,
                document: SYNTH_DOCUMENT.into(),
                word: k,
                text: glyph_text(&text),
                split,
            };
            writeln!(labels, "{}", serde_json::to_string(&rec)?)?;
            items.push(CorpusItem {
                writer: wi,
                document: SYNTH_DOCUMENT.into(),
                path: rel,
                kind: ItemKind::Word,
                split,
            });
        }
    }
    labels.flush()?;
    let corpus = Corpus {
        layout: "synthetic".into(),
        root: out.to_path_buf(),
        seed: Some(seed),
        writers: (1..=writers as u32).collect(),
        items,
    };
    corpus.validate()?;
    let mut portable = corpus.clone();
    portable.root = PathBuf::from(".");
    portable.save_manifest(&out.join("corpus.json"))?;
    Ok(corpus)
}

/// Labels written by [`generate_synthetic`].
pub fn read_labels(path: &Path) -> Result<Vec<LabelRecord>> {
    fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

/// Opens a corpus root: a `corpus.json` manifest if present, otherwise the named layout.
pub fn open_corpus(root: &Path, layout: &str, seed: u64) -> Result<Corpus> {
    let manifest = root.join("corpus.json");
    match layout {
        "auto" if manifest.is_file() => {
            let mut c = Corpus::load_manifest(&manifest)?;
            c.root = root.to_path_buf();
            Ok(c)
        }
        "auto" | "iam" => load_iam_layout(root, seed),
        "cvl" => load_cvl_layout(root),
        other => Err(Error::Config(format!("unknown corpus layout {other:?}"))),
    }
}
