//! End-to-end training, identification and evaluation.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use rand::seq::{index::sample, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::{
    fuse_page, fuse_word, predict, score_all, train_ovr_svm, Prediction, ScoreVector, WeightedDescriptors, WriterModel,
};
use crate::config::{EmbedSource, FusionMode, PipelineConfig};
use crate::corpus::{Corpus, ItemKind, Split};
use crate::embednet::{patch_tensor, train_siamese, EmbedNet, LabeledSample};
use crate::error::{Error, Result};
use crate::imaging::{segment_page, GrayImage};
use crate::keypoints::{word_patches, NormalizedPatch};
use crate::saliency::{fit_saliency, SaliencyModel};
use crate::sparsepca::{fit_basis, project, DataMatrix, SparseBasis};

/// A word image with its label.
#[derive(Debug, Clone)]
pub struct WordImage {
    pub id: String,
    pub writer: u32,
    pub document: String,
    pub image: GrayImage,
}

fn item_id(path: &Path) -> String {
    path.to_string_lossy().replace('\\', "/")
}

/// Loads the word images of one split; page items are segmented into words first.
pub fn load_words(corpus: &Corpus, split: Split, cfg: &PipelineConfig) -> Result<Vec<WordImage>> {
    let items: Vec<_> = corpus.split(split).collect();
    let loaded: Vec<Result<Vec<WordImage>>> = items
        .par_iter()
        .map(|item| {
            let path = corpus.path_of(item);
            let image = GrayImage::load(&path).map_err(|e| Error::Ingestion {
                paths: vec![path.clone()],
                reason: e.to_string(),
            })?;
            let id = item_id(&item.path);
            Ok(match item.kind {
                ItemKind::Word => vec![WordImage {
                    id,
                    writer: item.writer,
                    document: item.document.clone(),
                    image,
                }],
                ItemKind::Page => {
                    let s = &cfg.segment;
                    segment_page(&image, s.denoise_sigma, s.threshold, s.log_sigma, s.min_area)?
                        .into_iter()
                        .enumerate()
                        .map(|(i, r)| WordImage {
                            id: format!("{id}#{i}"),
                            writer: item.writer,
                            document: item.document.clone(),
                            image: r.image,
                        })
                        .collect()
                }
            })
        })
        .collect();
    let mut out = Vec::new();
    for r in loaded {
        out.extend(r?);
    }
    Ok(out)
}

/// Normalized keypoint patches of every word, in word order.
pub fn extract_fragments(words: &[WordImage], cfg: &PipelineConfig) -> Result<Vec<Vec<NormalizedPatch>>> {
    words
        .par_iter()
        .map(|w| {
            let patches = word_patches(&w.image, &w.id, &cfg.sift)?;
            if patches.is_empty() {
                warn!("word {}: no keypoints", w.id);
            }
            Ok(patches.into_iter().map(|p| p.patch).collect())
        })
        .collect()
}

/// Embeddings of every word's patches.
pub fn embed_fragments(net: &EmbedNet, fragments: &[Vec<NormalizedPatch>]) -> Result<Vec<Vec<Vec<f64>>>> {
    fragments.iter().map(|f| net.embed_all(f)).collect()
}

/// Embedder, sparse basis and saliency weights, fitted on the training split.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureModel {
    pub net: EmbedNet,
    pub basis: SparseBasis,
    pub saliency: SaliencyModel,
    pub loss_history: Vec<f64>,
}

/// Seeded subset of `(word, patch)` indices per writer, capped at `cap` (0 = all).
fn capped_indices(lengths: &[usize], writers: &[u32], cap: usize, seed: u64) -> Vec<(usize, usize)> {
    let mut per_writer: BTreeMap<u32, Vec<(usize, usize)>> = BTreeMap::new();
    for (wi, &n) in lengths.iter().enumerate() {
        for pi in 0..n {
            per_writer.entry(writers[wi]).or_default().push((wi, pi));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (_, idx) in per_writer {
        if cap > 0 && idx.len() > cap {
            let mut pick = sample(&mut rng, idx.len(), cap).into_vec();
            pick.sort_unstable();
            out.extend(pick.into_iter().map(|i| idx[i]));
        } else {
            out.extend(idx);
        }
    }
    out
}

fn train_embedder(cfg: &PipelineConfig, fragments: &[Vec<NormalizedPatch>], writers: &[u32]) -> Result<(EmbedNet, Vec<f64>)> {
    let mut net = EmbedNet::new(cfg.net.clone(), cfg.seed)?;
    if cfg.embed_source == EmbedSource::None || cfg.train.epochs == 0 {
        return Ok((net, Vec::new()));
    }
    let lengths: Vec<usize> = fragments.iter().map(Vec::len).collect();
    let picks = capped_indices(&lengths, writers, cfg.embed_patches_per_writer, cfg.seed ^ 0xe3b);
    let samples = picks
        .iter()
        .map(|&(w, p)| {
            Ok(LabeledSample {
                input: patch_tensor(&fragments[w][p])?,
                class: writers[w],
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut tc = cfg.train.clone();
    tc.seed = cfg.seed;
    let report = train_siamese(&samples, &mut net, &tc)?;
    Ok((net, report.loss_history))
}

/// Flattens per-word fragment rows into a matrix with per-row writer labels.
fn stack(rows: &[Vec<Vec<f64>>], writers: &[u32]) -> Result<(DataMatrix, Vec<u32>)> {
    let mut flat = Vec::new();
    let mut labels = Vec::new();
    for (w, word) in rows.iter().enumerate() {
        for r in word {
            flat.push(r.clone());
            labels.push(writers[w]);
        }
    }
    if flat.is_empty() {
        return Err(Error::Corpus("no fragments in the training split".into()));
    }
    Ok((DataMatrix::from_rows(&flat)?, labels))
}

impl FeatureModel {
    /// Trains the embedder, then fits the basis and weights on the training embeddings.
    /// Returns the model with those embeddings.
    pub fn fit(cfg: &PipelineConfig, fragments: &[Vec<NormalizedPatch>], writers: &[u32]) -> Result<(Self, Vec<Vec<Vec<f64>>>)> {
        let t = Instant::now();
        let (net, loss_history) = train_embedder(cfg, fragments, writers)?;
        info!("embedder trained in {:.1}s", t.elapsed().as_secs_f64());
        let t = Instant::now();
        let embeddings = embed_fragments(&net, fragments)?;
        info!("training fragments embedded in {:.1}s", t.elapsed().as_secs_f64());
        let t = Instant::now();
        let (x, labels) = stack(&embeddings, writers)?;
        let mut spca = cfg.spca.clone();
        spca.seed = cfg.seed;
        let basis = fit_basis(&x, &spca)?;
        let alpha = project(&x, &basis)?;
        let saliency = fit_saliency(&alpha, &labels, cfg.saliency_epsilon, cfg.weight_mode)?;
        info!(
            "sparse basis ({} components, sparsity {:.2}) and saliency fitted in {:.1}s",
            basis.components(),
            basis.mean_sparsity(),
            t.elapsed().as_secs_f64()
        );
        Ok((
            Self {
                net,
                basis,
                saliency,
                loss_history,
            },
            embeddings,
        ))
    }

    /// SVM inputs for `mode` from raw embedding rows.
    pub fn descriptors(&self, mode: FusionMode, rows: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        if mode == FusionMode::Baseline || rows.is_empty() {
            return Ok(rows.to_vec());
        }
        let alpha = project(&DataMatrix::from_rows(rows)?, &self.basis)?;
        let w = self.saliency.weights();
        Ok((0..alpha.rows)
            .map(|i| {
                let r = alpha.row(i);
                match mode {
                    FusionMode::Weighted => r.iter().zip(&w).map(|(a, w)| a * w).collect(),
                    _ => r.to_vec(),
                }
            })
            .collect())
    }
}

/// Everything needed to identify writers.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub config: PipelineConfig,
    pub features: FeatureModel,
    pub mode: FusionMode,
    pub svms: Vec<WriterModel>,
}

fn fit_svms(cfg: &PipelineConfig, features: &FeatureModel, mode: FusionMode, embeddings: &[Vec<Vec<f64>>], writers: &[u32]) -> Result<Vec<WriterModel>> {
    let t = Instant::now();
    let lengths: Vec<usize> = embeddings.iter().map(Vec::len).collect();
    let picks = capped_indices(&lengths, writers, cfg.svm_fragments_per_writer, cfg.seed ^ 0x5e1);
    let rows: Vec<Vec<f64>> = picks.iter().map(|&(w, p)| embeddings[w][p].clone()).collect();
    let labels: Vec<u32> = picks.iter().map(|&(w, _)| writers[w]).collect();
    let desc = features.descriptors(mode, &rows)?;
    let cols = desc.first().map_or(0, Vec::len);
    let data = WeightedDescriptors::new(desc.len(), cols, desc.concat(), labels)?;
    let mut svm = cfg.svm.clone();
    svm.seed = cfg.seed;
    let models = train_ovr_svm(&data, &svm)?;
    info!(
        "{} SVMs ({} fragments, {} dims) trained in {:.1}s",
        mode.name(),
        data.rows,
        cols,
        t.elapsed().as_secs_f64()
    );
    Ok(models)
}

impl TrainedModel {
    pub fn writers(&self) -> Vec<u32> {
        self.svms.iter().map(|m| m.writer).collect()
    }

    /// Fused scores of one word from its raw fragment embeddings.
    pub fn score_embeddings(&self, embeddings: &[Vec<f64>]) -> Result<ScoreVector> {
        let desc = self.features.descriptors(self.mode, embeddings)?;
        let scores = desc
            .iter()
            .map(|d| score_all(&self.svms, d))
            .collect::<Result<Vec<_>>>()?;
        fuse_word(&self.writers(), &scores)
    }

    pub fn score_word(&self, image: &GrayImage, id: &str) -> Result<ScoreVector> {
        let patches: Vec<NormalizedPatch> = word_patches(image, id, &self.config.sift)?
            .into_iter()
            .map(|p| p.patch)
            .collect();
        self.score_embeddings(&self.features.net.embed_all(&patches)?)
    }

    /// Segments a page and averages the scores of its words; words without fragments
    /// are skipped.
    pub fn score_page(&self, page: &GrayImage, id: &str) -> Result<ScoreVector> {
        let s = &self.config.segment;
        let regions = segment_page(page, s.denoise_sigma, s.threshold, s.log_sigma, s.min_area)?;
        let mut words = Vec::new();
        for (i, r) in regions.iter().enumerate() {
            match self.score_word(&r.image, &format!("{id}#{i}")) {
                Ok(sv) => words.push(sv),
                Err(Error::NoEvidence(_)) => {}
                Err(e) => return Err(e),
            }
        }
        fuse_page(&words)
    }
}

/// Identification outcome for one word.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordResult {
    pub word: String,
    pub truth: u32,
    /// `None` when the word had no usable fragments.
    pub scores: Option<ScoreVector>,
    pub prediction: Option<Prediction>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub words: usize,
    pub accuracy: f64,
    pub per_resample: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub mode: FusionMode,
    pub words: usize,
    pub no_evidence: usize,
    pub top1: f64,
    pub top5: f64,
    /// truth writer -> predicted writer -> count.
    pub confusion: BTreeMap<u32, BTreeMap<u32, usize>>,
    pub curve: Vec<CurvePoint>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub results: Vec<WordResult>,
    pub summary: EvalSummary,
}

/// Top-k hit rate over all words; words without evidence count as misses.
fn topk_rate(results: &[WordResult], k: usize) -> f64 {
    let hits = results
        .iter()
        .filter(|r| {
            r.prediction
                .as_ref()
                .and_then(|p| p.rank_of(r.truth))
                .is_some_and(|rank| rank < k)
        })
        .count();
    hits as f64 / results.len() as f64
}

/// Accuracy when `k` words per writer are fused, for `k` in `1..=max_words`.
///
/// Each resample shuffles every writer's test words and splits them into disjoint
/// groups of `k`; a group counts as correct when its fused ranking puts the writer first.
/// Words without evidence contribute nothing to a group's average, and a group with
/// no evidence at all counts as a miss.
pub fn word_count_curve(results: &[WordResult], max_words: usize, resamples: usize, seed: u64) -> Result<Vec<CurvePoint>> {
    let mut by_writer: BTreeMap<u32, Vec<&WordResult>> = BTreeMap::new();
    for r in results {
        by_writer.entry(r.truth).or_default().push(r);
    }
    let mut curve = Vec::new();
    for k in 1..=max_words {
        let mut per_resample = Vec::with_capacity(resamples);
        for s in 0..resamples {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((k as u64) << 20) ^ s as u64);
            let (mut hits, mut groups) = (0usize, 0usize);
            for (&writer, words) in &by_writer {
                let mut order: Vec<&WordResult> = words.clone();
                order.shuffle(&mut rng);
                for group in order.chunks_exact(k) {
                    groups += 1;
                    let scored: Vec<ScoreVector> = group.iter().filter_map(|r| r.scores.clone()).collect();
                    if scored.is_empty() {
                        continue;
                    }
                    if predict(&fuse_page(&scored)?)?.top() == writer {
                        hits += 1;
                    }
                }
            }
            if groups == 0 {
                break;
            }
            per_resample.push(hits as f64 / groups as f64);
        }
        if per_resample.is_empty() {
            warn!("no writer has {k} test words; curve stops at {}", k - 1);
            break;
        }
        curve.push(CurvePoint {
            words: k,
            accuracy: per_resample.iter().sum::<f64>() / per_resample.len() as f64,
            per_resample,
        });
    }
    Ok(curve)
}

pub fn evaluate_scores(mode: FusionMode, truths: &[(String, u32)], scores: Vec<Option<ScoreVector>>, cfg: &PipelineConfig) -> Result<EvalReport> {
    if truths.is_empty() {
        return Err(Error::Corpus("the test split is empty".into()));
    }
    let mut results = Vec::with_capacity(truths.len());
    let mut confusion: BTreeMap<u32, BTreeMap<u32, usize>> = BTreeMap::new();
    for ((word, truth), sv) in truths.iter().zip(scores) {
        let prediction = sv.as_ref().map(predict).transpose()?;
        if let Some(p) = &prediction {
            *confusion.entry(*truth).or_default().entry(p.top()).or_default() += 1;
        }
        results.push(WordResult {
            word: word.clone(),
            truth: *truth,
            scores: sv,
            prediction,
        });
    }
    let curve = word_count_curve(&results, cfg.curve_max_words, cfg.curve_resamples, cfg.seed)?;
    let summary = EvalSummary {
        mode,
        words: results.len(),
        no_evidence: results.iter().filter(|r| r.scores.is_none()).count(),
        top1: topk_rate(&results, 1),
        top5: topk_rate(&results, 5),
        confusion,
        curve,
    };
    Ok(EvalReport { results, summary })
}

/// Scores precomputed test embeddings under `model`.
pub fn evaluate_embeddings(model: &TrainedModel, words: &[(String, u32)], embeddings: &[Vec<Vec<f64>>]) -> Result<EvalReport> {
    let scores = embeddings
        .par_iter()
        .map(|e| match model.score_embeddings(e) {
            Ok(sv) => Ok(Some(sv)),
            Err(Error::NoEvidence(_)) => Ok(None),
            Err(e) => Err(e),
        })
        .collect::<Result<Vec<_>>>()?;
    evaluate_scores(model.mode, words, scores, &model.config)
}

/// `word,truth,id1..idk,score1..scorek`; words without evidence leave the rank columns empty.
pub fn results_csv(results: &[WordResult], k: usize) -> String {
    let mut out = String::from("word,truth");
    for i in 1..=k {
        let _ = write!(out, ",id{i}");
    }
    for i in 1..=k {
        let _ = write!(out, ",score{i}");
    }
    out.push('\n');
    for r in results {
        let _ = write!(out, "{},{}", r.word, r.truth);
        let (ids, scores): (Vec<String>, Vec<String>) = match &r.prediction {
            Some(p) => (
                (0..k).map(|i| p.ranking.get(i).map(|w| w.to_string()).unwrap_or_default()).collect(),
                (0..k).map(|i| p.scores.get(i).map(|s| format!("{s:.6}")).unwrap_or_default()).collect(),
            ),
            None => (vec![String::new(); k], vec![String::new(); k]),
        };
        for v in ids.iter().chain(&scores) {
            out.push(',');
            out.push_str(v);
        }
        out.push('\n');
    }
    out
}

pub fn summary_json(summary: &EvalSummary) -> Result<String> {
    Ok(serde_json::to_string_pretty(summary)? + "\n")
}

/// Results of a full train-and-evaluate run on a corpus.
#[derive(Debug, Clone)]
pub struct Experiment {
    /// One model per requested mode, sharing the feature stages.
    pub models: Vec<TrainedModel>,
    pub reports: Vec<EvalReport>,
}

impl Experiment {
    /// `mode,top1,top5` rows.
    pub fn ablation_csv(&self) -> String {
        let mut out = String::from("mode,top1,top5\n");
        for r in &self.reports {
            let _ = writeln!(out, "{},{:.4},{:.4}", r.summary.mode.name(), r.summary.top1, r.summary.top5);
        }
        out
    }

    pub fn report(&self, mode: FusionMode) -> Option<&EvalReport> {
        self.reports.iter().find(|r| r.summary.mode == mode)
    }
}

/// Fits the feature stages once, then SVMs and test-split evaluation for every mode.
pub fn run_experiment(cfg: &PipelineConfig, corpus: &Corpus, modes: &[FusionMode], evaluate: bool) -> Result<Experiment> {
    cfg.validate()?;
    corpus.validate()?;
    let t = Instant::now();
    let train = load_words(corpus, Split::Train, cfg)?;
    let train_fragments = extract_fragments(&train, cfg)?;
    let train_writers: Vec<u32> = train.iter().map(|w| w.writer).collect();
    info!(
        "{} training words, {} fragments extracted in {:.1}s",
        train.len(),
        train_fragments.iter().map(Vec::len).sum::<usize>(),
        t.elapsed().as_secs_f64()
    );
    let (features, embeddings) = FeatureModel::fit(cfg, &train_fragments, &train_writers)?;
    let mut models = Vec::new();
    for &mode in modes {
        let svms = fit_svms(cfg, &features, mode, &embeddings, &train_writers)?;
        let mut config = cfg.clone();
        config.mode = mode;
        models.push(TrainedModel {
            config,
            features: features.clone(),
            mode,
            svms,
        });
    }
    let mut reports = Vec::new();
    if evaluate {
        let t = Instant::now();
        let test = load_words(corpus, Split::Test, cfg)?;
        let test_fragments = extract_fragments(&test, cfg)?;
        let test_embeddings = embed_fragments(&features.net, &test_fragments)?;
        let truths: Vec<(String, u32)> = test.iter().map(|w| (w.id.clone(), w.writer)).collect();
        info!("{} test words embedded in {:.1}s", test.len(), t.elapsed().as_secs_f64());
        for m in &models {
            let report = evaluate_embeddings(m, &truths, &test_embeddings)?;
            info!("{}: top1 {:.4} top5 {:.4}", m.mode.name(), report.summary.top1, report.summary.top5);
            reports.push(report);
        }
    }
    Ok(Experiment { models, reports })
}

/// Evaluates `model` on a corpus split.
pub fn evaluate_split(model: &TrainedModel, corpus: &Corpus, split: Split) -> Result<EvalReport> {
    let words = load_words(corpus, split, &model.config)?;
    if words.is_empty() {
        return Err(Error::Corpus(format!("the {split:?} split is empty")));
    }
    let fragments = extract_fragments(&words, &model.config)?;
    let embeddings = embed_fragments(&model.features.net, &fragments)?;
    let truths: Vec<(String, u32)> = words.iter().map(|w| (w.id.clone(), w.writer)).collect();
    evaluate_embeddings(model, &truths, &embeddings)
}

/// Result of identifying one input image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Identification {
    pub item: PathBuf,
    pub evidence: usize,
    pub ranking: Vec<u32>,
    pub scores: Vec<f64>,
}

/// Ranks writers for each image (word or page); items without fragments get an empty
/// ranking.
pub fn identify(model: &TrainedModel, paths: &[PathBuf], pages: bool, topk: usize) -> Result<Vec<Identification>> {
    paths
        .iter()
        .map(|p| {
            let image = GrayImage::load(p).map_err(|e| Error::Ingestion {
                paths: vec![p.clone()],
                reason: e.to_string(),
            })?;
            let id = item_id(p);
            let scored = if pages {
                model.score_page(&image, &id)
            } else {
                model.score_word(&image, &id)
            };
            match scored {
                Ok(sv) => {
                    let pred = predict(&sv)?;
                    Ok(Identification {
                        item: p.clone(),
                        evidence: sv.evidence,
                        ranking: pred.ranking.into_iter().take(topk).collect(),
                        scores: pred.scores.into_iter().take(topk).collect(),
                    })
                }
                Err(Error::NoEvidence(msg)) => {
                    warn!("{}: no evidence ({msg})", p.display());
                    Ok(Identification {
                        item: p.clone(),
                        evidence: 0,
                        ranking: Vec::new(),
                        scores: Vec::new(),
                    })
                }
                Err(e) => Err(e),
            }
        })
        .collect()
}

/// `item,evidence,id1..idk,score1..scorek`.
pub fn identifications_csv(ids: &[Identification], k: usize) -> String {
    let mut out = String::from("item,evidence");
    for i in 1..=k {
        let _ = write!(out, ",id{i}");
    }
    for i in 1..=k {
        let _ = write!(out, ",score{i}");
    }
    out.push('\n');
    for r in ids {
        let _ = write!(out, "{},{}", item_id(&r.item), r.evidence);
        for i in 0..k {
            out.push(',');
            if let Some(w) = r.ranking.get(i) {
                let _ = write!(out, "{w}");
            }
        }
        for i in 0..k {
            out.push(',');
            if let Some(s) = r.scores.get(i) {
                let _ = write!(out, "{s:.6}");
            }
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn result(word: &str, truth: u32, scores: Option<Vec<f64>>) -> WordResult {
        let sv = scores.map(|s| ScoreVector {
            writers: vec![1, 2],
            scores: s,
            evidence: 1,
        });
        WordResult {
            word: word.into(),
            truth,
            prediction: sv.as_ref().map(|s| predict(s).unwrap()),
            scores: sv,
        }
    }

    #[test]
    fn no_evidence_counts_as_miss() {
        let rs = vec![result("a", 1, Some(vec![0.9, 0.1])), result("b", 2, None)];
        assert_eq!(topk_rate(&rs, 1), 0.5);
        let csv = results_csv(&rs, 2);
        assert_eq!(csv, "word,truth,id1,id2,score1,score2\na,1,1,2,0.900000,0.100000\nb,2,,,,\n");
    }

    #[test]
    fn curve_fuses_groups() {
        // Writer 1: one wrong word is outvoted once two words are fused.
        let rs = vec![
            result("a", 1, Some(vec![0.9, 0.1])),
            result("b", 1, Some(vec![0.45, 0.55])),
            result("c", 2, Some(vec![0.2, 0.8])),
            result("d", 2, Some(vec![0.3, 0.7])),
        ];
        let curve = word_count_curve(&rs, 3, 4, 1).unwrap();
        assert_eq!(curve.len(), 2);
        assert_eq!(curve[0].accuracy, 0.75);
        assert_eq!(curve[1].accuracy, 1.0);
    }

    #[test]
    fn capped_indices_respect_cap() {
        let picks = capped_indices(&[5, 5, 2], &[1, 1, 2], 4, 3);
        assert_eq!(picks.iter().filter(|p| p.0 < 2).count(), 4);
        assert_eq!(picks.iter().filter(|p| p.0 == 2).count(), 2);
        assert_eq!(picks, capped_indices(&[5, 5, 2], &[1, 1, 2], 4, 3));
    }
}
