use std::collections::BTreeMap;

use log::debug;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embednet::graph::Graph;
use crate::embednet::loss::{contrastive_loss_var, triplet_loss_var};
use crate::embednet::net::EmbedNet;
use crate::embednet::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Triplet,
    Contrastive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub epochs: usize,
    pub seed: u64,
    pub margin: f64,
    /// Triplets (or pairs) drawn per epoch.
    pub samples_per_epoch: usize,
    pub loss: LossKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            epochs: 10,
            seed: 0,
            margin: 0.2,
            samples_per_epoch: 256,
            loss: LossKind::Triplet,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::param("batch_size must be >= 1"));
        }
        if !(self.learning_rate >= 0.0) {
            return Err(Error::param("learning_rate must be >= 0"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return Err(Error::param("Adam moments must lie in [0, 1) and eps > 0"));
        }
        match self.loss {
            LossKind::Triplet if self.margin < 0.0 => Err(Error::param("triplet margin must be >= 0")),
            LossKind::Contrastive if !(self.margin > 0.0) => Err(Error::param("contrastive margin must be > 0")),
            _ => Ok(()),
        }
    }
}

/// A network input with its class label.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub input: Tensor,
    pub class: u32,
}

/// Sample indices; `class(anchor) == class(positive) != class(negative)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Triplet {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pair {
    pub a: usize,
    pub b: usize,
    pub same: bool,
}

#[derive(Debug, Clone, Copy)]
enum Example {
    Triplet(Triplet),
    Pair(Pair),
}

/// Adam with bias-corrected moments, one state slot per parameter tensor.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(cfg: &TrainConfig) -> Self {
        Self {
            lr: cfg.learning_rate,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> u32 {
        self.t
    }

    /// Applies one update from each tensor's `grad`; tensors without a gradient are skipped.
    pub fn step(&mut self, params: &mut [&mut Tensor]) {
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.v = self.m.clone();
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for (i, p) in params.iter_mut().enumerate() {
            let Some(grad) = p.grad.take() else { continue };
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, w) in p.values_mut().iter_mut().enumerate() {
                let g = grad[j];
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g * g;
                let mh = m[j] / c1;
                let vh = v[j] / c2;
                *w -= self.lr * mh / (vh.sqrt() + self.eps);
            }
            p.grad = Some(grad);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean per-example loss for each epoch, measured before each batch update.
    pub loss_history: Vec<f64>,
    pub steps: u32,
}

/// Loss and per-parameter gradients for one example. The network is evaluated on every
/// input against the same parameter nodes, so all branches share one weight set.
fn example_gradients(net: &EmbedNet, samples: &[LabeledSample], ex: Example, margin: f64) -> Result<(f64, Vec<Vec<f64>>)> {
    let mut g = Graph::new();
    let loss = match ex {
        Example::Triplet(t) => {
            let xa = g.input(&samples[t.anchor].input);
            let xp = g.input(&samples[t.positive].input);
            let xn = g.input(&samples[t.negative].input);
            let fa = net.forward(&mut g, xa)?;
            let fp = net.forward(&mut g, xp)?;
            let fnn = net.forward(&mut g, xn)?;
            triplet_loss_var(&mut g, fa, fp, fnn, margin)?
        }
        Example::Pair(p) => {
            let xa = g.input(&samples[p.a].input);
            let xb = g.input(&samples[p.b].input);
            let fa = net.forward(&mut g, xa)?;
            let fb = net.forward(&mut g, xb)?;
            contrastive_loss_var(&mut g, fa, fb, p.same, margin)?
        }
    };
    debug_assert_eq!(g.param_count(), net.param_count(), "branches must share parameters");
    let value = g.scalar(loss);
    let grads = g.backward(loss)?;
    let per_param = net
        .named_params()
        .into_iter()
        .map(|(_, t)| grads.param(t).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.len()]))
        .collect();
    Ok((value, per_param))
}

/// Runs one optimizer step on a batch; returns the batch's summed loss.
fn batch_step(net: &mut EmbedNet, samples: &[LabeledSample], batch: &[Example], margin: f64, adam: &mut Adam) -> Result<f64> {
    let results: Vec<(f64, Vec<Vec<f64>>)> = {
        let shared: &EmbedNet = net;
        batch
            .par_iter()
            .map(|&ex| example_gradients(shared, samples, ex, margin))
            .collect::<Result<_>>()?
    };
    let scale = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    let mut params = net.params_mut();
    for p in params.iter_mut() {
        p.zero_grad();
    }
    // Accumulate in example order so the result does not depend on scheduling.
    for (loss, grads) in &results {
        total += loss;
        for (p, g) in params.iter_mut().zip(grads) {
            let buf = p.grad.as_mut().expect("zeroed above");
            for (b, v) in buf.iter_mut().zip(g) {
                *b += v * scale;
            }
        }
    }
    adam.step(&mut params);
    Ok(total)
}

fn run_epochs(
    net: &mut EmbedNet,
    samples: &[LabeledSample],
    cfg: &TrainConfig,
    mut draw: impl FnMut(&mut ChaCha8Rng, usize) -> Vec<Example>,
) -> Result<TrainReport> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(cfg);
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let examples = draw(&mut rng, epoch);
        if examples.is_empty() {
            return Err(Error::Corpus("no training examples".into()));
        }
        let mut sum = 0.0;
        for batch in examples.chunks(cfg.batch_size) {
            sum += batch_step(net, samples, batch, cfg.margin, &mut adam)?;
        }
        let mean = sum / examples.len() as f64;
        debug!("epoch {epoch}: mean loss {mean:.6}");
        history.push(mean);
    }
    // Gradient buffers are scratch space; a trained network carries only its weights.
    for p in net.params_mut() {
        p.grad = None;
    }
    Ok(TrainReport {
        loss_history: history,
        steps: adam.steps(),
    })
}

/// Sample indices grouped by class, in ascending class order.
fn group_by_class(samples: &[LabeledSample]) -> BTreeMap<u32, Vec<usize>> {
    let mut groups: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, s) in samples.iter().enumerate() {
        groups.entry(s.class).or_default().push(i);
    }
    groups
}

fn sample_examples(
    rng: &mut ChaCha8Rng,
    groups: &[Vec<usize>],
    anchor_classes: &[usize],
    count: usize,
    loss: LossKind,
) -> Vec<Example> {
    let pick = |rng: &mut ChaCha8Rng, v: &[usize]| v[rng.random_range(0..v.len())];
    let other_class = |rng: &mut ChaCha8Rng, c: usize| {
        let k = rng.random_range(0..groups.len() - 1);
        if k >= c {
            k + 1
        } else {
            k
        }
    };
    (0..count)
        .map(|_| {
            let c = anchor_classes[rng.random_range(0..anchor_classes.len())];
            let members = &groups[c];
            let a = rng.random_range(0..members.len());
            let mut p = rng.random_range(0..members.len() - 1);
            if p >= a {
                p += 1;
            }
            match loss {
                LossKind::Triplet => {
                    let nc = other_class(rng, c);
                    Example::Triplet(Triplet {
                        anchor: members[a],
                        positive: members[p],
                        negative: pick(rng, &groups[nc]),
                    })
                }
                LossKind::Contrastive => {
                    if rng.random_bool(0.5) {
                        Example::Pair(Pair {
                            a: members[a],
                            b: members[p],
                            same: true,
                        })
                    } else {
                        let nc = other_class(rng, c);
                        Example::Pair(Pair {
                            a: members[a],
                            b: pick(rng, &groups[nc]),
                            same: false,
                        })
                    }
                }
            }
        })
        .collect()
}

/// Trains `net` on random triplets (or pairs for the contrastive loss). Anchor classes are
/// drawn uniformly among classes with at least two samples; negative classes uniformly
/// among the rest.
pub fn train_siamese(samples: &[LabeledSample], net: &mut EmbedNet, cfg: &TrainConfig) -> Result<TrainReport> {
    let groups: Vec<Vec<usize>> = group_by_class(samples).into_values().collect();
    if groups.len() < 2 {
        return Err(Error::Corpus(format!("need at least 2 classes, got {}", groups.len())));
    }
    let anchor_classes: Vec<usize> = (0..groups.len()).filter(|&c| groups[c].len() >= 2).collect();
    if anchor_classes.is_empty() {
        return Err(Error::Corpus("no class has 2 or more samples".into()));
    }
    run_epochs(net, samples, cfg, |rng, _| {
        sample_examples(rng, &groups, &anchor_classes, cfg.samples_per_epoch, cfg.loss)
    })
}

/// Trains on a fixed triplet list, each epoch visiting every triplet once in order.
pub fn train_on_triplets(
    samples: &[LabeledSample],
    triplets: &[Triplet],
    net: &mut EmbedNet,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    for t in triplets {
        let n = samples.len();
        if t.anchor >= n || t.positive >= n || t.negative >= n {
            return Err(Error::param("triplet index out of range"));
        }
        let (a, p, q) = (&samples[t.anchor], &samples[t.positive], &samples[t.negative]);
        if a.class != p.class || a.class == q.class {
            return Err(Error::param("triplet classes must satisfy A = P != N"));
        }
    }
    let fixed: Vec<Example> = triplets.iter().map(|&t| Example::Triplet(t)).collect();
    run_epochs(net, samples, &TrainConfig { loss: LossKind::Triplet, ..cfg.clone() }, |_, _| fixed.clone())
}
