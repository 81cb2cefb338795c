//! Central finite-difference oracle for the autograd engine.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wordwriter::embednet::loss::{contrastive_loss_var, triplet_loss_var};
use wordwriter::embednet::{
    Activation, ConvLayer, Dense, EmbedNet, Graph, NetArch, ResidualBlock, Tensor, Var,
};

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
/// Gradients below this magnitude are compared on an absolute scale.
pub const FLOOR: f64 = 1e-4;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

/// Compares `eval`'s gradients against central differences of its loss over every scalar
/// returned by `params`. Returns the largest relative error.
pub fn check<M: Clone>(
    model: &M,
    params: impl Fn(&mut M) -> Vec<&mut Tensor>,
    eval: impl Fn(&M) -> (f64, Vec<Vec<f64>>),
) -> f64 {
    let (_, analytic) = eval(model);
    let mut probe = model.clone();
    let shapes: Vec<usize> = params(&mut probe).iter().map(|t| t.len()).collect();
    assert_eq!(analytic.len(), shapes.len());
    let mut worst = 0.0f64;
    for (i, &n) in shapes.iter().enumerate() {
        assert_eq!(analytic[i].len(), n);
        for j in 0..n {
            let mut plus = model.clone();
            params(&mut plus)[i].values_mut()[j] += STEP;
            let mut minus = model.clone();
            params(&mut minus)[i].values_mut()[j] -= STEP;
            let numeric = (eval(&plus).0 - eval(&minus).0) / (2.0 * STEP);
            worst = worst.max(relative_error(analytic[i][j], numeric));
        }
    }
    worst
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn randomize(rng: &mut ChaCha8Rng, t: &mut Tensor) {
    t.values_mut().iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
}

/// Gradients of `loss` for each tensor, in order.
fn grads_of(g: &Graph<'_>, loss: Var, tensors: &[&Tensor]) -> Vec<Vec<f64>> {
    let grads = g.backward(loss).unwrap();
    tensors
        .iter()
        .map(|t| grads.param(t).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.len()]))
        .collect()
}

/// `sum(y * r)` for a fixed random `r`, so every output element gets a distinct weight.
fn weighted_sum(g: &mut Graph<'_>, y: Var, r: &Tensor) -> Var {
    let rv = g.input(r);
    let prod = g.mul(y, rv).unwrap();
    g.sum(prod)
}

#[derive(Clone)]
struct ConvCase {
    layer: ConvLayer,
    input: Tensor,
    r: Tensor,
}

pub fn conv_case(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (cin, cout) = (rng.random_range(1..=3), rng.random_range(1..=3));
    let k = [1, 3, 5][rng.random_range(0..3)];
    let stride = rng.random_range(1..=2);
    let act = if rng.random_bool(0.5) { Activation::Relu } else { Activation::Identity };
    let (h, w) = (rng.random_range(5..=8), rng.random_range(5..=8));
    let pad = rng.random_range(0..=k / 2);
    let mut layer = ConvLayer::init(&mut rng, cin, cout, k, stride, act);
    layer.padding = pad;
    randomize(&mut rng, &mut layer.bias);
    let input = random_tensor(&mut rng, vec![cin, h, w]);
    let (oh, ow) = layer.output_size(h, w);
    let r = random_tensor(&mut rng, vec![cout, oh, ow]);
    let case = ConvCase { layer, input, r };
    check(
        &case,
        |c| vec![&mut c.layer.weight, &mut c.layer.bias, &mut c.input],
        |c| {
            let mut g = Graph::new();
            let x = g.param(&c.input);
            let y = c.layer.forward(&mut g, x).unwrap();
            let l = weighted_sum(&mut g, y, &c.r);
            (g.scalar(l), grads_of(&g, l, &[&c.layer.weight, &c.layer.bias, &c.input]))
        },
    )
}

#[derive(Clone)]
struct BlockCase {
    block: ResidualBlock,
    input: Tensor,
    r: Tensor,
}

pub fn residual_case(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cin = rng.random_range(1..=3);
    let filters = rng.random_range(1..=3);
    let stride = rng.random_range(1..=2);
    let mut block = ResidualBlock::init(&mut rng, cin, filters, stride);
    for t in block.params_mut() {
        if t.shape().len() == 1 {
            randomize(&mut rng, t);
        }
    }
    let (h, w) = (rng.random_range(4..=7), rng.random_range(4..=7));
    let input = random_tensor(&mut rng, vec![cin, h, w]);
    let (oh, ow) = block.conv1.output_size(h, w);
    let r = random_tensor(&mut rng, vec![filters, oh, ow]);
    let case = BlockCase { block, input, r };
    check(
        &case,
        |c| {
            let mut v = c.block.params_mut();
            v.push(&mut c.input);
            v
        },
        |c| {
            let mut g = Graph::new();
            let x = g.param(&c.input);
            let y = c.block.forward(&mut g, x).unwrap();
            let l = weighted_sum(&mut g, y, &c.r);
            let mut named = Vec::new();
            c.block.named_params("b", &mut named);
            let mut ts: Vec<&Tensor> = named.into_iter().map(|(_, t)| t).collect();
            ts.push(&c.input);
            (g.scalar(l), grads_of(&g, l, &ts))
        },
    )
}

#[derive(Clone)]
struct DenseCase {
    dense: Dense,
    input: Tensor,
    r: Tensor,
}

/// Global average pooling followed by the dense layer.
pub fn dense_case(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = rng.random_range(1..=4);
    let out = rng.random_range(1..=5);
    let mut dense = Dense::init(&mut rng, c, out);
    randomize(&mut rng, &mut dense.bias);
    let (h, w) = (rng.random_range(1..=4), rng.random_range(1..=4));
    let input = random_tensor(&mut rng, vec![c, h, w]);
    let r = random_tensor(&mut rng, vec![out]);
    let case = DenseCase { dense, input, r };
    check(
        &case,
        |c| vec![&mut c.dense.weight, &mut c.dense.bias, &mut c.input],
        |c| {
            let mut g = Graph::new();
            let x = g.param(&c.input);
            let p = g.global_avg_pool(x).unwrap();
            let y = c.dense.forward(&mut g, p).unwrap();
            let l = weighted_sum(&mut g, y, &c.r);
            (g.scalar(l), grads_of(&g, l, &[&c.dense.weight, &c.dense.bias, &c.input]))
        },
    )
}

pub fn tiny_arch() -> NetArch {
    NetArch {
        input_size: 9,
        stem_filters: 4,
        stem_kernel: 3,
        stem_stride: 1,
        block_filters: vec![4, 4],
        embed_dim: 4,
    }
}

fn tiny_net(rng: &mut ChaCha8Rng) -> EmbedNet {
    let mut net = EmbedNet::new(tiny_arch(), rng.random()).unwrap();
    for t in net.params_mut() {
        if t.shape().len() == 1 {
            t.values_mut().iter_mut().for_each(|v| *v = rng.random_range(-0.2..0.2));
        }
    }
    net
}

fn unit_input(rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::new(vec![1, 9, 9], (0..81).map(|_| rng.random::<f64>()).collect()).unwrap()
}

fn net_grads(g: &Graph<'_>, loss: Var, net: &EmbedNet) -> Vec<Vec<f64>> {
    let ts: Vec<&Tensor> = net.named_params().into_iter().map(|(_, t)| t).collect();
    grads_of(g, loss, &ts)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Triplet loss through a tiny two-block network, margin chosen so the hinge is active.
pub fn triplet_case(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net = tiny_net(&mut rng);
    let (a, p, n) = (unit_input(&mut rng), unit_input(&mut rng), unit_input(&mut rng));
    let (fa, fp, fnn) = (
        net.embed_tensor(&a).unwrap(),
        net.embed_tensor(&p).unwrap(),
        net.embed_tensor(&n).unwrap(),
    );
    let margin = (sq_dist(&fa, &fnn) - sq_dist(&fa, &fp)).max(0.0) + 0.5;
    check(
        &net,
        |m| m.params_mut(),
        |m| {
            let mut g = Graph::new();
            let (xa, xp, xn) = (g.input(&a), g.input(&p), g.input(&n));
            let ya = m.forward(&mut g, xa).unwrap();
            let yp = m.forward(&mut g, xp).unwrap();
            let yn = m.forward(&mut g, xn).unwrap();
            assert_eq!(g.param_count(), m.param_count());
            let l = triplet_loss_var(&mut g, ya, yp, yn, margin).unwrap();
            (g.scalar(l), net_grads(&g, l, m))
        },
    )
}

/// Contrastive loss for a matching and a non-matching pair.
pub fn contrastive_case(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net = tiny_net(&mut rng);
    let (a, b) = (unit_input(&mut rng), unit_input(&mut rng));
    let d = sq_dist(&net.embed_tensor(&a).unwrap(), &net.embed_tensor(&b).unwrap()).sqrt();
    let margin = d + 0.5;
    [true, false]
        .into_iter()
        .map(|same| {
            check(
                &net,
                |m| m.params_mut(),
                |m| {
                    let mut g = Graph::new();
                    let (xa, xb) = (g.input(&a), g.input(&b));
                    let ya = m.forward(&mut g, xa).unwrap();
                    let yb = m.forward(&mut g, xb).unwrap();
                    let l = contrastive_loss_var(&mut g, ya, yb, same, margin).unwrap();
                    (g.scalar(l), net_grads(&g, l, m))
                },
            )
        })
        .fold(0.0, f64::max)
}

pub struct SuiteResult {
    pub name: &'static str,
    pub worst: f64,
    pub seeds: usize,
}

pub const CASES: [(&str, fn(u64) -> f64); 5] = [
    ("conv", conv_case),
    ("residual", residual_case),
    ("pool+dense", dense_case),
    ("triplet", triplet_case),
    ("contrastive", contrastive_case),
];

pub fn run_suite(seeds: u64) -> Vec<SuiteResult> {
    CASES
        .iter()
        .map(|&(name, case)| SuiteResult {
            name,
            worst: (0..seeds).map(case).fold(0.0, f64::max),
            seeds: seeds as usize,
        })
        .collect()
}
