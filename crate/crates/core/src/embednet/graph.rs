//! Tape-based reverse-mode differentiation over float64 tensors.
//!
//! A [`Graph`] records every operation applied to its nodes. Parameters enter the tape
//! by reference through [`Graph::param`]; a parameter used several times (e.g. by the
//! three branches of a siamese triplet) maps to a single node, so its gradient is the
//! sum over all uses.

use std::borrow::Cow;
use std::collections::HashMap;

use crate::embednet::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Var,
        stride: usize,
        pad: usize,
        /// im2col of the input; empty when gradients are disabled
        cols: Vec<f64>,
    },
    Relu(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Sqrt(Var),
    Sum(Var),
    GlobalAvgPool(Var),
    Dense {
        input: Var,
        weight: Var,
        bias: Var,
    },
}

#[derive(Debug)]
struct Node<'a> {
    shape: Vec<usize>,
    value: Cow<'a, [f64]>,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug)]
pub struct Graph<'a> {
    nodes: Vec<Node<'a>>,
    params: HashMap<*const Tensor, Var>,
    record: bool,
}

impl Default for Graph<'_> {
    fn default() -> Self {
        Self::new()
    }
}

/// Output of [`Graph::backward`]: one optional gradient per tape node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    params: HashMap<*const Tensor, Var>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient for a parameter tensor that entered the tape via [`Graph::param`].
    pub fn param(&self, t: &Tensor) -> Option<&[f64]> {
        self.params
            .get(&(t as *const Tensor))
            .and_then(|v| self.wrt(*v))
    }
}

fn conv_out(size: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    (size + 2 * pad).checked_sub(k).map(|d| d / stride + 1)
}

/// `c[m x n] = a[m x k] * b[k x n]` with arbitrary strides (row stride, col stride).
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    beta: f64,
    c: &mut [f64],
) {
    debug_assert!(c.len() >= m * n);
    // SAFETY: callers pass buffers whose extents match the given dims and strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[allow(clippy::too_many_arguments)]
fn im2col(
    input: &[f64],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
) -> Vec<f64> {
    let p = oh * ow;
    let mut cols = vec![0.0; c * kh * kw * p];
    for ch in 0..c {
        let plane = &input[ch * h * w..(ch + 1) * h * w];
        for i in 0..kh {
            for j in 0..kw {
                let row = &mut cols[((ch * kh + i) * kw + j) * p..][..p];
                for oy in 0..oh {
                    let iy = (oy * stride + i) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    let dst = &mut row[oy * ow..(oy + 1) * ow];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * stride + j) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            *d = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

#[allow(clippy::too_many_arguments)]
fn col2im(
    cols: &[f64],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
    out: &mut [f64],
) {
    let p = oh * ow;
    for ch in 0..c {
        for i in 0..kh {
            for j in 0..kw {
                let row = &cols[((ch * kh + i) * kw + j) * p..][..p];
                for oy in 0..oh {
                    let iy = (oy * stride + i) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let base = ch * h * w + iy as usize * w;
                    for ox in 0..ow {
                        let ix = (ox * stride + j) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            out[base + ix as usize] += row[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

impl<'a> Graph<'a> {
    /// A tape that records everything needed for [`Graph::backward`].
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: HashMap::new(),
            record: true,
        }
    }

    /// Forward-only tape; [`Graph::backward`] fails on it.
    pub fn inference() -> Self {
        Self {
            record: false,
            ..Self::new()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of distinct parameter tensors on the tape.
    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    fn push(&mut self, shape: Vec<usize>, value: Cow<'a, [f64]>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            shape,
            value,
            op,
            requires_grad: requires_grad && self.record,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Constant input (no gradient).
    pub fn input(&mut self, t: &Tensor) -> Var {
        self.push(t.shape().to_vec(), Cow::Owned(t.values().to_vec()), Op::Leaf, false)
    }

    /// Input whose gradient is tracked.
    pub fn input_with_grad(&mut self, t: &Tensor) -> Var {
        self.push(t.shape().to_vec(), Cow::Owned(t.values().to_vec()), Op::Leaf, true)
    }

    /// Borrowed parameter; repeated calls with the same tensor return the same node.
    pub fn param(&mut self, t: &'a Tensor) -> Var {
        let key = t as *const Tensor;
        if let Some(v) = self.params.get(&key) {
            return *v;
        }
        let v = self.push(t.shape().to_vec(), Cow::Borrowed(t.values()), Op::Leaf, true);
        self.params.insert(key, v);
        v
    }

    /// 2-D cross-correlation: input `[C, H, W]`, weight `[O, C, kh, kw]`, bias `[O]`.
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var, stride: usize, pad: usize) -> Result<Var> {
        let ishape = self.shape(input).to_vec();
        let wshape = self.shape(weight).to_vec();
        if ishape.len() != 3 || wshape.len() != 4 {
            return Err(Error::dim(format!("conv2d input {ishape:?} weight {wshape:?}")));
        }
        let (c, h, w) = (ishape[0], ishape[1], ishape[2]);
        let (o, wc, kh, kw) = (wshape[0], wshape[1], wshape[2], wshape[3]);
        if wc != c {
            return Err(Error::dim(format!("conv2d expects {wc} input channels, got {c}")));
        }
        if self.shape(bias) != [o] {
            return Err(Error::dim(format!("conv2d bias {:?} for {o} filters", self.shape(bias))));
        }
        if stride == 0 {
            return Err(Error::param("conv2d stride must be >= 1"));
        }
        let (oh, ow) = match (conv_out(h, kh, stride, pad), conv_out(w, kw, stride, pad)) {
            (Some(a), Some(b)) => (a, b),
            _ => return Err(Error::dim(format!("kernel {kh}x{kw} larger than padded {h}x{w}"))),
        };
        let p = oh * ow;
        let cols = im2col(self.value(input), c, h, w, kh, kw, stride, pad, oh, ow);
        let mut out = vec![0.0; o * p];
        let bvals = self.value(bias);
        for (oc, chunk) in out.chunks_mut(p).enumerate() {
            chunk.iter_mut().for_each(|v| *v = bvals[oc]);
        }
        let k = c * kh * kw;
        gemm(o, k, p, self.value(weight), (k as isize, 1), &cols, (p as isize, 1), 1.0, &mut out);
        let rg = self.rg(input) || self.rg(weight) || self.rg(bias);
        let cols = if rg && self.record { cols } else { Vec::new() };
        Ok(self.push(
            vec![o, oh, ow],
            Cow::Owned(out),
            Op::Conv2d {
                input,
                weight,
                bias,
                stride,
                pad,
                cols,
            },
            rg,
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).iter().map(|v| v.max(0.0)).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x);
        self.push(shape, Cow::Owned(out), Op::Relu(x), rg)
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(format!(
                "elementwise shapes {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| f(*x, *y))
            .collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(shape, Cow::Owned(out), op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let out = self.value(x).iter().map(|v| v * s).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x);
        self.push(shape, Cow::Owned(out), Op::Scale(x, s), rg)
    }

    pub fn add_scalar(&mut self, x: Var, s: f64) -> Var {
        let out = self.value(x).iter().map(|v| v + s).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x);
        self.push(shape, Cow::Owned(out), Op::AddScalar(x), rg)
    }

    pub fn sqrt(&mut self, x: Var) -> Var {
        let out = self.value(x).iter().map(|v| v.sqrt()).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x);
        self.push(shape, Cow::Owned(out), Op::Sqrt(x), rg)
    }

    /// Sum of all elements, shape `[1]`.
    pub fn sum(&mut self, x: Var) -> Var {
        let s: f64 = self.value(x).iter().sum();
        let rg = self.rg(x);
        self.push(vec![1], Cow::Owned(vec![s]), Op::Sum(x), rg)
    }

    /// `[C, H, W] -> [C]` spatial mean.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 3 {
            return Err(Error::dim(format!("global_avg_pool on {shape:?}")));
        }
        let hw = shape[1] * shape[2];
        let out = self
            .value(x)
            .chunks(hw)
            .map(|c| c.iter().sum::<f64>() / hw as f64)
            .collect();
        let rg = self.rg(x);
        Ok(self.push(vec![shape[0]], Cow::Owned(out), Op::GlobalAvgPool(x), rg))
    }

    /// `y = W x + b` with input `[I]`, weight `[O, I]`, bias `[O]`.
    pub fn dense(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let ishape = self.shape(input).to_vec();
        let wshape = self.shape(weight).to_vec();
        if ishape.len() != 1 || wshape.len() != 2 || wshape[1] != ishape[0] {
            return Err(Error::dim(format!("dense input {ishape:?} weight {wshape:?}")));
        }
        let (o, i) = (wshape[0], wshape[1]);
        if self.shape(bias) != [o] {
            return Err(Error::dim(format!("dense bias {:?} for {o} outputs", self.shape(bias))));
        }
        let mut out = self.value(bias).to_vec();
        gemm(o, i, 1, self.value(weight), (i as isize, 1), self.value(input), (1, 1), 1.0, &mut out);
        let rg = self.rg(input) || self.rg(weight) || self.rg(bias);
        Ok(self.push(vec![o], Cow::Owned(out), Op::Dense { input, weight, bias }, rg))
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if !self.record {
            return Err(Error::Usage("backward on an inference-only graph".into()));
        }
        let Some(node) = self.nodes.get(loss.0) else {
            return Err(Error::Usage("backward without a recorded forward pass".into()));
        };
        if node.value.len() != 1 {
            return Err(Error::Usage(format!("backward from non-scalar node {:?}", node.shape)));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if node.requires_grad {
                self.propagate(node, &g, &mut grads);
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients {
            grads,
            params: self.params.clone(),
        })
    }

    fn propagate(&self, node: &Node<'a>, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let mut acc = |v: Var, delta: &dyn Fn(&mut [f64])| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            let n = self.nodes[v.0].value.len();
            let buf = grads[v.0].get_or_insert_with(|| vec![0.0; n]);
            delta(buf);
        };
        match &node.op {
            Op::Leaf => {}
            Op::Relu(x) => {
                let xv = self.value(*x);
                acc(*x, &|b| {
                    for ((b, gi), xi) in b.iter_mut().zip(g).zip(xv) {
                        if *xi > 0.0 {
                            *b += gi;
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                acc(*a, &|buf| buf.iter_mut().zip(g).for_each(|(x, gi)| *x += gi));
                acc(*b, &|buf| buf.iter_mut().zip(g).for_each(|(x, gi)| *x += gi));
            }
            Op::Sub(a, b) => {
                acc(*a, &|buf| buf.iter_mut().zip(g).for_each(|(x, gi)| *x += gi));
                acc(*b, &|buf| buf.iter_mut().zip(g).for_each(|(x, gi)| *x -= gi));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                acc(*a, &|buf| {
                    for i in 0..buf.len() {
                        buf[i] += g[i] * bv[i];
                    }
                });
                acc(*b, &|buf| {
                    for i in 0..buf.len() {
                        buf[i] += g[i] * av[i];
                    }
                });
            }
            Op::Scale(x, s) => acc(*x, &|buf| buf.iter_mut().zip(g).for_each(|(b, gi)| *b += s * gi)),
            Op::AddScalar(x) => acc(*x, &|buf| buf.iter_mut().zip(g).for_each(|(b, gi)| *b += gi)),
            Op::Sqrt(x) => {
                let out = &node.value;
                acc(*x, &|buf| {
                    for i in 0..buf.len() {
                        buf[i] += g[i] * 0.5 / out[i];
                    }
                });
            }
            Op::Sum(x) => acc(*x, &|buf| buf.iter_mut().for_each(|b| *b += g[0])),
            Op::GlobalAvgPool(x) => {
                let shape = self.shape(*x);
                let hw = shape[1] * shape[2];
                acc(*x, &|buf| {
                    for (c, chunk) in buf.chunks_mut(hw).enumerate() {
                        let d = g[c] / hw as f64;
                        chunk.iter_mut().for_each(|b| *b += d);
                    }
                });
            }
            Op::Dense { input, weight, bias } => {
                let wshape = self.shape(*weight);
                let (o, i) = (wshape[0], wshape[1]);
                let (xv, wv) = (self.value(*input), self.value(*weight));
                acc(*bias, &|buf| buf.iter_mut().zip(g).for_each(|(b, gi)| *b += gi));
                acc(*weight, &|buf| gemm(o, 1, i, g, (1, 1), xv, (i as isize, 1), 1.0, buf));
                acc(*input, &|buf| gemm(i, o, 1, wv, (1, i as isize), g, (1, 1), 1.0, buf));
            }
            Op::Conv2d {
                input,
                weight,
                bias,
                stride,
                pad,
                cols,
            } => {
                let ishape = self.shape(*input);
                let wshape = self.shape(*weight);
                let (c, h, w) = (ishape[0], ishape[1], ishape[2]);
                let (o, kh, kw) = (wshape[0], wshape[2], wshape[3]);
                let (oh, ow) = (node.shape[1], node.shape[2]);
                let p = oh * ow;
                let k = c * kh * kw;
                acc(*bias, &|buf| {
                    for (oc, b) in buf.iter_mut().enumerate() {
                        *b += g[oc * p..(oc + 1) * p].iter().sum::<f64>();
                    }
                });
                // dW[o x k] += g[o x p] * cols^T[p x k]
                acc(*weight, &|buf| gemm(o, p, k, g, (p as isize, 1), cols, (1, p as isize), 1.0, buf));
                let wv = self.value(*weight);
                acc(*input, &|buf| {
                    // dcols[k x p] = W^T[k x o] * g[o x p]
                    let mut dcols = vec![0.0; k * p];
                    gemm(k, o, p, wv, (1, k as isize), g, (p as isize, 1), 0.0, &mut dcols);
                    col2im(&dcols, c, h, w, kh, kw, *stride, *pad, oh, ow, buf);
                });
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_params_has_unit_gradients() {
        let a = Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap();
        let b = Tensor::new(vec![2, 2], vec![4.0, 5.0, 6.0, 7.0]).unwrap();
        let mut g = Graph::new();
        let (va, vb) = (g.param(&a), g.param(&b));
        let (sa, sb) = (g.sum(va), g.sum(vb));
        let loss = g.add(sa, sb).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.param(&a).unwrap(), &[1.0; 3]);
        assert_eq!(grads.param(&b).unwrap(), &[1.0; 4]);
    }

    #[test]
    fn repeated_param_is_one_node() {
        let a = Tensor::new(vec![2], vec![1.0, 2.0]).unwrap();
        let mut g = Graph::new();
        let v1 = g.param(&a);
        let v2 = g.param(&a);
        assert_eq!(v1, v2);
        let prod = g.mul(v1, v2).unwrap();
        let loss = g.sum(prod);
        let grads = g.backward(loss).unwrap();
        // d/da sum(a*a) = 2a
        assert_eq!(grads.param(&a).unwrap(), &[2.0, 4.0]);
        assert_eq!(g.param_count(), 1);
    }

    #[test]
    fn backward_without_forward_is_usage_error() {
        let g = Graph::new();
        assert!(matches!(g.backward(Var(0)), Err(Error::Usage(_))));
        let t = Tensor::new(vec![2], vec![1.0, 2.0]).unwrap();
        let mut inf = Graph::inference();
        let v = inf.param(&t);
        let s = inf.sum(v);
        assert!(matches!(inf.backward(s), Err(Error::Usage(_))));
    }

    #[test]
    fn non_scalar_backward_is_usage_error() {
        let t = Tensor::new(vec![2], vec![1.0, 2.0]).unwrap();
        let mut g = Graph::new();
        let v = g.param(&t);
        assert!(matches!(g.backward(v), Err(Error::Usage(_))));
    }

    #[test]
    fn conv_shape_mismatch_is_dimension_error() {
        let x = Tensor::zeros(vec![2, 5, 5]);
        let w = Tensor::zeros(vec![1, 3, 3, 3]);
        let b = Tensor::zeros(vec![1]);
        let mut g = Graph::new();
        let (vx, vw, vb) = (g.input(&x), g.param(&w), g.param(&b));
        assert!(matches!(g.conv2d(vx, vw, vb, 1, 1), Err(Error::Dimension(_))));
    }
}
