use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::embednet::graph::{Graph, Var};
use crate::embednet::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

/// `x_j = f(sum_i x_i * k_ij + b_j)` over a `kh x kw` receptive field.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    /// `[out_channels, in_channels, kh, kw]`
    pub weight: Tensor,
    /// `[out_channels]`
    pub bias: Tensor,
    pub stride: usize,
    pub padding: usize,
    pub activation: Activation,
}

impl ConvLayer {
    pub fn new(weight: Tensor, bias: Tensor, stride: usize, padding: usize, activation: Activation) -> Result<Self> {
        let ws = weight.shape();
        if ws.len() != 4 || ws[0] == 0 {
            return Err(Error::dim(format!("conv weight shape {ws:?}")));
        }
        if ws[2] % 2 == 0 || ws[3] % 2 == 0 {
            return Err(Error::param(format!("conv kernel {}x{} must be odd", ws[2], ws[3])));
        }
        if bias.shape() != [ws[0]] {
            return Err(Error::dim(format!("conv bias {:?} for {} filters", bias.shape(), ws[0])));
        }
        if stride == 0 {
            return Err(Error::param("stride must be >= 1"));
        }
        Ok(Self {
            weight,
            bias,
            stride,
            padding,
            activation,
        })
    }

    /// He-normal weights, zero bias, "same" padding.
    pub fn init(
        rng: &mut impl Rng,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        activation: Activation,
    ) -> Self {
        let fan_in = (in_channels * kernel * kernel) as f64;
        let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("finite std");
        let n = out_channels * in_channels * kernel * kernel;
        let w: Vec<f64> = (0..n).map(|_| normal.sample(rng)).collect();
        Self::new(
            Tensor::new(vec![out_channels, in_channels, kernel, kernel], w).expect("sized"),
            Tensor::zeros(vec![out_channels]),
            stride,
            kernel / 2,
            activation,
        )
        .expect("valid layer")
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    /// Output spatial size for an `h x w` input.
    pub fn output_size(&self, h: usize, w: usize) -> (usize, usize) {
        let ws = self.weight.shape();
        (
            (h + 2 * self.padding - ws[2]) / self.stride + 1,
            (w + 2 * self.padding - ws[3]) / self.stride + 1,
        )
    }

    pub fn forward<'a>(&'a self, g: &mut Graph<'a>, x: Var) -> Result<Var> {
        let w = g.param(&self.weight);
        let b = g.param(&self.bias);
        let y = g.conv2d(x, w, b, self.stride, self.padding)?;
        Ok(match self.activation {
            Activation::Relu => g.relu(y),
            Activation::Identity => y,
        })
    }

    pub fn named_params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        out.push((format!("{prefix}.weight"), &self.weight));
        out.push((format!("{prefix}.bias"), &self.bias));
    }

    pub fn params_mut(&mut self) -> [&mut Tensor; 2] {
        [&mut self.weight, &mut self.bias]
    }
}

/// Stand-alone convolution on a `[C, H, W]` tensor.
pub fn conv_forward(layer: &ConvLayer, input: &Tensor) -> Result<Tensor> {
    let mut g = Graph::inference();
    let x = g.input(input);
    let y = layer.forward(&mut g, x)?;
    Tensor::new(g.shape(y).to_vec(), g.value(y).to_vec())
}

/// `relu(conv2(conv1(x)) + skip(x))`; `conv1` carries its own ReLU, `conv2` none.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualBlock {
    pub conv1: ConvLayer,
    pub conv2: ConvLayer,
    /// 1x1 projection; identity when absent.
    pub skip: Option<ConvLayer>,
}

impl ResidualBlock {
    pub fn init(rng: &mut impl Rng, in_channels: usize, filters: usize, stride: usize) -> Self {
        let conv1 = ConvLayer::init(rng, in_channels, filters, 3, stride, Activation::Relu);
        let conv2 = ConvLayer::init(rng, filters, filters, 3, 1, Activation::Identity);
        let skip = (stride != 1 || in_channels != filters)
            .then(|| ConvLayer::init(rng, in_channels, filters, 1, stride, Activation::Identity));
        Self { conv1, conv2, skip }
    }

    pub fn filters(&self) -> usize {
        self.conv2.out_channels()
    }

    pub fn forward<'a>(&'a self, g: &mut Graph<'a>, x: Var) -> Result<Var> {
        let h = self.conv1.forward(g, x)?;
        let h = self.conv2.forward(g, h)?;
        let s = match &self.skip {
            Some(proj) => proj.forward(g, x)?,
            None => x,
        };
        if g.shape(h) != g.shape(s) {
            return Err(Error::dim(format!(
                "residual branch {:?} vs skip {:?}",
                g.shape(h),
                g.shape(s)
            )));
        }
        let sum = g.add(h, s)?;
        Ok(g.relu(sum))
    }

    pub fn named_params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        for (name, layer) in self.layers() {
            layer.named_params(&format!("{prefix}.{name}"), out);
        }
    }

    fn layers(&self) -> Vec<(&'static str, &ConvLayer)> {
        let mut v = vec![("conv1", &self.conv1), ("conv2", &self.conv2)];
        if let Some(s) = &self.skip {
            v.push(("skip", s));
        }
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = Vec::new();
        v.extend(self.conv1.params_mut());
        v.extend(self.conv2.params_mut());
        if let Some(s) = &mut self.skip {
            v.extend(s.params_mut());
        }
        v
    }
}

/// Stand-alone residual block on a `[C, H, W]` tensor.
pub fn residual_forward(block: &ResidualBlock, input: &Tensor) -> Result<Tensor> {
    let mut g = Graph::inference();
    let x = g.input(input);
    let y = block.forward(&mut g, x)?;
    Tensor::new(g.shape(y).to_vec(), g.value(y).to_vec())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `[out, in]`
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Dense {
    pub fn init(rng: &mut impl Rng, inputs: usize, outputs: usize) -> Self {
        let normal = Normal::new(0.0, (1.0 / inputs as f64).sqrt()).expect("finite std");
        let w = (0..inputs * outputs).map(|_| normal.sample(rng)).collect();
        Self {
            weight: Tensor::new(vec![outputs, inputs], w).expect("sized"),
            bias: Tensor::zeros(vec![outputs]),
        }
    }

    pub fn forward<'a>(&'a self, g: &mut Graph<'a>, x: Var) -> Result<Var> {
        let w = g.param(&self.weight);
        let b = g.param(&self.bias);
        g.dense(x, w, b)
    }

    pub fn named_params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        out.push((format!("{prefix}.weight"), &self.weight));
        out.push((format!("{prefix}.bias"), &self.bias));
    }

    pub fn params_mut(&mut self) -> [&mut Tensor; 2] {
        [&mut self.weight, &mut self.bias]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Six nested loops, straight from the definition.
    fn conv_oracle(layer: &ConvLayer, input: &Tensor) -> Vec<f64> {
        let (c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
        let ws = layer.weight.shape();
        let (o, kh, kw) = (ws[0], ws[2], ws[3]);
        let (s, p) = (layer.stride as isize, layer.padding as isize);
        let oh = (h + 2 * layer.padding - kh) / layer.stride + 1;
        let ow = (w + 2 * layer.padding - kw) / layer.stride + 1;
        let x = input.values();
        let k = layer.weight.values();
        let mut out = vec![0.0; o * oh * ow];
        for oc in 0..o {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = layer.bias.values()[oc];
                    for ic in 0..c {
                        for i in 0..kh {
                            for j in 0..kw {
                                let iy = oy as isize * s + i as isize - p;
                                let ix = ox as isize * s + j as isize - p;
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                    acc += x[(ic * h + iy as usize) * w + ix as usize]
                                        * k[((oc * c + ic) * kh + i) * kw + j];
                                }
                            }
                        }
                    }
                    out[(oc * oh + oy) * ow + ox] = match layer.activation {
                        Activation::Relu => acc.max(0.0),
                        Activation::Identity => acc,
                    };
                }
            }
        }
        out
    }

    fn random_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn identity_kernel_passes_input_through() {
        let layer = ConvLayer::new(
            Tensor::new(vec![1, 1, 1, 1], vec![1.0]).unwrap(),
            Tensor::zeros(vec![1]),
            1,
            0,
            Activation::Identity,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_tensor(&mut rng, vec![1, 6, 4]);
        assert_eq!(conv_forward(&layer, &x).unwrap(), x);
    }

    #[test]
    fn zero_kernel_gives_bias() {
        let layer = ConvLayer::new(
            Tensor::zeros(vec![2, 3, 3, 3]),
            Tensor::new(vec![2], vec![0.5, -1.25]).unwrap(),
            1,
            1,
            Activation::Identity,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let y = conv_forward(&layer, &random_tensor(&mut rng, vec![3, 5, 5])).unwrap();
        assert_eq!(y.shape(), &[2, 5, 5]);
        assert!(y.values()[..25].iter().all(|&v| v == 0.5));
        assert!(y.values()[25..].iter().all(|&v| v == -1.25));
    }

    #[test]
    fn conv_matches_nested_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (stride, pad, act) in [
            (1, 1, Activation::Identity),
            (2, 1, Activation::Relu),
            (1, 0, Activation::Relu),
            (2, 0, Activation::Identity),
        ] {
            let layer = ConvLayer::new(
                random_tensor(&mut rng, vec![3, 2, 3, 3]),
                random_tensor(&mut rng, vec![3]),
                stride,
                pad,
                act,
            )
            .unwrap();
            let x = random_tensor(&mut rng, vec![2, 5, 5]);
            let y = conv_forward(&layer, &x).unwrap();
            let (oh, ow) = layer.output_size(5, 5);
            assert_eq!(y.shape(), &[3, oh, ow]);
            for (a, b) in y.values().iter().zip(conv_oracle(&layer, &x)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn even_kernel_rejected() {
        let r = ConvLayer::new(Tensor::zeros(vec![1, 1, 2, 3]), Tensor::zeros(vec![1]), 1, 0, Activation::Relu);
        assert!(r.is_err());
    }

    #[test]
    fn zero_branch_block_is_relu_of_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut block = ResidualBlock::init(&mut rng, 3, 3, 1);
        assert!(block.skip.is_none());
        for t in block.params_mut() {
            t.values_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let x = Tensor::new(vec![3, 4, 4], (0..48).map(|i| i as f64 * 0.1).collect()).unwrap();
        assert_eq!(residual_forward(&block, &x).unwrap(), x);
    }

    #[test]
    fn block_output_matches_skip_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for (cin, f, stride, size) in [(1, 4, 2, 9), (4, 4, 1, 6), (4, 8, 2, 7), (2, 2, 2, 10)] {
            let block = ResidualBlock::init(&mut rng, cin, f, stride);
            let x = random_tensor(&mut rng, vec![cin, size, size]);
            let y = residual_forward(&block, &x).unwrap();
            let skip_shape = match &block.skip {
                Some(s) => {
                    let (h, w) = s.output_size(size, size);
                    vec![f, h, w]
                }
                None => vec![cin, size, size],
            };
            assert_eq!(y.shape(), skip_shape.as_slice());
        }
    }

    #[test]
    fn block_matches_composed_oracles() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut block = ResidualBlock::init(&mut rng, 2, 3, 2);
        for t in block.params_mut() {
            for v in t.values_mut() {
                *v = rng.random_range(-1.0..1.0);
            }
        }
        let x = random_tensor(&mut rng, vec![2, 7, 7]);
        let y = residual_forward(&block, &x).unwrap();
        let h1 = conv_oracle(&block.conv1, &x);
        let (oh, ow) = block.conv1.output_size(7, 7);
        let h1 = Tensor::new(vec![3, oh, ow], h1).unwrap();
        let h2 = conv_oracle(&block.conv2, &h1);
        let s = conv_oracle(block.skip.as_ref().unwrap(), &x);
        for ((a, b), c) in y.values().iter().zip(&h2).zip(&s) {
            assert!((a - (b + c).max(0.0)).abs() < 1e-12);
        }
    }
}
