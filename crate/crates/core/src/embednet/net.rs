use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embednet::graph::{Graph, Var};
use crate::embednet::layers::{Activation, ConvLayer, Dense, ResidualBlock};
use crate::embednet::tensor::Tensor;
use crate::error::{Error, Result};
use crate::keypoints::{NormalizedPatch, PATCH_SIZE};

/// Embedding sizes swept for the fully connected output.
pub const EMBED_DIMS: [usize; 4] = [256, 512, 1024, 2048];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetArch {
    pub input_size: usize,
    pub stem_filters: usize,
    pub stem_kernel: usize,
    pub stem_stride: usize,
    /// Filters per residual block; every block enters with stride 2.
    pub block_filters: Vec<usize>,
    pub embed_dim: usize,
}

impl Default for NetArch {
    fn default() -> Self {
        Self {
            input_size: PATCH_SIZE,
            stem_filters: 16,
            stem_kernel: 7,
            stem_stride: 2,
            block_filters: vec![16, 32, 64, 128],
            embed_dim: 256,
        }
    }
}

impl NetArch {
    pub fn with_embed_dim(embed_dim: usize) -> Self {
        Self {
            embed_dim,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stem_kernel % 2 == 0 {
            return Err(Error::param("stem kernel must be odd"));
        }
        if self.embed_dim == 0 || self.stem_filters == 0 || self.block_filters.contains(&0) {
            return Err(Error::param("layer widths must be >= 1"));
        }
        if self.input_size < self.stem_kernel {
            return Err(Error::param("input smaller than stem kernel"));
        }
        Ok(())
    }
}

/// Stem convolution, a stack of residual blocks, global average pooling and a dense
/// projection to the embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbedNet {
    pub arch: NetArch,
    pub stem: ConvLayer,
    pub blocks: Vec<ResidualBlock>,
    pub fc: Dense,
}

impl EmbedNet {
    pub fn new(arch: NetArch, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let stem = ConvLayer::init(
            &mut rng,
            1,
            arch.stem_filters,
            arch.stem_kernel,
            arch.stem_stride,
            Activation::Relu,
        );
        let mut blocks = Vec::with_capacity(arch.block_filters.len());
        let mut channels = arch.stem_filters;
        for &f in &arch.block_filters {
            blocks.push(ResidualBlock::init(&mut rng, channels, f, 2));
            channels = f;
        }
        let fc = Dense::init(&mut rng, channels, arch.embed_dim);
        Ok(Self {
            arch,
            stem,
            blocks,
            fc,
        })
    }

    pub fn embed_dim(&self) -> usize {
        self.arch.embed_dim
    }

    pub fn forward<'a>(&'a self, g: &mut Graph<'a>, x: Var) -> Result<Var> {
        let mut h = self.stem.forward(g, x)?;
        for block in &self.blocks {
            h = block.forward(g, h)?;
        }
        let pooled = g.global_avg_pool(h)?;
        self.fc.forward(g, pooled)
    }

    /// Every parameter tensor with its layer path, in a fixed order.
    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        self.stem.named_params("stem", &mut out);
        for (i, b) in self.blocks.iter().enumerate() {
            b.named_params(&format!("blocks.{i}"), &mut out);
        }
        self.fc.named_params("fc", &mut out);
        out
    }

    /// Mutable parameters in the order of [`EmbedNet::named_params`].
    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::new();
        out.extend(self.stem.params_mut());
        for b in &mut self.blocks {
            out.extend(b.params_mut());
        }
        out.extend(self.fc.params_mut());
        out
    }

    pub fn param_count(&self) -> usize {
        self.named_params().len()
    }

    pub fn scalar_count(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.len()).sum()
    }

    /// Embedding of a `[1, H, W]` tensor.
    pub fn embed_tensor(&self, input: &Tensor) -> Result<Vec<f64>> {
        let mut g = Graph::inference();
        let x = g.input(input);
        let y = self.forward(&mut g, x)?;
        Ok(g.value(y).to_vec())
    }

    /// Embedding of a 105x105 patch scaled to `[0, 1]`.
    pub fn embed(&self, patch: &NormalizedPatch) -> Result<Vec<f64>> {
        self.embed_tensor(&patch_tensor(patch)?)
    }

    /// Parallel [`EmbedNet::embed`]; output order follows input order.
    pub fn embed_all(&self, patches: &[NormalizedPatch]) -> Result<Vec<Vec<f64>>> {
        patches.par_iter().map(|p| self.embed(p)).collect()
    }
}

/// `pixel / 255` as a `[1, 105, 105]` tensor.
pub fn patch_tensor(patch: &NormalizedPatch) -> Result<Tensor> {
    let (w, h) = (patch.pixels.width(), patch.pixels.height());
    if (w, h) != (PATCH_SIZE, PATCH_SIZE) {
        return Err(Error::dim(format!("patch is {w}x{h}, expected {PATCH_SIZE}x{PATCH_SIZE}")));
    }
    Tensor::new(vec![1, h, w], patch.to_unit())
}
