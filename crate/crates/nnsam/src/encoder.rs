//! The frozen plug-in image encoder.
//!
//! Inputs are replicated to three channels, bilinearly resized to the
//! encoder's native 1024 x 1024 and encoded to a `C_s x 64 x 64`
//! embedding. Parameters are only reachable through `&self`, so nothing
//! in the training loop can update them.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{io_err, Error, Result};
use crate::nn::resize::bilinear;
use crate::nn::transformer::{Vit, VitShape};
use crate::nn::{checksum, Param};
use crate::tensor::Tensor;

pub const NATIVE_INPUT: usize = 1024;
pub const EMBED_GRID: usize = 64;
pub const DEFAULT_EMBED_CHANNELS: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FrozenEncoderSpec {
    /// Seed-fixed random transformer standing in for pretrained weights.
    SurrogateVit { embed_channels: usize, seed: u64 },
    /// Weights from a tensor archive (see [`crate::archive`]).
    ExternalWeights { embed_channels: usize, weights_path: PathBuf },
}

impl FrozenEncoderSpec {
    pub fn surrogate(seed: u64) -> Self {
        Self::SurrogateVit {
            embed_channels: DEFAULT_EMBED_CHANNELS,
            seed,
        }
    }

    pub fn embed_channels(&self) -> usize {
        match self {
            Self::SurrogateVit { embed_channels, .. } | Self::ExternalWeights { embed_channels, .. } => *embed_channels,
        }
    }
}

/// Transformer geometry for a given embedding width: patch 16, 8 heads,
/// two blocks, MLP twice as wide, 8 x 8 token windows.
pub fn vit_shape(embed_channels: usize) -> VitShape {
    VitShape {
        image_size: NATIVE_INPUT,
        patch: NATIVE_INPUT / EMBED_GRID,
        in_channels: 3,
        dim: embed_channels,
        heads: 8,
        mlp_dim: 2 * embed_channels,
        blocks: 2,
        window: 8,
    }
}

#[derive(Debug, Clone)]
pub struct FrozenEncoder {
    spec: FrozenEncoderSpec,
    vit: Vit,
}

impl FrozenEncoder {
    pub fn build(spec: &FrozenEncoderSpec) -> Result<Self> {
        let c = spec.embed_channels();
        if c == 0 || !c.is_multiple_of(8) {
            return Err(Error::WeightsLoad(format!("embed_channels must be a positive multiple of 8, got {c}")));
        }
        let shape = vit_shape(c);
        let vit = match spec {
            FrozenEncoderSpec::SurrogateVit { seed, .. } => Vit::random(shape, *seed),
            FrozenEncoderSpec::ExternalWeights { weights_path, .. } => {
                let file = std::fs::File::open(weights_path).map_err(|e| Error::WeightsLoad(io_err(weights_path)(e).to_string()))?;
                let budget = shape.layout().iter().map(|(_, d)| d.iter().product::<usize>()).sum();
                let params = crate::archive::read_tensors(std::io::BufReader::new(file), budget)
                    .map_err(|e| Error::WeightsLoad(format!("{}: {e}", weights_path.display())))?;
                Vit::from_params(shape, params).map_err(|e| Error::WeightsLoad(format!("{}: {e}", weights_path.display())))?
            }
        };
        Ok(Self { spec: spec.clone(), vit })
    }

    pub fn spec(&self) -> &FrozenEncoderSpec {
        &self.spec
    }

    pub fn embed_channels(&self) -> usize {
        self.vit.shape.dim
    }

    pub fn params(&self) -> &[Param] {
        &self.vit.params
    }

    pub fn param_count(&self) -> usize {
        self.vit.params.iter().map(Param::len).sum()
    }

    pub fn checksum(&self) -> String {
        checksum(&self.vit.params)
    }

    /// Encodes a batch of 1- or 3-channel images to `n x C_s x 64 x 64`.
    pub fn encode(&self, x: &Tensor) -> Result<Tensor> {
        if x.c != 1 && x.c != 3 {
            return Err(Error::ShapeMismatch(format!("frozen encoder takes 1 or 3 channels, got {}", x.c)));
        }
        let c = self.embed_channels();
        let mut out = Tensor::zeros(x.n, c, EMBED_GRID, EMBED_GRID);
        let p = x.plane();
        for i in 0..x.n {
            let s = x.sample(i);
            let mut rgb = Vec::with_capacity(3 * NATIVE_INPUT * NATIVE_INPUT);
            for ch in 0..3 {
                let src = if x.c == 1 { &s[..p] } else { &s[ch * p..(ch + 1) * p] };
                rgb.extend(bilinear(src, x.h, x.w, NATIVE_INPUT, NATIVE_INPUT));
            }
            out.sample_mut(i).copy_from_slice(&self.vit.forward(&rgb));
        }
        Ok(out)
    }
}

/// Resizes an embedding to the bottleneck grid and appends it to the
/// bottleneck features along channels.
pub fn fuse(embedding: &Tensor, bottleneck: &Tensor) -> Tensor {
    assert_eq!(embedding.n, bottleneck.n, "fuse batch size");
    let (h, w) = (bottleneck.h, bottleneck.w);
    let mut resized = Tensor::zeros(embedding.n, embedding.c, h, w);
    let ep = embedding.plane();
    for (dst, src) in resized.data.chunks_exact_mut(h * w).zip(embedding.data.chunks_exact(ep)) {
        dst.copy_from_slice(&bilinear(src, embedding.h, embedding.w, h, w));
    }
    Tensor::concat_channels(bottleneck, &resized)
}
