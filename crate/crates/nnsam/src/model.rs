//! The plan-built encoder-decoder with an optional frozen branch and two heads.

use nnsam_core::autoconfig::PlanConfig;
use serde::{Deserialize, Serialize};

use crate::encoder::{fuse, FrozenEncoder, FrozenEncoderSpec};
use crate::error::{Error, Result};
use crate::nn::conv::{Conv2d, UpConv};
use crate::nn::norm::ConvBlock;
use crate::nn::Param;
use crate::tensor::Tensor;

/// Switches that distinguish the full model from its ablations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelOptions {
    pub frozen_encoder: Option<FrozenEncoderSpec>,
    pub reg_head: bool,
}

#[derive(Debug, Clone)]
struct EncoderStage {
    blocks: [ConvBlock; 2],
}

#[derive(Debug, Clone)]
struct DecoderStage {
    up: UpConv,
    blocks: [ConvBlock; 2],
    /// Spatial dims of the skip this stage joins.
    skip_hw: (usize, usize),
}

#[derive(Debug)]
pub struct Output {
    /// Raw segmentation logits, `n x C x H x W`.
    pub logits: Tensor,
    /// Linear level-set regression, absent without the regression head.
    pub levelset: Option<Tensor>,
}

#[derive(Debug, Clone)]
pub struct NnSamModel {
    plan: PlanConfig,
    options: ModelOptions,
    encoder: Vec<EncoderStage>,
    decoder: Vec<DecoderStage>,
    seg_head: Conv2d,
    reg_head: Option<Conv2d>,
    frozen: Option<FrozenEncoder>,
}

impl NnSamModel {
    pub fn build(plan: &PlanConfig, options: &ModelOptions, seed: u64) -> Result<Self> {
        plan.validate().map_err(|e| Error::PlanInvalid(e.to_string()))?;
        if plan.concat_stage != 1 {
            return Err(Error::PlanInvalid("embedding fusion is only supported at decoder stage 1".into()));
        }
        let frozen = options.frozen_encoder.as_ref().map(FrozenEncoder::build).transpose()?;
        let f = &plan.features_per_stage;
        let t = plan.num_stages;
        let k = plan.kernel_size;

        let mut dims = vec![(plan.input_height, plan.input_width)];
        for _ in 0..t {
            let (h, w) = *dims.last().unwrap();
            dims.push((h.div_ceil(2), w.div_ceil(2)));
        }

        let encoder = (0..=t)
            .map(|i| {
                let (cin, stride) = if i == 0 { (plan.in_channels, 1) } else { (f[i - 1], 2) };
                EncoderStage {
                    blocks: [
                        ConvBlock::new(&format!("enc.{i}.0"), cin, f[i], k, stride, seed),
                        ConvBlock::new(&format!("enc.{i}.1"), f[i], f[i], k, 1, seed),
                    ],
                }
            })
            .collect();
        let fused = frozen.as_ref().map_or(0, FrozenEncoder::embed_channels);
        let decoder = (1..=t)
            .map(|d| {
                let target = t - d;
                let cin = f[target + 1] + if d == 1 { fused } else { 0 };
                DecoderStage {
                    up: UpConv::new(&format!("dec.{d}.up"), cin, f[target], seed),
                    blocks: [
                        ConvBlock::new(&format!("dec.{d}.0"), 2 * f[target], f[target], k, 1, seed),
                        ConvBlock::new(&format!("dec.{d}.1"), f[target], f[target], k, 1, seed),
                    ],
                    skip_hw: dims[target],
                }
            })
            .collect();
        Ok(Self {
            plan: plan.clone(),
            options: options.clone(),
            encoder,
            decoder,
            seg_head: Conv2d::new("head.seg", f[0], plan.classes, 1, 1, seed),
            reg_head: options.reg_head.then(|| Conv2d::new("head.reg", f[0], plan.classes, 1, 1, seed)),
            frozen,
        })
    }

    pub fn plan(&self) -> &PlanConfig {
        &self.plan
    }

    pub fn options(&self) -> &ModelOptions {
        &self.options
    }

    pub fn frozen_encoder(&self) -> Option<&FrozenEncoder> {
        self.frozen.as_ref()
    }

    pub fn has_reg_head(&self) -> bool {
        self.reg_head.is_some()
    }

    /// Input channel count of decoder stage 1.
    pub fn d1_in_channels(&self) -> usize {
        self.decoder[0].up.cin
    }

    pub fn trainable_params(&self) -> Vec<&Param> {
        let mut v = Vec::new();
        for s in &self.encoder {
            s.blocks.iter().for_each(|b| v.extend(b.params()));
        }
        for s in &self.decoder {
            v.extend(s.up.params());
            s.blocks.iter().for_each(|b| v.extend(b.params()));
        }
        v.extend(self.seg_head.params());
        if let Some(h) = &self.reg_head {
            v.extend(h.params());
        }
        v
    }

    pub fn trainable_params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = Vec::new();
        for s in &mut self.encoder {
            s.blocks.iter_mut().for_each(|b| v.extend(b.params_mut()));
        }
        for s in &mut self.decoder {
            v.extend(s.up.params_mut());
            s.blocks.iter_mut().for_each(|b| v.extend(b.params_mut()));
        }
        v.extend(self.seg_head.params_mut());
        if let Some(h) = &mut self.reg_head {
            v.extend(h.params_mut());
        }
        v
    }

    pub fn trainable_param_count(&self) -> usize {
        self.trainable_params().iter().map(|p| p.len()).sum()
    }

    pub fn frozen_param_count(&self) -> usize {
        self.frozen.as_ref().map_or(0, FrozenEncoder::param_count)
    }

    pub fn trainable_checksum(&self) -> String {
        crate::nn::checksum(self.trainable_params())
    }

    pub fn frozen_checksum(&self) -> Option<String> {
        self.frozen.as_ref().map(FrozenEncoder::checksum)
    }

    pub fn zero_grad(&mut self) {
        self.trainable_params_mut().into_iter().for_each(Param::zero_grad);
    }

    /// Frozen-branch embedding for `x`, if the model has one.
    pub fn embed(&self, x: &Tensor) -> Result<Option<Tensor>> {
        self.frozen.as_ref().map(|f| f.encode(x)).transpose()
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let p = &self.plan;
        if (x.c, x.h, x.w) != (p.in_channels, p.input_height, p.input_width) {
            return Err(Error::Core(nnsam_core::Error::ShapeMismatch {
                expected: (p.input_height, p.input_width, p.in_channels),
                found: (x.h, x.w, x.c),
            }));
        }
        Ok(())
    }

    /// Full forward pass, running the frozen encoder when present.
    pub fn forward(&mut self, x: &Tensor, train: bool) -> Result<Output> {
        self.check_input(x)?;
        let emb = self.embed(x)?;
        self.forward_with_embedding(x, emb.as_ref(), train)
    }

    /// Forward pass with a precomputed frozen embedding (e.g. from a cache).
    pub fn forward_with_embedding(&mut self, x: &Tensor, embedding: Option<&Tensor>, train: bool) -> Result<Output> {
        self.check_input(x)?;
        match (&self.frozen, embedding) {
            (Some(f), Some(e)) if e.c == f.embed_channels() && e.n == x.n => {}
            (None, None) => {}
            _ => return Err(Error::ShapeMismatch("embedding does not match the frozen encoder".into())),
        }
        let mut skips = Vec::with_capacity(self.encoder.len());
        let mut h = x.clone();
        for s in &mut self.encoder {
            h = s.blocks[0].forward(&h, train);
            h = s.blocks[1].forward(&h, train);
            skips.push(h.clone());
        }
        skips.pop();
        if let Some(e) = embedding {
            h = fuse(e, &h);
        }
        for s in &mut self.decoder {
            let skip = skips.pop().expect("one skip per decoder stage");
            let up = s.up.forward(&h, train).crop(s.skip_hw.0, s.skip_hw.1);
            let cat = Tensor::concat_channels(&up, &skip);
            h = s.blocks[0].forward(&cat, train);
            h = s.blocks[1].forward(&h, train);
        }
        let logits = self.seg_head.forward(&h, train);
        let levelset = self.reg_head.as_mut().map(|r| r.forward(&h, train));
        Ok(Output { logits, levelset })
    }

    /// Backpropagates output gradients from the last training forward pass
    /// into the trainable parameters. No gradient reaches the frozen branch.
    pub fn backward(&mut self, d_logits: &Tensor, d_levelset: Option<&Tensor>) {
        let mut g = self.seg_head.backward(d_logits, true).expect("input grad requested");
        if let (Some(head), Some(d)) = (self.reg_head.as_mut(), d_levelset) {
            if d.data.iter().any(|&v| v != 0.0) {
                let gr = head.backward(d, true).expect("input grad requested");
                g.data.iter_mut().zip(&gr.data).for_each(|(a, b)| *a += b);
            }
        }
        let f = &self.plan.features_per_stage;
        let t = self.plan.num_stages;
        let mut skip_grads: Vec<Option<Tensor>> = vec![None; t];
        for (idx, s) in self.decoder.iter_mut().enumerate().rev() {
            let target = t - (idx + 1);
            let gb = s.blocks[1].backward(&g, true).unwrap();
            let gcat = s.blocks[0].backward(&gb, true).unwrap();
            let (gup, gskip) = gcat.split_channels(f[target]);
            skip_grads[target] = Some(gskip);
            // Undo the crop: the upsampled map is twice the coarser grid.
            let gup = gup.pad_to(2 * s.skip_hw.0.div_ceil(2), 2 * s.skip_hw.1.div_ceil(2));
            g = s.up.backward(&gup);
            if idx == 0 && self.frozen.is_some() {
                g = g.split_channels(f[t]).0;
            }
        }
        for (i, s) in self.encoder.iter_mut().enumerate().rev() {
            if i < t {
                let skip = skip_grads[i].take().expect("skip gradient");
                g.data.iter_mut().zip(&skip.data).for_each(|(a, b)| *a += b);
            }
            let gb = s.blocks[1].backward(&g, true).unwrap();
            match s.blocks[0].backward(&gb, i > 0) {
                Some(gi) => g = gi,
                None => break,
            }
        }
    }
}

/// Per-pixel softmax over channels.
pub fn softmax(logits: &Tensor) -> Tensor {
    let mut out = logits.clone();
    let p = logits.plane();
    for i in 0..logits.n {
        let s = out.sample_mut(i);
        for px in 0..p {
            let m = (0..logits.c).map(|c| s[c * p + px]).fold(f32::NEG_INFINITY, f32::max);
            let mut z = 0.0;
            for c in 0..logits.c {
                let e = (s[c * p + px] - m).exp();
                s[c * p + px] = e;
                z += e;
            }
            for c in 0..logits.c {
                s[c * p + px] /= z;
            }
        }
    }
    out
}

/// Per-pixel argmax over channels for sample `i`; ties go to the lower class.
pub fn argmax(logits: &Tensor, i: usize) -> Vec<u8> {
    let p = logits.plane();
    let s = logits.sample(i);
    (0..p)
        .map(|px| {
            let mut best = 0;
            for c in 1..logits.c {
                if s[c * p + px] > s[best * p + px] {
                    best = c;
                }
            }
            best as u8
        })
        .collect()
}
