//! Dataset fingerprinting and a small deterministic architecture planner.
//!
//! The plan rules are fixed so that the same fingerprint always yields the
//! same network:
//!
//! * stages `t = min(6, floor(log2(min(H, W))) - 2)`
//! * features `min(32 * 2^i, 512)` for encoder stages `0..=t`
//! * 3x3 kernels, batch `clamp(4096 * 1024 / (H * W), 2, 12)`
//! * SGD learning rate 0.01 with polynomial decay (power 0.9)

use alloc::vec::Vec;

use crate::{Error, Result};

pub const MIN_SIDE: usize = 32;
pub const MAX_STAGES: usize = 6;
pub const BASE_FEATURES: usize = 32;
pub const MAX_FEATURES: usize = 512;
pub const STD_FLOOR: f64 = 1e-8;

/// Borrowed channel-major `N x H x W` image.
#[derive(Debug, Clone, Copy)]
pub struct ImageView<'a> {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: &'a [f32],
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Fingerprint {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub classes: usize,
    pub intensity_mean: Vec<f64>,
    pub intensity_std: Vec<f64>,
    pub spacing: (f64, f64),
    pub sample_count: usize,
}

/// Summarises training images: shared dimensions and exact per-channel
/// intensity mean and population std (std floored at 1e-8).
pub fn fingerprint(images: &[ImageView<'_>], classes: usize, spacing: (f64, f64)) -> Result<Fingerprint> {
    let first = images.first().ok_or(Error::EmptyDataset)?;
    let (h, w, n) = (first.height, first.width, first.channels);
    if h == 0 || w == 0 || n == 0 || classes == 0 {
        return Err(Error::InvalidValue("fingerprint dimensions must be at least 1"));
    }
    let plane = h * w;
    // Welford per channel.
    let mut count = 0u64;
    let mut mean = alloc::vec![0.0f64; n];
    let mut m2 = alloc::vec![0.0f64; n];
    let mut counts = alloc::vec![0u64; n];
    for img in images {
        if (img.height, img.width, img.channels) != (h, w, n) || img.data.len() != plane * n {
            return Err(Error::InconsistentShapes);
        }
        for c in 0..n {
            for &x in &img.data[c * plane..(c + 1) * plane] {
                counts[c] += 1;
                let x = x as f64;
                let delta = x - mean[c];
                mean[c] += delta / counts[c] as f64;
                m2[c] += delta * (x - mean[c]);
            }
        }
        count += 1;
    }
    let intensity_std = m2
        .iter()
        .zip(&counts)
        .map(|(m, &k)| libm::sqrt((m / k as f64).max(0.0)).max(STD_FLOOR))
        .collect();
    Ok(Fingerprint {
        height: h,
        width: w,
        channels: n,
        classes,
        intensity_mean: mean,
        intensity_std,
        spacing,
        sample_count: count as usize,
    })
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct AugmentationPlan {
    pub rotate_deg: f64,
    pub scale_range: (f64, f64),
    pub elastic_alpha: f64,
    pub elastic_sigma: f64,
}

impl Default for AugmentationPlan {
    fn default() -> Self {
        Self {
            rotate_deg: 25.0,
            scale_range: (0.85, 1.15),
            elastic_alpha: 10.0,
            elastic_sigma: 8.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct PlanConfig {
    pub input_height: usize,
    pub input_width: usize,
    pub in_channels: usize,
    pub classes: usize,
    pub num_stages: usize,
    /// Encoder widths, shallowest (`E_0`) first; length `num_stages + 1`.
    pub features_per_stage: Vec<usize>,
    pub kernel_size: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lr_decay_power: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub max_epochs: usize,
    pub normalization: Normalization,
    pub augmentation: AugmentationPlan,
    /// Decoder stage that receives the frozen embedding (1 = deepest).
    pub concat_stage: usize,
}

pub const DEFAULT_MAX_EPOCHS: usize = 200;

pub fn stages_for(min_side: usize) -> Result<usize> {
    if min_side < MIN_SIDE {
        return Err(Error::ImageTooSmall { min_side });
    }
    let log2 = (usize::BITS - 1 - min_side.leading_zeros()) as usize;
    Ok(MAX_STAGES.min(log2 - 2))
}

pub fn plan(fp: &Fingerprint) -> Result<PlanConfig> {
    let t = stages_for(fp.height.min(fp.width))?;
    let features_per_stage = (0..=t).map(|i| (BASE_FEATURES << i).min(MAX_FEATURES)).collect();
    let pixels = fp.height * fp.width;
    let batch_size = (4096 * 1024 / pixels).clamp(2, 12);
    Ok(PlanConfig {
        input_height: fp.height,
        input_width: fp.width,
        in_channels: fp.channels,
        classes: fp.classes,
        num_stages: t,
        features_per_stage,
        kernel_size: 3,
        batch_size,
        learning_rate: 0.01,
        lr_decay_power: 0.9,
        momentum: 0.99,
        weight_decay: 3e-5,
        max_epochs: DEFAULT_MAX_EPOCHS,
        normalization: Normalization {
            mean: fp.intensity_mean.clone(),
            std: fp.intensity_std.clone(),
        },
        augmentation: AugmentationPlan::default(),
        concat_stage: 1,
    })
}

impl PlanConfig {
    /// Checks the structural invariants a network builder relies on.
    pub fn validate(&self) -> Result<()> {
        let t = self.num_stages;
        if t < 2 || self.features_per_stage.len() != t + 1 {
            return Err(Error::InvalidValue("plan needs t >= 2 and t + 1 stage widths"));
        }
        if self.input_height.min(self.input_width) >> t < 4 {
            return Err(Error::InvalidValue("feature map would shrink below 4 px"));
        }
        if self.features_per_stage.windows(2).any(|w| w[1] < w[0]) || self.features_per_stage[0] == 0 {
            return Err(Error::InvalidValue("stage widths must be positive and nondecreasing"));
        }
        if self.kernel_size.is_multiple_of(2) || self.batch_size == 0 || self.classes == 0 || self.in_channels == 0 {
            return Err(Error::InvalidValue("invalid kernel, batch, class or channel count"));
        }
        if self.normalization.mean.len() != self.in_channels || self.normalization.std.len() != self.in_channels {
            return Err(Error::InvalidValue("normalization stats must match channel count"));
        }
        Ok(())
    }

    /// Spatial size after `t` stride-2 convolutions with "same" padding.
    pub fn bottleneck_dims(&self) -> (usize, usize) {
        let mut h = self.input_height;
        let mut w = self.input_width;
        for _ in 0..self.num_stages {
            h = h.div_ceil(2);
            w = w.div_ceil(2);
        }
        (h, w)
    }

    /// Learning rate at `step` of `total` under polynomial decay.
    pub fn lr_at(&self, step: usize, total: usize) -> f64 {
        let frac = if total == 0 { 0.0 } else { step as f64 / total as f64 };
        self.learning_rate * libm::pow((1.0 - frac).max(0.0), self.lr_decay_power)
    }
}
