//! Segmentation and level-set regression losses.
//!
//! Every loss has a `*_grad` twin returning the value together with the
//! gradient with respect to the prediction, so the network can back-propagate
//! without a general autodiff engine. Arrays are `C x H x W`, channel-major.

use alloc::vec;
use alloc::vec::Vec;

use crate::levelset::{curvature_of, curvature_vjp, derivatives_adjoint, derivatives_of, sharpen_field, sharpen_slope};
use crate::{Error, Grid, Result};

/// Added to the DICE denominator only.
pub const DICE_EPS: f64 = 1e-6;
/// Lower clamp on probabilities inside the logarithm.
pub const CE_CLAMP: f64 = 1e-12;

/// Dense `C x H x W` array of per-class values.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassStack {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl ClassStack {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::InvalidValue("stack dimensions must be at least 1"));
        }
        if data.len() != channels * height * width {
            return Err(Error::ShapeMismatch {
                expected: (height, width, channels),
                found: (data.len(), 1, 1),
            });
        }
        Ok(Self { channels, height, width, data })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self::from_fn(channels, height, width, |_, _, _| 0.0)
    }

    pub fn from_fn(channels: usize, height: usize, width: usize, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(channels * height * width);
        for j in 0..channels {
            for a in 0..height {
                for b in 0..width {
                    data.push(f(j, a, b));
                }
            }
        }
        Self { channels, height, width, data }
    }

    /// Stacks per-class grids of equal shape.
    pub fn from_grids(grids: &[Grid<f64>]) -> Result<Self> {
        let first = grids.first().ok_or(Error::InvalidValue("at least one channel required"))?;
        let (h, w) = first.shape();
        let mut data = Vec::with_capacity(grids.len() * h * w);
        for g in grids {
            if g.shape() != (h, w) {
                return Err(Error::ShapeMismatch {
                    expected: (h, w, 1),
                    found: (g.height(), g.width(), 1),
                });
            }
            data.extend_from_slice(g.as_slice());
        }
        Self::new(grids.len(), h, w, data)
    }

    /// `(height, width, channels)`.
    #[inline]
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn plane(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn get(&self, j: usize, a: usize, b: usize) -> f64 {
        self.data[(j * self.height + a) * self.width + b]
    }

    pub fn channel(&self, j: usize) -> &[f64] {
        let n = self.plane();
        &self.data[j * n..(j + 1) * n]
    }

    pub fn channel_mut(&mut self, j: usize) -> &mut [f64] {
        let n = self.plane();
        &mut self.data[j * n..(j + 1) * n]
    }

    pub fn channel_grid(&self, j: usize) -> Grid<f64> {
        Grid::new(self.height, self.width, self.channel(j).to_vec()).expect("plane shape")
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// Reorders channels so that output channel `j` is input channel `perm[j]`.
    pub fn permute_channels(&self, perm: &[usize]) -> Self {
        let n = self.plane();
        let mut data = Vec::with_capacity(self.data.len());
        for &src in perm {
            data.extend_from_slice(&self.data[src * n..(src + 1) * n]);
        }
        Self { data, ..*self }
    }

    fn check_same_shape(&self, other: &ClassStack) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch {
                expected: self.shape(),
                found: other.shape(),
            });
        }
        Ok(())
    }
}

/// Per-pixel class probabilities; each pixel sums to one.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMap(ClassStack);

impl ProbMap {
    pub fn new(stack: ClassStack) -> Result<Self> {
        if stack.data.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
            return Err(Error::InvalidValue("probabilities must lie in [0, 1]"));
        }
        let n = stack.plane();
        for i in 0..n {
            let s: f64 = (0..stack.channels).map(|j| stack.data[j * n + i]).sum();
            if (s - 1.0).abs() > 1e-5 {
                return Err(Error::InvalidValue("probabilities must sum to 1 per pixel"));
            }
        }
        Ok(Self(stack))
    }

    pub fn stack(&self) -> &ClassStack {
        &self.0
    }
}

/// One-hot ground truth; exactly one active class per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct OneHotMask(ClassStack);

impl OneHotMask {
    pub fn new(stack: ClassStack) -> Result<Self> {
        if stack.data.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::InvalidValue("one-hot values must be 0 or 1"));
        }
        let n = stack.plane();
        for i in 0..n {
            let s: f64 = (0..stack.channels).map(|j| stack.data[j * n + i]).sum();
            if s != 1.0 {
                return Err(Error::InvalidValue("exactly one class must be active per pixel"));
            }
        }
        Ok(Self(stack))
    }

    pub fn from_labels(labels: &Grid<u8>, classes: usize) -> Result<Self> {
        if labels.iter().any(|&l| l as usize >= classes) {
            return Err(Error::InvalidValue("label index out of range"));
        }
        let (h, w) = labels.shape();
        Ok(Self(ClassStack::from_fn(classes, h, w, |j, a, b| {
            (labels[(a, b)] as usize == j) as u8 as f64
        })))
    }

    pub fn stack(&self) -> &ClassStack {
        &self.0
    }
}

/// Per-class level sets, ground truth or predicted.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelSetStack(ClassStack);

impl LevelSetStack {
    pub fn new(stack: ClassStack) -> Result<Self> {
        if stack.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidValue("level sets must be finite"));
        }
        Ok(Self(stack))
    }

    pub fn stack(&self) -> &ClassStack {
        &self.0
    }
}

/// Weights of the segmentation, level-set and curvature terms.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda1: 1.0,
            lambda2: 0.1,
            lambda3: 0.0001,
        }
    }
}

impl LossWeights {
    pub fn new(lambda1: f64, lambda2: f64, lambda3: f64) -> Result<Self> {
        let w = Self { lambda1, lambda2, lambda3 };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if [self.lambda1, self.lambda2, self.lambda3].iter().all(|l| *l >= 0.0 && l.is_finite()) {
            Ok(())
        } else {
            Err(Error::InvalidValue("loss weights must be finite and nonnegative"))
        }
    }

    /// Segmentation-only weighting.
    pub fn segmentation_only(&self) -> Self {
        Self {
            lambda2: 0.0,
            lambda3: 0.0,
            ..*self
        }
    }
}

/// Weighted total and its components, for logging.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LossBreakdown {
    pub total: f64,
    pub s: f64,
    pub l: f64,
    pub c: f64,
}

impl LossBreakdown {
    pub fn combine(s: f64, l: f64, c: f64, w: &LossWeights) -> Self {
        Self {
            total: w.lambda1 * s + w.lambda2 * l + w.lambda3 * c,
            s,
            l,
            c,
        }
    }
}

/// Per-pixel softmax over channels of raw logits.
pub fn softmax(logits: &ClassStack) -> ProbMap {
    let n = logits.plane();
    let c = logits.channels;
    let mut out = logits.clone();
    for i in 0..n {
        let max = (0..c).map(|j| logits.data[j * n + i]).fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for j in 0..c {
            let e = libm::exp(logits.data[j * n + i] - max);
            out.data[j * n + i] = e;
            sum += e;
        }
        for j in 0..c {
            out.data[j * n + i] /= sum;
        }
    }
    ProbMap(out)
}

/// Pulls a gradient on probabilities back onto the logits.
pub fn softmax_vjp(p: &ProbMap, grad_p: &ClassStack) -> Result<ClassStack> {
    let p = &p.0;
    p.check_same_shape(grad_p)?;
    let n = p.plane();
    let c = p.channels;
    let mut out = grad_p.clone();
    for i in 0..n {
        let dot: f64 = (0..c).map(|j| p.data[j * n + i] * grad_p.data[j * n + i]).sum();
        for j in 0..c {
            out.data[j * n + i] = p.data[j * n + i] * (grad_p.data[j * n + i] - dot);
        }
    }
    Ok(out)
}

pub fn dice_loss(p: &ProbMap, y: &OneHotMask) -> Result<f64> {
    dice_loss_grad(p, y).map(|(v, _)| v)
}

/// `1 - 2 sum(p y) / (sum(p + y) + eps)`.
pub fn dice_loss_grad(p: &ProbMap, y: &OneHotMask) -> Result<(f64, ClassStack)> {
    let (p, y) = (&p.0, &y.0);
    p.check_same_shape(y)?;
    let mut overlap = 0.0;
    let mut denom = DICE_EPS;
    for (pv, yv) in p.data.iter().zip(&y.data) {
        overlap += pv * yv;
        denom += pv + yv;
    }
    let loss = 1.0 - 2.0 * overlap / denom;
    let grad = p
        .data
        .iter()
        .zip(&y.data)
        .map(|(_, yv)| -2.0 * yv / denom + 2.0 * overlap / (denom * denom))
        .collect();
    Ok((loss, ClassStack { data: grad, ..*p }))
}

pub fn ce_loss(p: &ProbMap, y: &OneHotMask) -> Result<f64> {
    ce_loss_grad(p, y).map(|(v, _)| v)
}

/// `-(1 / HWC) sum y log(max(p, 1e-12))`.
pub fn ce_loss_grad(p: &ProbMap, y: &OneHotMask) -> Result<(f64, ClassStack)> {
    let (p, y) = (&p.0, &y.0);
    p.check_same_shape(y)?;
    let n = p.data.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; p.data.len()];
    for ((g, pv), yv) in grad.iter_mut().zip(&p.data).zip(&y.data) {
        if *yv == 0.0 {
            continue;
        }
        loss -= yv * libm::log(pv.max(CE_CLAMP));
        if *pv > CE_CLAMP {
            *g = -yv / (n * pv);
        }
    }
    Ok((loss / n, ClassStack { data: grad, ..*p }))
}

pub fn seg_loss(p: &ProbMap, y: &OneHotMask) -> Result<f64> {
    Ok(dice_loss(p, y)? + ce_loss(p, y)?)
}

pub fn seg_loss_grad(p: &ProbMap, y: &OneHotMask) -> Result<(f64, ClassStack)> {
    let (d, mut gd) = dice_loss_grad(p, y)?;
    let (c, gc) = ce_loss_grad(p, y)?;
    gd.data.iter_mut().zip(&gc.data).for_each(|(a, b)| *a += b);
    Ok((d + c, gd))
}

fn active_mask(active: Option<&[bool]>, channels: usize) -> Result<Vec<bool>> {
    match active {
        None => Ok(vec![true; channels]),
        Some(m) if m.len() == channels => Ok(m.to_vec()),
        Some(m) => Err(Error::ShapeMismatch {
            expected: (channels, 1, 1),
            found: (m.len(), 1, 1),
        }),
    }
}

pub fn levelset_mse(pred: &LevelSetStack, gt: &LevelSetStack) -> Result<f64> {
    levelset_mse_grad(pred, gt, None).map(|(v, _)| v)
}

/// `(1 / HWC) sum (phi - phi')^2`, skipping inactive channels (they still
/// count in the normaliser).
pub fn levelset_mse_grad(pred: &LevelSetStack, gt: &LevelSetStack, active: Option<&[bool]>) -> Result<(f64, ClassStack)> {
    let (pred, gt) = (&pred.0, &gt.0);
    pred.check_same_shape(gt)?;
    let active = active_mask(active, pred.channels)?;
    let n = pred.data.len() as f64;
    let plane = pred.plane();
    let mut grad = ClassStack::zeros(pred.channels, pred.height, pred.width);
    let mut loss = 0.0;
    for j in (0..pred.channels).filter(|&j| active[j]) {
        for i in j * plane..(j + 1) * plane {
            let diff = pred.data[i] - gt.data[i];
            loss += diff * diff;
            grad.data[i] = 2.0 * diff / n;
        }
    }
    Ok((loss / n, grad))
}

/// Curvature map of the sharpened level set of one channel.
pub fn sharpened_curvature(phi: &Grid<f64>) -> Grid<f64> {
    curvature_of(&derivatives_of(&sharpen_field(phi)))
}

pub fn curvature_loss(pred: &LevelSetStack, gt: &LevelSetStack) -> Result<f64> {
    curvature_loss_grad(pred, gt, None).map(|(v, _)| v)
}

/// Mean over pixels and classes of `|K(gt) - K(pred)|`, where `K` is the
/// curvature of the sharpened level set. The ground-truth branch is
/// constant; the gradient flows into `pred` only.
pub fn curvature_loss_grad(pred: &LevelSetStack, gt: &LevelSetStack, active: Option<&[bool]>) -> Result<(f64, ClassStack)> {
    let (pred, gt) = (&pred.0, &gt.0);
    pred.check_same_shape(gt)?;
    let active = active_mask(active, pred.channels)?;
    let n = pred.data.len() as f64;
    let mut grad = ClassStack::zeros(pred.channels, pred.height, pred.width);
    let mut loss = 0.0;
    for j in (0..pred.channels).filter(|&j| active[j]) {
        let k_gt = sharpened_curvature(&gt.channel_grid(j));
        let phi = pred.channel_grid(j);
        let sharp = sharpen_field(&phi);
        let derivs = derivatives_of(&sharp);
        let k_pred = curvature_of(&derivs);

        let mut upstream = Grid::filled(pred.height, pred.width, 0.0);
        for ((u, kp), kg) in upstream.as_mut_slice().iter_mut().zip(k_pred.iter()).zip(k_gt.iter()) {
            let diff = kp - kg;
            loss += libm::fabs(diff);
            *u = if diff > 0.0 {
                1.0 / n
            } else if diff < 0.0 {
                -1.0 / n
            } else {
                0.0
            };
        }
        let field_grad = derivatives_adjoint(&curvature_vjp(&derivs, &upstream));
        for ((g, fg), &v) in grad.channel_mut(j).iter_mut().zip(field_grad.iter()).zip(phi.iter()) {
            *g = fg * sharpen_slope(v);
        }
    }
    Ok((loss / n, grad))
}

pub fn total_loss(
    p: &ProbMap,
    y: &OneHotMask,
    phi_pred: &LevelSetStack,
    phi_gt: &LevelSetStack,
    w: &LossWeights,
) -> Result<LossBreakdown> {
    p.0.check_same_shape(phi_pred.stack())?;
    let s = seg_loss(p, y)?;
    let l = levelset_mse(phi_pred, phi_gt)?;
    let c = curvature_loss(phi_pred, phi_gt)?;
    Ok(LossBreakdown::combine(s, l, c, w))
}

/// Gradients of the weighted total.
#[derive(Debug, Clone, PartialEq)]
pub struct TotalGradient {
    pub prob: ClassStack,
    pub levelset: ClassStack,
}

/// Weighted total with gradients; `active` switches level-set and curvature
/// supervision off for individual channels.
pub fn total_loss_grad(
    p: &ProbMap,
    y: &OneHotMask,
    phi_pred: &LevelSetStack,
    phi_gt: &LevelSetStack,
    w: &LossWeights,
    active: Option<&[bool]>,
) -> Result<(LossBreakdown, TotalGradient)> {
    p.0.check_same_shape(phi_pred.stack())?;
    let (s, mut gp) = seg_loss_grad(p, y)?;
    let (l, mut gl) = levelset_mse_grad(phi_pred, phi_gt, active)?;
    let (c, gc) = curvature_loss_grad(phi_pred, phi_gt, active)?;
    gp.data.iter_mut().for_each(|g| *g *= w.lambda1);
    gl.data
        .iter_mut()
        .zip(&gc.data)
        .for_each(|(a, b)| *a = w.lambda2 * *a + w.lambda3 * b);
    Ok((LossBreakdown::combine(s, l, c, w), TotalGradient { prob: gp, levelset: gl }))
}
