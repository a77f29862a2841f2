//! Instance normalisation, leaky ReLU, and the conv-norm-activation block.

use super::conv::Conv2d;
use super::Param;
use crate::tensor::Tensor;

pub const NORM_EPS: f32 = 1e-5;
pub const LEAKY_SLOPE: f32 = 0.01;

/// Per-sample, per-channel normalisation with a learned affine map.
#[derive(Debug, Clone)]
pub struct InstanceNorm {
    pub gamma: Param,
    pub beta: Param,
    cache: Option<(Tensor, Vec<f32>)>,
}

impl InstanceNorm {
    pub fn new(name: &str, channels: usize) -> Self {
        Self {
            gamma: Param::constant(format!("{name}.gamma"), vec![channels], 1.0),
            beta: Param::constant(format!("{name}.beta"), vec![channels], 0.0),
            cache: None,
        }
    }

    /// Normalises `x` in place and applies the affine map.
    pub fn forward(&mut self, mut x: Tensor, train: bool) -> Tensor {
        let p = x.plane();
        let c = x.c;
        let mut inv = Vec::with_capacity(x.n * c);
        for plane in x.data.chunks_exact_mut(p) {
            let mean = plane.iter().map(|&v| v as f64).sum::<f64>() / p as f64;
            let var = plane.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / p as f64;
            let s = 1.0 / (var + NORM_EPS as f64).sqrt();
            let (m, s32) = (mean as f32, s as f32);
            plane.iter_mut().for_each(|v| *v = (*v - m) * s32);
            inv.push(s32);
        }
        let xhat = train.then(|| x.clone());
        for (idx, plane) in x.data.chunks_exact_mut(p).enumerate() {
            let ch = idx % c;
            let (g, b) = (self.gamma.value[ch], self.beta.value[ch]);
            plane.iter_mut().for_each(|v| *v = *v * g + b);
        }
        self.cache = xhat.map(|xh| (xh, inv));
        x
    }

    /// Sign of the last training output, recomputed from the cache.
    fn output_is_negative(&self, idx: usize, channels: usize, v: f32) -> bool {
        let ch = idx % channels;
        v * self.gamma.value[ch] + self.beta.value[ch] < 0.0
    }

    pub fn backward(&mut self, dy: &Tensor) -> Tensor {
        let (xhat, inv) = self.cache.take().expect("norm backward without cached forward");
        let p = dy.plane();
        let mut dx = Tensor::zeros(dy.n, dy.c, dy.h, dy.w);
        for (idx, (g, xh)) in dy.data.chunks_exact(p).zip(xhat.data.chunks_exact(p)).enumerate() {
            let ch = idx % dy.c;
            let gamma = self.gamma.value[ch];
            let (mut sum_g, mut sum_gx) = (0.0f64, 0.0f64);
            for (&gv, &xv) in g.iter().zip(xh) {
                sum_g += gv as f64;
                sum_gx += gv as f64 * xv as f64;
            }
            self.beta.grad[ch] += sum_g as f32;
            self.gamma.grad[ch] += sum_gx as f32;
            let scale = gamma as f64 * inv[idx] as f64;
            let (mg, mgx) = (sum_g / p as f64, sum_gx / p as f64);
            let out = &mut dx.data[idx * p..(idx + 1) * p];
            for ((o, &gv), &xv) in out.iter_mut().zip(g).zip(xh) {
                *o = (scale * (gv as f64 - mg - xv as f64 * mgx)) as f32;
            }
        }
        dx
    }

    pub fn params_mut(&mut self) -> [&mut Param; 2] {
        [&mut self.gamma, &mut self.beta]
    }

    pub fn params(&self) -> [&Param; 2] {
        [&self.gamma, &self.beta]
    }
}

pub fn leaky_relu(x: &mut Tensor) {
    x.data.iter_mut().for_each(|v| {
        if *v < 0.0 {
            *v *= LEAKY_SLOPE
        }
    });
}

/// Convolution, instance norm, leaky ReLU.
#[derive(Debug, Clone)]
pub struct ConvBlock {
    pub conv: Conv2d,
    pub norm: InstanceNorm,
}

impl ConvBlock {
    pub fn new(name: &str, cin: usize, cout: usize, kernel: usize, stride: usize, seed: u64) -> Self {
        Self {
            conv: Conv2d::new(&format!("{name}.conv"), cin, cout, kernel, stride, seed),
            norm: InstanceNorm::new(&format!("{name}.norm"), cout),
        }
    }

    pub fn forward(&mut self, x: &Tensor, train: bool) -> Tensor {
        let y = self.conv.forward(x, train);
        let mut y = self.norm.forward(y, train);
        leaky_relu(&mut y);
        y
    }

    pub fn backward(&mut self, dy: &Tensor, need_input_grad: bool) -> Option<Tensor> {
        let mut g = dy.clone();
        {
            let (xhat, _) = self.norm.cache.as_ref().expect("block backward without cached forward");
            let p = g.plane();
            for (idx, (gp, xp)) in g.data.chunks_exact_mut(p).zip(xhat.data.chunks_exact(p)).enumerate() {
                for (gv, &xv) in gp.iter_mut().zip(xp) {
                    if self.norm.output_is_negative(idx, g.c, xv) {
                        *gv *= LEAKY_SLOPE;
                    }
                }
            }
        }
        let g = self.norm.backward(&g);
        self.conv.backward(&g, need_input_grad)
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut v: Vec<&Param> = self.conv.params().into();
        v.extend(self.norm.params());
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v: Vec<&mut Param> = self.conv.params_mut().into();
        v.extend(self.norm.params_mut());
        v
    }
}
