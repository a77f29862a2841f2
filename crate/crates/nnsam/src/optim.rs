//! SGD with Nesterov momentum, decoupled from any particular model.

use crate::nn::Param;

pub const GRAD_CLIP_NORM: f64 = 12.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Sgd {
    pub momentum: f32,
    pub weight_decay: f32,
    /// One momentum buffer per parameter, in parameter order.
    pub buffers: Vec<Vec<f32>>,
}

impl Sgd {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        Self {
            momentum: momentum as f32,
            weight_decay: weight_decay as f32,
            buffers: Vec::new(),
        }
    }

    /// Clips the global gradient norm to [`GRAD_CLIP_NORM`], then applies
    /// one Nesterov step. Returns the pre-clip norm.
    pub fn step(&mut self, params: &mut [&mut Param], lr: f64) -> f64 {
        if self.buffers.is_empty() {
            self.buffers = params.iter().map(|p| vec![0.0; p.len()]).collect();
        }
        assert_eq!(self.buffers.len(), params.len(), "optimizer bound to a different parameter set");
        let norm = params
            .iter()
            .flat_map(|p| p.grad.iter())
            .map(|&g| g as f64 * g as f64)
            .sum::<f64>()
            .sqrt();
        let clip = if norm > GRAD_CLIP_NORM { (GRAD_CLIP_NORM / (norm + 1e-6)) as f32 } else { 1.0 };
        let (mu, wd, lr) = (self.momentum, self.weight_decay, lr as f32);
        for (p, buf) in params.iter_mut().zip(&mut self.buffers) {
            for ((w, g), b) in p.value.iter_mut().zip(&p.grad).zip(buf.iter_mut()) {
                let d = g * clip + wd * *w;
                *b = mu * *b + d;
                *w -= lr * (d + mu * *b);
            }
        }
        norm
    }
}
