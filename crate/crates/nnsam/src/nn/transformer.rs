//! Forward-only vision transformer used as the frozen feature encoder.
//!
//! Tokens are stored row-major as `tokens x dim`. Attention is computed in
//! non-overlapping square windows of the token grid; odd blocks cyclically
//! shift the grid by half a window first so neighbouring windows mix.

use super::{gemm, Param};

pub const LN_EPS: f32 = 1e-6;

/// Geometry of a [`Vit`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VitShape {
    pub image_size: usize,
    pub patch: usize,
    pub in_channels: usize,
    pub dim: usize,
    pub heads: usize,
    pub mlp_dim: usize,
    pub blocks: usize,
    pub window: usize,
}

impl VitShape {
    pub fn grid(&self) -> usize {
        self.image_size / self.patch
    }

    pub fn tokens(&self) -> usize {
        self.grid() * self.grid()
    }

    /// Names and shapes of every parameter, in storage order.
    pub fn layout(&self) -> Vec<(String, Vec<usize>)> {
        let pd = self.patch * self.patch * self.in_channels;
        let mut v = vec![
            ("patch_embed.weight".to_string(), vec![pd, self.dim]),
            ("patch_embed.bias".to_string(), vec![self.dim]),
            ("pos_embed".to_string(), vec![self.tokens(), self.dim]),
        ];
        for i in 0..self.blocks {
            let p = |s: &str| format!("blocks.{i}.{s}");
            v.extend([
                (p("norm1.weight"), vec![self.dim]),
                (p("norm1.bias"), vec![self.dim]),
                (p("attn.qkv.weight"), vec![self.dim, 3 * self.dim]),
                (p("attn.qkv.bias"), vec![3 * self.dim]),
                (p("attn.proj.weight"), vec![self.dim, self.dim]),
                (p("attn.proj.bias"), vec![self.dim]),
                (p("norm2.weight"), vec![self.dim]),
                (p("norm2.bias"), vec![self.dim]),
                (p("mlp.fc1.weight"), vec![self.dim, self.mlp_dim]),
                (p("mlp.fc1.bias"), vec![self.mlp_dim]),
                (p("mlp.fc2.weight"), vec![self.mlp_dim, self.dim]),
                (p("mlp.fc2.bias"), vec![self.dim]),
            ]);
        }
        v.push(("norm.weight".to_string(), vec![self.dim]));
        v.push(("norm.bias".to_string(), vec![self.dim]));
        v
    }
}

#[derive(Debug, Clone)]
pub struct Vit {
    pub shape: VitShape,
    pub params: Vec<Param>,
}

fn linear(x: &[f32], rows: usize, w: &Param, b: &Param, out: &mut [f32]) {
    let (din, dout) = (w.shape[0], w.shape[1]);
    for r in out.chunks_exact_mut(dout).take(rows) {
        r.copy_from_slice(&b.value);
    }
    gemm(rows, din, dout, x, false, &w.value, false, 1.0, out);
}

fn layer_norm(x: &[f32], dim: usize, g: &Param, b: &Param, out: &mut [f32]) {
    for (row, o) in x.chunks_exact(dim).zip(out.chunks_exact_mut(dim)) {
        let mean = row.iter().sum::<f32>() / dim as f32;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / dim as f32;
        let s = 1.0 / (var + LN_EPS).sqrt();
        for k in 0..dim {
            o[k] = (row[k] - mean) * s * g.value[k] + b.value[k];
        }
    }
}

fn gelu(v: f32) -> f32 {
    const C: f32 = 0.797_884_6; // sqrt(2 / pi)
    0.5 * v * (1.0 + (C * (v + 0.044_715 * v * v * v)).tanh())
}

fn softmax_rows(x: &mut [f32], n: usize) {
    for row in x.chunks_exact_mut(n) {
        let m = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let mut s = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            s += *v;
        }
        row.iter_mut().for_each(|v| *v /= s);
    }
}

impl Vit {
    /// Random weights keyed by `seed`: fan-in scaled linears, unit norms.
    pub fn random(shape: VitShape, seed: u64) -> Self {
        let params = shape
            .layout()
            .into_iter()
            .map(|(name, dims)| {
                if name.ends_with("norm1.weight") || name.ends_with("norm2.weight") || name == "norm.weight" {
                    Param::constant(name, dims, 1.0)
                } else if name.ends_with(".bias") {
                    Param::normal(name, dims, 0.02, seed)
                } else if name == "pos_embed" {
                    Param::normal(name, dims, 0.5, seed)
                } else {
                    let std = (1.0 / dims[0] as f32).sqrt();
                    Param::normal(name, dims, std, seed)
                }
            })
            .collect();
        Self { shape, params }
    }

    /// Adopts externally supplied parameters; they must match [`VitShape::layout`].
    pub fn from_params(shape: VitShape, params: Vec<Param>) -> Result<Self, String> {
        let layout = shape.layout();
        if params.len() != layout.len() {
            return Err(format!("expected {} tensors, found {}", layout.len(), params.len()));
        }
        for ((name, dims), p) in layout.iter().zip(&params) {
            if &p.name != name || &p.shape != dims {
                return Err(format!("tensor {} {:?} does not match expected {name} {dims:?}", p.name, p.shape));
            }
        }
        Ok(Self { shape, params })
    }

    fn p(&self, idx: usize) -> &Param {
        &self.params[idx]
    }

    /// Encodes one `in_channels x S x S` image to `dim x grid x grid`.
    pub fn forward(&self, image: &[f32]) -> Vec<f32> {
        let s = self.shape;
        let (g, d, n) = (s.grid(), s.dim, s.tokens());
        let pd = s.patch * s.patch * s.in_channels;
        assert_eq!(image.len(), s.in_channels * s.image_size * s.image_size, "vit input size");

        let mut patches = vec![0.0; n * pd];
        for ty in 0..g {
            for tx in 0..g {
                let dst = &mut patches[(ty * g + tx) * pd..(ty * g + tx + 1) * pd];
                let mut k = 0;
                for c in 0..s.in_channels {
                    for py in 0..s.patch {
                        let row = (c * s.image_size + ty * s.patch + py) * s.image_size + tx * s.patch;
                        dst[k..k + s.patch].copy_from_slice(&image[row..row + s.patch]);
                        k += s.patch;
                    }
                }
            }
        }
        let mut x = vec![0.0; n * d];
        linear(&patches, n, self.p(0), self.p(1), &mut x);
        drop(patches);
        x.iter_mut().zip(&self.p(2).value).for_each(|(a, b)| *a += b);

        let mut h = vec![0.0; n * d];
        let mut qkv = vec![0.0; n * 3 * d];
        let mut attn = vec![0.0; n * d];
        let mut proj = vec![0.0; n * d];
        let mut mid = vec![0.0; n * s.mlp_dim];
        for blk in 0..s.blocks {
            let base = 3 + blk * 12;
            layer_norm(&x, d, self.p(base), self.p(base + 1), &mut h);
            linear(&h, n, self.p(base + 2), self.p(base + 3), &mut qkv);
            let shift = if blk % 2 == 1 { s.window / 2 } else { 0 };
            self.window_attention(&qkv, shift, &mut attn);
            linear(&attn, n, self.p(base + 4), self.p(base + 5), &mut proj);
            x.iter_mut().zip(&proj).for_each(|(a, b)| *a += b);
            layer_norm(&x, d, self.p(base + 6), self.p(base + 7), &mut h);
            linear(&h, n, self.p(base + 8), self.p(base + 9), &mut mid);
            mid.iter_mut().for_each(|v| *v = gelu(*v));
            linear(&mid, n, self.p(base + 10), self.p(base + 11), &mut proj);
            x.iter_mut().zip(&proj).for_each(|(a, b)| *a += b);
        }
        let last = self.params.len();
        layer_norm(&x, d, self.p(last - 2), self.p(last - 1), &mut h);

        // tokens x dim -> dim x grid x grid
        let mut out = vec![0.0; n * d];
        for t in 0..n {
            for k in 0..d {
                out[k * n + t] = h[t * d + k];
            }
        }
        out
    }

    fn window_attention(&self, qkv: &[f32], shift: usize, out: &mut [f32]) {
        let s = self.shape;
        let (g, d, win) = (s.grid(), s.dim, s.window);
        let hd = d / s.heads;
        let wt = win * win;
        let scale = 1.0 / (hd as f32).sqrt();
        let (mut q, mut k, mut v) = (vec![0.0; wt * hd], vec![0.0; wt * hd], vec![0.0; wt * hd]);
        let mut scores = vec![0.0; wt * wt];
        let mut o = vec![0.0; wt * hd];
        let mut tok = vec![0usize; wt];
        for wy in (0..g).step_by(win) {
            for wx in (0..g).step_by(win) {
                for (i, t) in tok.iter_mut().enumerate() {
                    let (y, x) = ((wy + i / win + shift) % g, (wx + i % win + shift) % g);
                    *t = y * g + x;
                }
                for head in 0..s.heads {
                    for (i, &t) in tok.iter().enumerate() {
                        let row = &qkv[t * 3 * d..(t + 1) * 3 * d];
                        q[i * hd..(i + 1) * hd].copy_from_slice(&row[head * hd..(head + 1) * hd]);
                        k[i * hd..(i + 1) * hd].copy_from_slice(&row[d + head * hd..d + (head + 1) * hd]);
                        v[i * hd..(i + 1) * hd].copy_from_slice(&row[2 * d + head * hd..2 * d + (head + 1) * hd]);
                    }
                    gemm(wt, hd, wt, &q, false, &k, true, 0.0, &mut scores);
                    scores.iter_mut().for_each(|x| *x *= scale);
                    softmax_rows(&mut scores, wt);
                    gemm(wt, wt, hd, &scores, false, &v, false, 0.0, &mut o);
                    for (i, &t) in tok.iter().enumerate() {
                        out[t * d + head * hd..t * d + (head + 1) * hd].copy_from_slice(&o[i * hd..(i + 1) * hd]);
                    }
                }
            }
        }
    }
}
