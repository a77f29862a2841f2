//! 2-D convolution (im2col + GEMM) and 2x2 stride-2 transposed convolution.

use super::{gemm, Param};
use crate::tensor::Tensor;

/// Square-kernel convolution with "same" padding `k / 2`.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: Param,
    pub bias: Param,
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub stride: usize,
    input: Option<Tensor>,
}

fn out_size(size: usize, k: usize, stride: usize) -> usize {
    (size + 2 * (k / 2) - k) / stride + 1
}

/// Upper bound on the im2col buffer, in floats; larger batches are chunked.
const COLS_BUDGET: usize = 1 << 20;

/// Unfolds one `C x H x W` sample into columns `[off, off + OH OW)` of a
/// `(C k k) x ld` matrix.
#[allow(clippy::too_many_arguments)]
fn im2col(x: &[f32], c: usize, h: usize, w: usize, k: usize, stride: usize, cols: &mut [f32], ld: usize, off: usize) {
    let pad = (k / 2) as isize;
    let (oh, ow) = (out_size(h, k, stride), out_size(w, k, stride));
    for ci in 0..c {
        for ki in 0..k {
            for kj in 0..k {
                let row = (ci * k + ki) * k + kj;
                let dst = &mut cols[row * ld + off..row * ld + off + oh * ow];
                for oy in 0..oh {
                    let iy = (oy * stride) as isize + ki as isize - pad;
                    let line = &mut dst[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= h as isize {
                        line.fill(0.0);
                        continue;
                    }
                    let src = &x[ci * h * w + iy as usize * w..ci * h * w + (iy as usize + 1) * w];
                    if stride == 1 {
                        // Valid output range where 0 <= ox + kj - pad < w.
                        let shift = kj as isize - pad;
                        let lo = (-shift).max(0) as usize;
                        let hi = ((w as isize - shift).min(ow as isize)).max(lo as isize) as usize;
                        line[..lo].fill(0.0);
                        line[lo..hi].copy_from_slice(&src[(lo as isize + shift) as usize..(hi as isize + shift) as usize]);
                        line[hi..].fill(0.0);
                    } else {
                        for (ox, v) in line.iter_mut().enumerate() {
                            let ix = (ox * stride) as isize + kj as isize - pad;
                            *v = if ix < 0 || ix >= w as isize { 0.0 } else { src[ix as usize] };
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates columns back into a zeroed sample.
#[allow(clippy::too_many_arguments)]
fn col2im(cols: &[f32], c: usize, h: usize, w: usize, k: usize, stride: usize, x: &mut [f32], ld: usize, off: usize) {
    let pad = (k / 2) as isize;
    let (oh, ow) = (out_size(h, k, stride), out_size(w, k, stride));
    x.fill(0.0);
    for ci in 0..c {
        for ki in 0..k {
            for kj in 0..k {
                let row = (ci * k + ki) * k + kj;
                let src = &cols[row * ld + off..row * ld + off + oh * ow];
                for oy in 0..oh {
                    let iy = (oy * stride) as isize + ki as isize - pad;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let base = ci * h * w + iy as usize * w;
                    let line = &src[oy * ow..(oy + 1) * ow];
                    if stride == 1 {
                        let shift = kj as isize - pad;
                        let lo = (-shift).max(0) as usize;
                        let hi = ((w as isize - shift).min(ow as isize)).max(lo as isize) as usize;
                        let dst = &mut x[base + (lo as isize + shift) as usize..base + (hi as isize + shift) as usize];
                        dst.iter_mut().zip(&line[lo..hi]).for_each(|(d, v)| *d += v);
                    } else {
                        for (ox, &v) in line.iter().enumerate() {
                            let ix = (ox * stride) as isize + kj as isize - pad;
                            if ix >= 0 && ix < w as isize {
                                x[base + ix as usize] += v;
                            }
                        }
                    }
                }
            }
        }
    }
}

impl Conv2d {
    /// He-normal weights keyed by `name`, zero bias.
    pub fn new(name: &str, cin: usize, cout: usize, kernel: usize, stride: usize, seed: u64) -> Self {
        let fan_in = cin * kernel * kernel;
        let std = (2.0 / fan_in as f32).sqrt();
        Self {
            weight: Param::normal(format!("{name}.weight"), vec![cout, cin, kernel, kernel], std, seed),
            bias: Param::constant(format!("{name}.bias"), vec![cout], 0.0),
            cin,
            cout,
            kernel,
            stride,
            input: None,
        }
    }

    fn chunk(&self, p: usize) -> usize {
        let kk = self.cin * self.kernel * self.kernel;
        (COLS_BUDGET / (kk * p).max(1)).max(1)
    }

    pub fn forward(&mut self, x: &Tensor, train: bool) -> Tensor {
        assert_eq!(x.c, self.cin, "conv input channels");
        let (oh, ow) = (out_size(x.h, self.kernel, self.stride), out_size(x.w, self.kernel, self.stride));
        let kk = self.cin * self.kernel * self.kernel;
        let p = oh * ow;
        let mut out = Tensor::zeros(x.n, self.cout, oh, ow);
        let chunk = self.chunk(p).min(x.n);
        let mut cols = vec![0.0; kk * chunk * p];
        let mut y = vec![0.0; self.cout * chunk * p];
        for first in (0..x.n).step_by(chunk) {
            let m = chunk.min(x.n - first);
            let ld = m * p;
            for s in 0..m {
                im2col(x.sample(first + s), x.c, x.h, x.w, self.kernel, self.stride, &mut cols, ld, s * p);
            }
            for (co, row) in y[..self.cout * ld].chunks_exact_mut(ld).enumerate() {
                row.fill(self.bias.value[co]);
            }
            gemm(self.cout, kk, ld, &self.weight.value, false, &cols[..kk * ld], false, 1.0, &mut y[..self.cout * ld]);
            for s in 0..m {
                let o = out.sample_mut(first + s);
                for co in 0..self.cout {
                    o[co * p..(co + 1) * p].copy_from_slice(&y[co * ld + s * p..co * ld + (s + 1) * p]);
                }
            }
        }
        self.input = train.then(|| x.clone());
        out
    }

    /// Accumulates parameter gradients; returns the input gradient when asked.
    pub fn backward(&mut self, dy: &Tensor, need_input_grad: bool) -> Option<Tensor> {
        let x = self.input.take().expect("conv backward without cached forward");
        let kk = self.cin * self.kernel * self.kernel;
        let p = dy.plane();
        let chunk = self.chunk(p).min(x.n);
        let mut cols = vec![0.0; kk * chunk * p];
        let mut g = vec![0.0; self.cout * chunk * p];
        let mut dx = need_input_grad.then(|| Tensor::zeros(x.n, x.c, x.h, x.w));
        for first in (0..x.n).step_by(chunk) {
            let m = chunk.min(x.n - first);
            let ld = m * p;
            for s in 0..m {
                im2col(x.sample(first + s), x.c, x.h, x.w, self.kernel, self.stride, &mut cols, ld, s * p);
                let src = dy.sample(first + s);
                for co in 0..self.cout {
                    g[co * ld + s * p..co * ld + (s + 1) * p].copy_from_slice(&src[co * p..(co + 1) * p]);
                }
            }
            let g = &g[..self.cout * ld];
            for (co, row) in g.chunks_exact(ld).enumerate() {
                self.bias.grad[co] += row.iter().sum::<f32>();
            }
            // dW (cout x kk) += dY (cout x ld) * cols^T
            gemm(self.cout, ld, kk, g, false, &cols[..kk * ld], true, 1.0, &mut self.weight.grad);
            if let Some(dx) = dx.as_mut() {
                // dcols (kk x ld) = W^T * dY, reusing the column buffer.
                gemm(kk, self.cout, ld, &self.weight.value, true, g, false, 0.0, &mut cols[..kk * ld]);
                for s in 0..m {
                    col2im(&cols, x.c, x.h, x.w, self.kernel, self.stride, dx.sample_mut(first + s), ld, s * p);
                }
            }
        }
        dx
    }

    pub fn params_mut(&mut self) -> [&mut Param; 2] {
        [&mut self.weight, &mut self.bias]
    }

    pub fn params(&self) -> [&Param; 2] {
        [&self.weight, &self.bias]
    }
}

/// 2x2 transposed convolution with stride 2 (exact 2x upsampling).
#[derive(Debug, Clone)]
pub struct UpConv {
    /// `cin x (cout * 4)`, inner index `(co, di, dj)`.
    pub weight: Param,
    pub bias: Param,
    pub cin: usize,
    pub cout: usize,
    input: Option<Tensor>,
}

impl UpConv {
    pub fn new(name: &str, cin: usize, cout: usize, seed: u64) -> Self {
        let std = (2.0 / cin as f32).sqrt();
        Self {
            weight: Param::normal(format!("{name}.weight"), vec![cin, cout, 2, 2], std, seed),
            bias: Param::constant(format!("{name}.bias"), vec![cout], 0.0),
            cin,
            cout,
            input: None,
        }
    }

    pub fn forward(&mut self, x: &Tensor, train: bool) -> Tensor {
        assert_eq!(x.c, self.cin, "upconv input channels");
        let p = x.plane();
        let (oh, ow) = (2 * x.h, 2 * x.w);
        let mut out = Tensor::zeros(x.n, self.cout, oh, ow);
        let mut y = vec![0.0; self.cout * 4 * p];
        for i in 0..x.n {
            // Y (cout*4 x p) = W^T (cout*4 x cin) * X (cin x p)
            gemm(self.cout * 4, self.cin, p, &self.weight.value, true, x.sample(i), false, 0.0, &mut y);
            let o = out.sample_mut(i);
            for co in 0..self.cout {
                let b = self.bias.value[co];
                for d in 0..4 {
                    let (di, dj) = (d / 2, d % 2);
                    let src = &y[(co * 4 + d) * p..(co * 4 + d + 1) * p];
                    for a in 0..x.h {
                        for c in 0..x.w {
                            o[co * oh * ow + (2 * a + di) * ow + 2 * c + dj] = src[a * x.w + c] + b;
                        }
                    }
                }
            }
        }
        self.input = train.then(|| x.clone());
        out
    }

    pub fn backward(&mut self, dy: &Tensor) -> Tensor {
        let x = self.input.take().expect("upconv backward without cached forward");
        let p = x.plane();
        let (oh, ow) = (dy.h, dy.w);
        let mut gathered = vec![0.0; self.cout * 4 * p];
        let mut dx = Tensor::zeros(x.n, x.c, x.h, x.w);
        for i in 0..x.n {
            let g = dy.sample(i);
            for co in 0..self.cout {
                let plane = &g[co * oh * ow..(co + 1) * oh * ow];
                self.bias.grad[co] += plane.iter().sum::<f32>();
                for d in 0..4 {
                    let (di, dj) = (d / 2, d % 2);
                    let dst = &mut gathered[(co * 4 + d) * p..(co * 4 + d + 1) * p];
                    for a in 0..x.h {
                        for c in 0..x.w {
                            dst[a * x.w + c] = plane[(2 * a + di) * ow + 2 * c + dj];
                        }
                    }
                }
            }
            // dW (cin x cout*4) += X (cin x p) * G^T
            gemm(self.cin, p, self.cout * 4, x.sample(i), false, &gathered, true, 1.0, &mut self.weight.grad);
            // dX (cin x p) = W (cin x cout*4) * G
            gemm(self.cin, self.cout * 4, p, &self.weight.value, false, &gathered, false, 0.0, dx.sample_mut(i));
        }
        dx
    }

    pub fn params_mut(&mut self) -> [&mut Param; 2] {
        [&mut self.weight, &mut self.bias]
    }

    pub fn params(&self) -> [&Param; 2] {
        [&self.weight, &self.bias]
    }
}
