//! Bilinear resampling with half-pixel centres, plus its adjoint.

/// Source taps and weights for one output coordinate.
fn taps(out: usize, src: usize) -> Vec<(usize, usize, f32)> {
    let scale = src as f64 / out as f64;
    (0..out)
        .map(|o| {
            let x = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (x.floor() as usize).min(src - 1);
            let i1 = (i0 + 1).min(src - 1);
            (i0, i1, (x - i0 as f64) as f32)
        })
        .collect()
}

/// Resizes a `h x w` plane to `oh x ow`. Equal sizes return a copy.
pub fn bilinear(src: &[f32], h: usize, w: usize, oh: usize, ow: usize) -> Vec<f32> {
    if (h, w) == (oh, ow) {
        return src.to_vec();
    }
    let (ty, tx) = (taps(oh, h), taps(ow, w));
    let mut out = Vec::with_capacity(oh * ow);
    for &(y0, y1, fy) in &ty {
        let (r0, r1) = (&src[y0 * w..(y0 + 1) * w], &src[y1 * w..(y1 + 1) * w]);
        for &(x0, x1, fx) in &tx {
            let top = r0[x0] + (r0[x1] - r0[x0]) * fx;
            let bot = r1[x0] + (r1[x1] - r1[x0]) * fx;
            out.push(top + (bot - top) * fy);
        }
    }
    out
}

/// Transpose of [`bilinear`]: scatters an `oh x ow` gradient back to `h x w`.
pub fn bilinear_adjoint(grad: &[f32], h: usize, w: usize, oh: usize, ow: usize) -> Vec<f32> {
    if (h, w) == (oh, ow) {
        return grad.to_vec();
    }
    let (ty, tx) = (taps(oh, h), taps(ow, w));
    let mut out = vec![0.0; h * w];
    for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
        for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
            let g = grad[oy * ow + ox];
            out[y0 * w + x0] += g * (1.0 - fy) * (1.0 - fx);
            out[y0 * w + x1] += g * (1.0 - fy) * fx;
            out[y1 * w + x0] += g * fy * (1.0 - fx);
            out[y1 * w + x1] += g * fy * fx;
        }
    }
    out
}

/// Nearest-neighbour resize using the same half-pixel convention.
pub fn nearest<T: Copy>(src: &[T], h: usize, w: usize, oh: usize, ow: usize) -> Vec<T> {
    let idx = |o: usize, out: usize, n: usize| (((o as f64 + 0.5) * n as f64 / out as f64) as usize).min(n - 1);
    let mut out = Vec::with_capacity(oh * ow);
    for oy in 0..oh {
        let sy = idx(oy, oh, h);
        for ox in 0..ow {
            out.push(src[sy * w + idx(ox, ow, w)]);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constants_stay_constant() {
        let src = vec![2.5f32; 64 * 64];
        for (oh, ow) in [(4, 4), (17, 9), (1024, 1024)] {
            assert!(bilinear(&src, 64, 64, oh, ow).iter().all(|&v| v == 2.5));
        }
    }

    #[test]
    fn same_size_is_identity() {
        let src: Vec<f32> = (0..30).map(|i| i as f32).collect();
        assert_eq!(bilinear(&src, 5, 6, 5, 6), src);
    }

    #[test]
    fn upsample_linear_ramp_is_exact_in_interior() {
        let src: Vec<f32> = (0..4).map(|i| i as f32).collect();
        let up = bilinear(&src, 1, 4, 1, 8);
        // Output centre (o + 0.5) / 2 - 0.5 maps to source coordinate.
        assert_eq!(up, vec![0.0, 0.25, 0.75, 1.25, 1.75, 2.25, 2.75, 3.0]);
    }

    #[test]
    fn adjoint_identity() {
        let src: Vec<f32> = (0..35).map(|i| ((i * 7) % 11) as f32 - 5.0).collect();
        let g: Vec<f32> = (0..12).map(|i| ((i * 5) % 7) as f32 - 3.0).collect();
        let fwd = bilinear(&src, 5, 7, 3, 4);
        let adj = bilinear_adjoint(&g, 5, 7, 3, 4);
        let lhs: f32 = fwd.iter().zip(&g).map(|(a, b)| a * b).sum();
        let rhs: f32 = adj.iter().zip(&src).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-3);
    }

    #[test]
    fn nearest_keeps_values() {
        let src: Vec<u8> = (0..16).map(|i| (i % 3) as u8).collect();
        let out = nearest(&src, 4, 4, 7, 9);
        assert!(out.iter().all(|v| *v < 3));
        assert_eq!(nearest(&src, 4, 4, 4, 4), src);
    }
}
