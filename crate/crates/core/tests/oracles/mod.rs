//! Independent reference implementations used only by tests. None of these
//! call into the code they check beyond plain data types.
#![allow(dead_code)]

use nnsam_core::Grid;
use rand::Rng;

/// All-pairs nearest-boundary search. Boundary = object pixel with a
/// background 4-neighbour or on the grid edge.
pub fn brute_signed_distance(mask: &Grid<u8>) -> Grid<f64> {
    let (h, w) = mask.shape();
    let mut boundary = Vec::new();
    for a in 0..h {
        for b in 0..w {
            if mask[(a, b)] != 1 {
                continue;
            }
            let edge = a == 0 || b == 0 || a == h - 1 || b == w - 1;
            let open = edge
                || mask[(a - 1, b)] == 0
                || mask[(a + 1, b)] == 0
                || mask[(a, b - 1)] == 0
                || mask[(a, b + 1)] == 0;
            if open {
                boundary.push((a, b));
            }
        }
    }
    Grid::from_fn(h, w, |a, b| {
        let d = boundary
            .iter()
            .map(|&(i, j)| {
                let da = a as f64 - i as f64;
                let db = b as f64 - j as f64;
                (da * da + db * db).sqrt()
            })
            .fold(f64::INFINITY, f64::min);
        if d == 0.0 {
            0.0
        } else if mask[(a, b)] == 1 {
            -d
        } else {
            d
        }
    })
}

fn surface_points(labels: &Grid<u8>, class: u8) -> Vec<(usize, usize)> {
    let (h, w) = labels.shape();
    let inside = |a: usize, b: usize| labels[(a, b)] == class;
    let mut out = Vec::new();
    for a in 0..h {
        for b in 0..w {
            if !inside(a, b) {
                continue;
            }
            if a == 0 || b == 0 || a == h - 1 || b == w - 1 || !inside(a - 1, b) || !inside(a + 1, b) || !inside(a, b - 1) || !inside(a, b + 1) {
                out.push((a, b));
            }
        }
    }
    out
}

/// O(|S_P| |S_G|) average symmetric surface distance; `None` if exactly one
/// surface is empty.
pub fn brute_asd(pred: &Grid<u8>, gt: &Grid<u8>, class: u8, spacing: (f64, f64)) -> Option<f64> {
    let sp = surface_points(pred, class);
    let sg = surface_points(gt, class);
    match (sp.is_empty(), sg.is_empty()) {
        (true, true) => return Some(0.0),
        (true, false) | (false, true) => return None,
        _ => {}
    }
    let dist = |p: (usize, usize), q: (usize, usize)| {
        let da = (p.0 as f64 - q.0 as f64) * spacing.0;
        let db = (p.1 as f64 - q.1 as f64) * spacing.1;
        (da * da + db * db).sqrt()
    };
    let directed = |from: &[(usize, usize)], to: &[(usize, usize)]| -> f64 {
        from.iter()
            .map(|&p| to.iter().map(|&q| dist(p, q)).fold(f64::INFINITY, f64::min))
            .sum()
    };
    Some((directed(&sp, &sg) + directed(&sg, &sp)) / (sp.len() + sg.len()) as f64)
}

/// Replicate-padded copy with a one-cell border.
fn pad(f: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let h = f.len();
    let w = f[0].len();
    (0..h + 2)
        .map(|i| {
            let r = i.clamp(1, h) - 1;
            (0..w + 2).map(|j| f[r][j.clamp(1, w) - 1]).collect()
        })
        .collect()
}

/// Sigmoid-sharpened curvature, coded from scratch over nested vectors with
/// explicit replicate padding.
pub fn oracle_curvature(phi: &Grid<f64>) -> Grid<f64> {
    let (h, w) = phi.shape();
    let sharp: Vec<Vec<f64>> = (0..h)
        .map(|a| {
            (0..w)
                .map(|b| {
                    let z = (1000.0 * phi[(a, b)]).clamp(-500.0, 500.0);
                    (1.0 + z.exp()).recip()
                })
                .collect()
        })
        .collect();
    let p = pad(&sharp);
    let mut fa = vec![vec![0.0; w]; h];
    let mut fb = vec![vec![0.0; w]; h];
    let mut faa = vec![vec![0.0; w]; h];
    let mut fbb = vec![vec![0.0; w]; h];
    for a in 0..h {
        for b in 0..w {
            let (i, j) = (a + 1, b + 1);
            fa[a][b] = (p[i + 1][j] - p[i - 1][j]) / 2.0;
            fb[a][b] = (p[i][j + 1] - p[i][j - 1]) / 2.0;
            faa[a][b] = p[i + 1][j] + p[i - 1][j] - 2.0 * p[i][j];
            fbb[a][b] = p[i][j + 1] + p[i][j - 1] - 2.0 * p[i][j];
        }
    }
    let pa = pad(&fa);
    Grid::from_fn(h, w, |a, b| {
        let fab = (pa[a + 1][b + 2] - pa[a + 1][b]) / 2.0;
        let (x, y) = (fa[a][b], fb[a][b]);
        let num = (1.0 + x.powi(2)) * fbb[a][b] + (1.0 + y.powi(2)) * faa[a][b] - 2.0 * x * y * fab;
        num.abs() / (2.0 * (1.0 + x.powi(2) + y.powi(2)).powf(1.5))
    })
}

/// Mean absolute curvature difference over all channels, via the oracle.
pub fn oracle_curvature_loss(pred: &[Grid<f64>], gt: &[Grid<f64>]) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for (p, g) in pred.iter().zip(gt) {
        let kp = oracle_curvature(p);
        let kg = oracle_curvature(g);
        total += kp.iter().zip(kg.iter()).map(|(x, y)| (x - y).abs()).sum::<f64>();
        count += p.len();
    }
    total / count as f64
}

pub fn disk_mask(size: usize, radius: f64, center: (f64, f64)) -> Grid<u8> {
    Grid::from_fn(size, size, |a, b| {
        let da = a as f64 - center.0;
        let db = b as f64 - center.1;
        (da * da + db * db <= radius * radius) as u8
    })
}

/// Random binary mask guaranteed to contain both values.
pub fn random_mask(rng: &mut impl Rng, max_side: usize) -> Grid<u8> {
    loop {
        let h = rng.gen_range(1..=max_side);
        let w = rng.gen_range(2..=max_side);
        let density = rng.gen_range(0.05..0.95);
        let m = Grid::from_fn(h, w, |_, _| rng.gen_bool(density) as u8);
        let ones = m.iter().filter(|&&v| v == 1).count();
        if ones > 0 && ones < m.len() {
            return m;
        }
    }
}

/// Blobby random mask: union of a few random rectangles.
pub fn random_blobs(rng: &mut impl Rng, h: usize, w: usize) -> Grid<u8> {
    let mut m = Grid::filled(h, w, 0u8);
    for _ in 0..rng.gen_range(1..4) {
        let a0 = rng.gen_range(0..h);
        let b0 = rng.gen_range(0..w);
        let a1 = rng.gen_range(a0..h);
        let b1 = rng.gen_range(b0..w);
        for a in a0..=a1 {
            for b in b0..=b1 {
                m[(a, b)] = 1;
            }
        }
    }
    m
}

/// Central finite-difference gradient of `f` at `x`.
pub fn fd_gradient(x: &[f64], step: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut xs = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = xs[i];
            xs[i] = orig + step;
            let up = f(&xs);
            xs[i] = orig - step;
            let down = f(&xs);
            xs[i] = orig;
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// Componentwise relative error of `analytic` against central differences
/// with step `step`. Components whose central differences at `step` and
/// `step / 2` disagree (only possible when a kink of an absolute value lies
/// within the stencil) are skipped and counted.
pub fn gradient_error(x: &[f64], analytic: &[f64], step: f64, mut f: impl FnMut(&[f64]) -> f64) -> (f64, usize) {
    let mut xs = x.to_vec();
    let mut central = |xs: &mut Vec<f64>, i: usize, h: f64| {
        let orig = xs[i];
        xs[i] = orig + h;
        let up = f(xs);
        xs[i] = orig - h;
        let down = f(xs);
        xs[i] = orig;
        (up - down) / (2.0 * h)
    };
    let mut worst: f64 = 0.0;
    let mut skipped = 0;
    for (i, &a) in analytic.iter().enumerate().take(x.len()) {
        let full = central(&mut xs, i, step);
        let half = central(&mut xs, i, step / 2.0);
        let scale = full.abs().max(half.abs()).max(1e-6);
        if (full - half).abs() > 1e-4 * scale {
            skipped += 1;
            continue;
        }
        let denom = a.abs().max(full.abs()).max(1e-6);
        worst = worst.max((a - full).abs() / denom);
    }
    (worst, skipped)
}

/// Two-pass population mean and standard deviation.
pub fn two_pass_mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}
