//! Exact Euclidean distance transform by separable lower envelopes of
//! parabolas (Felzenszwalb & Huttenlocher), linear in the number of cells.

use alloc::vec;
use alloc::vec::Vec;

use crate::Grid;

/// Squared Euclidean distance from every cell to the nearest `true` cell of
/// `seeds`, with physical step `row_step` between rows and `col_step` between
/// columns. Cells are unreachable (`f64::INFINITY`) only when there are no
/// seeds at all.
pub fn squared_distance_to_seeds(seeds: &Grid<bool>, row_step: f64, col_step: f64) -> Grid<f64> {
    let (h, w) = seeds.shape();
    let mut scratch = Envelope::with_capacity(h.max(w));

    // Columns first: distances along a, seeded with 0 / inf.
    let mut column_pass = vec![f64::INFINITY; h * w];
    let mut f = vec![0.0; h];
    let mut out = vec![0.0; h];
    for b in 0..w {
        for a in 0..h {
            f[a] = if seeds[(a, b)] { 0.0 } else { f64::INFINITY };
        }
        scratch.transform(&f, &mut out, row_step);
        for a in 0..h {
            column_pass[a * w + b] = out[a];
        }
    }

    let mut result = vec![0.0; h * w];
    for a in 0..h {
        let row = &column_pass[a * w..(a + 1) * w];
        scratch.transform(row, &mut result[a * w..(a + 1) * w], col_step);
    }
    Grid::new(h, w, result).expect("shape preserved")
}

struct Envelope {
    vertices: Vec<usize>,
    bounds: Vec<f64>,
    scaled: Vec<f64>,
}

impl Envelope {
    fn with_capacity(n: usize) -> Self {
        Self {
            vertices: Vec::with_capacity(n),
            bounds: Vec::with_capacity(n + 1),
            scaled: Vec::with_capacity(n),
        }
    }

    /// `out[p] = min_q step^2 (p - q)^2 + f[q]` over finite `f[q]`.
    fn transform(&mut self, f: &[f64], out: &mut [f64], step: f64) {
        let n = f.len();
        let step2 = step * step;
        self.scaled.clear();
        self.scaled.extend(f.iter().map(|&v| v / step2));
        let g = &self.scaled;
        self.vertices.clear();
        self.bounds.clear();

        for q in 0..n {
            if !g[q].is_finite() {
                continue;
            }
            if self.vertices.is_empty() {
                self.vertices.push(q);
                self.bounds.push(f64::NEG_INFINITY);
                self.bounds.push(f64::INFINITY);
                continue;
            }
            let qf = q as f64;
            loop {
                let k = self.vertices.len() - 1;
                let r = self.vertices[k];
                let rf = r as f64;
                let s = ((g[q] + qf * qf) - (g[r] + rf * rf)) / (2.0 * (qf - rf));
                if s <= self.bounds[k] {
                    self.vertices.pop();
                    self.bounds.pop();
                    // bounds[0] is -inf, so at least one vertex always survives.
                    continue;
                }
                self.vertices.push(q);
                *self.bounds.last_mut().expect("nonempty") = s;
                self.bounds.push(f64::INFINITY);
                break;
            }
        }

        if self.vertices.is_empty() {
            out.iter_mut().for_each(|o| *o = f64::INFINITY);
            return;
        }
        let mut k = 0;
        for (p, o) in out.iter_mut().enumerate() {
            let pf = p as f64;
            while self.bounds[k + 1] < pf {
                k += 1;
            }
            let r = self.vertices[k];
            let d = pf - r as f64;
            *o = (d * d + g[r]) * step2;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute(seeds: &Grid<bool>, rs: f64, cs: f64) -> Grid<f64> {
        let (h, w) = seeds.shape();
        Grid::from_fn(h, w, |a, b| {
            let mut best = f64::INFINITY;
            for i in 0..h {
                for j in 0..w {
                    if seeds[(i, j)] {
                        let da = (a as f64 - i as f64) * rs;
                        let db = (b as f64 - j as f64) * cs;
                        best = best.min(da * da + db * db);
                    }
                }
            }
            best
        })
    }

    #[test]
    fn single_seed_matches_closed_form() {
        let mut seeds = Grid::filled(4, 6, false);
        seeds[(1, 2)] = true;
        let d = squared_distance_to_seeds(&seeds, 1.0, 1.0);
        assert_eq!(d[(1, 2)], 0.0);
        assert_eq!(d[(3, 5)], 4.0 + 9.0);
    }

    #[test]
    fn anisotropic_spacing_matches_brute_force() {
        let seeds = Grid::from_fn(9, 7, |a, b| (a * 7 + b) % 11 == 3);
        let d = squared_distance_to_seeds(&seeds, 0.7, 1.9);
        let o = brute(&seeds, 0.7, 1.9);
        for (x, y) in d.iter().zip(o.iter()) {
            assert!((x - y).abs() < 1e-9, "{x} vs {y}");
        }
    }

    #[test]
    fn no_seeds_is_unreachable() {
        let d = squared_distance_to_seeds(&Grid::filled(3, 3, false), 1.0, 1.0);
        assert!(d.iter().all(|v| v.is_infinite()));
    }
}
