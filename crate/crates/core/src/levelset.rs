//! Signed distance level sets, sigmoid sharpening, finite-difference
//! derivatives and the graph-surface curvature used as a shape prior.
//!
//! Sign convention: negative strictly inside the object, zero on boundary
//! pixels, positive outside. A boundary pixel is an object pixel with at
//! least one background 4-neighbour, or an object pixel on the grid edge.
//! Distances are in pixel lengths.

use alloc::vec::Vec;

use crate::edt::squared_distance_to_seeds;
use crate::{Error, Grid, Result};

/// Gain applied inside the sharpening sigmoid.
pub const SHARPEN_GAIN: f64 = 1000.0;
/// Bound on the exponent argument so `exp` never overflows.
pub const SHARPEN_CLAMP: f64 = 500.0;

/// Binary object mask for a single class.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryMask {
    grid: Grid<u8>,
    spacing: (f64, f64),
}

impl BinaryMask {
    pub fn new(grid: Grid<u8>) -> Result<Self> {
        Self::with_spacing(grid, (1.0, 1.0))
    }

    pub fn with_spacing(grid: Grid<u8>, spacing: (f64, f64)) -> Result<Self> {
        if grid.iter().any(|&v| v > 1) {
            return Err(Error::InvalidValue("mask values must be 0 or 1"));
        }
        if !(spacing.0 > 0.0 && spacing.1 > 0.0) {
            return Err(Error::InvalidValue("spacing must be positive"));
        }
        Ok(Self { grid, spacing })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        Self {
            grid: Grid::from_fn(height, width, |a, b| f(a, b) as u8),
            spacing: (1.0, 1.0),
        }
    }

    pub fn grid(&self) -> &Grid<u8> {
        &self.grid
    }

    pub fn spacing(&self) -> (f64, f64) {
        self.spacing
    }

    #[inline]
    pub fn is_object(&self, a: usize, b: usize) -> bool {
        self.grid[(a, b)] == 1
    }

    pub fn object_count(&self) -> usize {
        self.grid.iter().filter(|&&v| v == 1).count()
    }
}

/// Boundary cells of an arbitrary object predicate: object cells with a
/// background 4-neighbour, or object cells touching the grid edge.
pub fn boundary_of(height: usize, width: usize, is_object: impl Fn(usize, usize) -> bool) -> Grid<bool> {
    Grid::from_fn(height, width, |a, b| {
        if !is_object(a, b) {
            return false;
        }
        if a == 0 || b == 0 || a + 1 == height || b + 1 == width {
            return true;
        }
        !is_object(a - 1, b) || !is_object(a + 1, b) || !is_object(a, b - 1) || !is_object(a, b + 1)
    })
}

pub fn boundary_pixels(mask: &BinaryMask) -> Grid<bool> {
    let (h, w) = mask.grid.shape();
    boundary_of(h, w, |a, b| mask.is_object(a, b))
}

/// Signed distance field of a mask.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelSetMap {
    pub phi: Grid<f64>,
    pub boundary_set: Vec<(usize, usize)>,
}

/// Exact signed Euclidean distance to the nearest boundary pixel.
pub fn signed_distance(mask: &BinaryMask) -> Result<LevelSetMap> {
    let objects = mask.object_count();
    if objects == 0 || objects == mask.grid.len() {
        return Err(Error::DegenerateMask);
    }
    let boundary = boundary_pixels(mask);
    let d2 = squared_distance_to_seeds(&boundary, 1.0, 1.0);
    let (h, w) = boundary.shape();
    let phi = Grid::from_fn(h, w, |a, b| {
        let d = libm::sqrt(d2[(a, b)]);
        if boundary[(a, b)] {
            0.0
        } else if mask.is_object(a, b) {
            -d
        } else {
            d
        }
    });
    let boundary_set = (0..h)
        .flat_map(|a| (0..w).map(move |b| (a, b)))
        .filter(|&p| boundary[p])
        .collect();
    Ok(LevelSetMap { phi, boundary_set })
}

/// `1 / (1 + exp(1000 phi))` with the exponent clamped to `[-500, 500]`.
#[inline]
pub fn sharpen_value(phi: f64) -> f64 {
    let z = (SHARPEN_GAIN * phi).clamp(-SHARPEN_CLAMP, SHARPEN_CLAMP);
    1.0 / (1.0 + libm::exp(z))
}

/// Derivative of [`sharpen_value`] with respect to `phi`; zero where the
/// exponent is clamped.
#[inline]
pub fn sharpen_slope(phi: f64) -> f64 {
    let z = SHARPEN_GAIN * phi;
    if !(-SHARPEN_CLAMP..=SHARPEN_CLAMP).contains(&z) {
        return 0.0;
    }
    let s = 1.0 / (1.0 + libm::exp(z));
    -SHARPEN_GAIN * s * (1.0 - s)
}

pub fn sharpen_field(phi: &Grid<f64>) -> Grid<f64> {
    phi.map(|&v| sharpen_value(v))
}

/// First and second finite differences of a field.
#[derive(Debug, Clone, PartialEq)]
pub struct Derivatives {
    pub d_a: Grid<f64>,
    pub d_b: Grid<f64>,
    pub d_aa: Grid<f64>,
    pub d_bb: Grid<f64>,
    pub d_ab: Grid<f64>,
}

/// Sharpened level set, optionally with its derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct SharpenedField {
    pub phi_hat: Grid<f64>,
    pub derivatives: Option<Derivatives>,
}

pub fn sharpen(phi: &LevelSetMap) -> SharpenedField {
    SharpenedField {
        phi_hat: sharpen_field(&phi.phi),
        derivatives: None,
    }
}

pub fn spatial_derivatives(field: SharpenedField) -> SharpenedField {
    let derivatives = Some(derivatives_of(&field.phi_hat));
    SharpenedField { derivatives, ..field }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Axis {
    Rows,
    Cols,
}

#[inline]
fn neighbours(g: &Grid<f64>, axis: Axis, a: usize, b: usize) -> ((usize, usize), (usize, usize)) {
    match axis {
        Axis::Rows => ((a.saturating_sub(1), b), ((a + 1).min(g.height() - 1), b)),
        Axis::Cols => ((a, b.saturating_sub(1)), (a, (b + 1).min(g.width() - 1))),
    }
}

fn central(g: &Grid<f64>, axis: Axis) -> Grid<f64> {
    Grid::from_fn(g.height(), g.width(), |a, b| {
        let (lo, hi) = neighbours(g, axis, a, b);
        0.5 * (g[hi] - g[lo])
    })
}

fn second(g: &Grid<f64>, axis: Axis) -> Grid<f64> {
    Grid::from_fn(g.height(), g.width(), |a, b| {
        let (lo, hi) = neighbours(g, axis, a, b);
        g[hi] - 2.0 * g[(a, b)] + g[lo]
    })
}

/// Adjoint of [`central`], accumulated into `acc`.
fn central_adjoint(upstream: &Grid<f64>, axis: Axis, acc: &mut Grid<f64>) {
    for a in 0..upstream.height() {
        for b in 0..upstream.width() {
            let g = 0.5 * upstream[(a, b)];
            let (lo, hi) = neighbours(upstream, axis, a, b);
            acc[hi] += g;
            acc[lo] -= g;
        }
    }
}

fn second_adjoint(upstream: &Grid<f64>, axis: Axis, acc: &mut Grid<f64>) {
    for a in 0..upstream.height() {
        for b in 0..upstream.width() {
            let g = upstream[(a, b)];
            let (lo, hi) = neighbours(upstream, axis, a, b);
            acc[hi] += g;
            acc[lo] += g;
            acc[(a, b)] -= 2.0 * g;
        }
    }
}

/// Central differences with replicate padding: `d_a` along rows, `d_b`
/// along columns, `d_ab` the column difference of `d_a`.
pub fn derivatives_of(f: &Grid<f64>) -> Derivatives {
    let d_a = central(f, Axis::Rows);
    let d_ab = central(&d_a, Axis::Cols);
    Derivatives {
        d_b: central(f, Axis::Cols),
        d_aa: second(f, Axis::Rows),
        d_bb: second(f, Axis::Cols),
        d_a,
        d_ab,
    }
}

/// Pulls gradients on the five derivative arrays back onto the field.
pub fn derivatives_adjoint(upstream: &Derivatives) -> Grid<f64> {
    let (h, w) = upstream.d_a.shape();
    let mut d_a_total = upstream.d_a.clone();
    central_adjoint(&upstream.d_ab, Axis::Cols, &mut d_a_total);
    let mut field = Grid::filled(h, w, 0.0);
    central_adjoint(&d_a_total, Axis::Rows, &mut field);
    central_adjoint(&upstream.d_b, Axis::Cols, &mut field);
    second_adjoint(&upstream.d_aa, Axis::Rows, &mut field);
    second_adjoint(&upstream.d_bb, Axis::Cols, &mut field);
    field
}

/// Curvature of the sharpened field, elementwise
/// `|(1+fa^2) fbb + (1+fb^2) faa - 2 fa fb fab| / (2 (1+fa^2+fb^2)^1.5)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvatureMap {
    pub k: Grid<f64>,
}

#[inline]
fn curvature_numerator(fa: f64, fb: f64, faa: f64, fbb: f64, fab: f64) -> f64 {
    (1.0 + fa * fa) * fbb + (1.0 + fb * fb) * faa - 2.0 * fa * fb * fab
}

pub fn curvature_of(d: &Derivatives) -> Grid<f64> {
    let (h, w) = d.d_a.shape();
    Grid::from_fn(h, w, |a, b| {
        let p = (a, b);
        let (fa, fb) = (d.d_a[p], d.d_b[p]);
        let num = curvature_numerator(fa, fb, d.d_aa[p], d.d_bb[p], d.d_ab[p]);
        let den = 1.0 + fa * fa + fb * fb;
        libm::fabs(num) / (2.0 * den * libm::sqrt(den))
    })
}

/// Curvature map; derivatives are computed first if the field lacks them.
pub fn curvature(field: &SharpenedField) -> CurvatureMap {
    let k = match &field.derivatives {
        Some(d) => curvature_of(d),
        None => curvature_of(&derivatives_of(&field.phi_hat)),
    };
    CurvatureMap { k }
}

/// Vector-Jacobian product of [`curvature_of`]: given `dL/dK`, returns
/// `dL/d(derivatives)`. At `numerator == 0` the subgradient 0 is used.
pub fn curvature_vjp(d: &Derivatives, upstream: &Grid<f64>) -> Derivatives {
    let (h, w) = d.d_a.shape();
    let mut out = Derivatives {
        d_a: Grid::filled(h, w, 0.0),
        d_b: Grid::filled(h, w, 0.0),
        d_aa: Grid::filled(h, w, 0.0),
        d_bb: Grid::filled(h, w, 0.0),
        d_ab: Grid::filled(h, w, 0.0),
    };
    for a in 0..h {
        for b in 0..w {
            let p = (a, b);
            let g = upstream[p];
            if g == 0.0 {
                continue;
            }
            let (fa, fb, faa, fbb, fab) = (d.d_a[p], d.d_b[p], d.d_aa[p], d.d_bb[p], d.d_ab[p]);
            let num = curvature_numerator(fa, fb, faa, fbb, fab);
            let den = 1.0 + fa * fa + fb * fb;
            let den15 = den * libm::sqrt(den);
            let sign = if num > 0.0 {
                1.0
            } else if num < 0.0 {
                -1.0
            } else {
                0.0
            };
            // K = |N| / (2 D^1.5)
            let dk_dn = g * sign / (2.0 * den15);
            let dk_dd = -g * 0.75 * libm::fabs(num) / (den15 * den);
            out.d_a[p] = dk_dn * (2.0 * fa * fbb - 2.0 * fb * fab) + dk_dd * 2.0 * fa;
            out.d_b[p] = dk_dn * (2.0 * fb * faa - 2.0 * fa * fab) + dk_dd * 2.0 * fb;
            out.d_aa[p] = dk_dn * (1.0 + fb * fb);
            out.d_bb[p] = dk_dn * (1.0 + fa * fa);
            out.d_ab[p] = dk_dn * (-2.0 * fa * fb);
        }
    }
    out
}
