//! Minimal CPU layers with explicit forward/backward passes.
//!
//! Each trainable layer caches what its backward pass needs when called
//! with `train = true` and accumulates parameter gradients into its
//! [`Param`]s. Matrix products go through `matrixmultiply::sgemm`.

pub mod conv;
pub mod norm;
pub mod resize;
pub mod transformer;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

/// A named parameter tensor with its gradient accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<f32>,
    pub grad: Vec<f32>,
}

impl Param {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, value: Vec<f32>) -> Self {
        let len = shape.iter().product();
        assert_eq!(value.len(), len, "param length");
        Self {
            name: name.into(),
            shape,
            grad: vec![0.0; len],
            value,
        }
    }

    pub fn constant(name: impl Into<String>, shape: Vec<usize>, v: f32) -> Self {
        let len = shape.iter().product();
        Self::new(name, shape, vec![v; len])
    }

    /// Normal(0, std) values from a stream keyed by `(seed, name)`, so
    /// adding or removing other parameters never shifts this one.
    pub fn normal(name: impl Into<String>, shape: Vec<usize>, std: f32, seed: u64) -> Self {
        let name = name.into();
        let mut rng = keyed_rng(seed, &["param", &name]);
        let dist = Normal::new(0.0f32, std).expect("finite std");
        let len = shape.iter().product();
        let value = (0..len).map(|_| dist.sample(&mut rng)).collect();
        Self::new(name, shape, value)
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }
}

/// Deterministic RNG derived from a seed and a list of string tags.
pub fn keyed_rng(seed: u64, tags: &[&str]) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    for t in tags {
        h.update((t.len() as u64).to_le_bytes());
        h.update(t.as_bytes());
    }
    let digest: [u8; 32] = h.finalize().into();
    ChaCha8Rng::from_seed(digest)
}

/// SHA-256 over the little-endian bytes of a set of parameters.
pub fn checksum<'a>(params: impl IntoIterator<Item = &'a Param>) -> String {
    let mut h = Sha256::new();
    for p in params {
        h.update(p.name.as_bytes());
        for v in &p.value {
            h.update(v.to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

/// `c = a * b + beta * c` for row-major matrices. `a` is `m x k` (stored
/// `k x m` when `trans_a`), `b` is `k x n` (stored `n x k` when `trans_b`).
#[allow(clippy::too_many_arguments)]
pub fn gemm(m: usize, k: usize, n: usize, a: &[f32], trans_a: bool, b: &[f32], trans_b: bool, beta: f32, c: &mut [f32]) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n, "gemm operand sizes");
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the bounds above cover every index reachable from these strides.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
