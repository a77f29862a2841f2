//! Dense `N x C x H x W` f32 tensor.

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self {
            n,
            c,
            h,
            w,
            data: vec![0.0; n * c * h * w],
        }
    }

    pub fn from_vec(n: usize, c: usize, h: usize, w: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), n * c * h * w, "tensor data length");
        Self { n, c, h, w, data }
    }

    #[inline]
    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    #[inline]
    pub fn sample_len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn shape(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }

    pub fn sample(&self, i: usize) -> &[f32] {
        let s = self.sample_len();
        &self.data[i * s..(i + 1) * s]
    }

    pub fn sample_mut(&mut self, i: usize) -> &mut [f32] {
        let s = self.sample_len();
        &mut self.data[i * s..(i + 1) * s]
    }

    /// Single item `i` as a batch of one.
    pub fn item(&self, i: usize) -> Tensor {
        Tensor::from_vec(1, self.c, self.h, self.w, self.sample(i).to_vec())
    }

    pub fn stack(items: &[Tensor]) -> Tensor {
        let first = &items[0];
        let mut data = Vec::with_capacity(items.len() * first.sample_len());
        for t in items {
            assert_eq!((t.c, t.h, t.w), (first.c, first.h, first.w), "stack shape");
            data.extend_from_slice(&t.data);
        }
        let n = items.iter().map(|t| t.n).sum();
        Tensor::from_vec(n, first.c, first.h, first.w, data)
    }

    /// Concatenates along channels.
    pub fn concat_channels(a: &Tensor, b: &Tensor) -> Tensor {
        assert_eq!((a.n, a.h, a.w), (b.n, b.h, b.w), "concat shape");
        let mut data = Vec::with_capacity(a.data.len() + b.data.len());
        for i in 0..a.n {
            data.extend_from_slice(a.sample(i));
            data.extend_from_slice(b.sample(i));
        }
        Tensor::from_vec(a.n, a.c + b.c, a.h, a.w, data)
    }

    /// Inverse of [`Tensor::concat_channels`]: the first `left` channels and the rest.
    pub fn split_channels(&self, left: usize) -> (Tensor, Tensor) {
        let p = self.plane();
        let (mut a, mut b) = (Vec::with_capacity(self.n * left * p), Vec::new());
        for i in 0..self.n {
            let s = self.sample(i);
            a.extend_from_slice(&s[..left * p]);
            b.extend_from_slice(&s[left * p..]);
        }
        (
            Tensor::from_vec(self.n, left, self.h, self.w, a),
            Tensor::from_vec(self.n, self.c - left, self.h, self.w, b),
        )
    }

    /// Top-left `h x w` window.
    pub fn crop(&self, h: usize, w: usize) -> Tensor {
        if (h, w) == (self.h, self.w) {
            return self.clone();
        }
        assert!(h <= self.h && w <= self.w, "crop larger than tensor");
        let mut out = Tensor::zeros(self.n, self.c, h, w);
        for nc in 0..self.n * self.c {
            for a in 0..h {
                let src = nc * self.plane() + a * self.w;
                let dst = nc * h * w + a * w;
                out.data[dst..dst + w].copy_from_slice(&self.data[src..src + w]);
            }
        }
        out
    }

    /// Zero-pads bottom/right to `h x w`; adjoint of [`Tensor::crop`].
    pub fn pad_to(&self, h: usize, w: usize) -> Tensor {
        if (h, w) == (self.h, self.w) {
            return self.clone();
        }
        let mut out = Tensor::zeros(self.n, self.c, h, w);
        for nc in 0..self.n * self.c {
            for a in 0..self.h {
                let src = nc * self.plane() + a * self.w;
                let dst = nc * h * w + a * w;
                out.data[dst..dst + self.w].copy_from_slice(&self.data[src..src + self.w]);
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
