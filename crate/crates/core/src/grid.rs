//! Row-major 2-D grid used for masks, level sets and derived fields.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Index, IndexMut};

use crate::{Error, Result};

/// Dense `height x width` array stored row-major. Index `(a, b)` is
/// `(row, column)`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Grid<T> {
    height: usize,
    width: usize,
    data: Vec<T>,
}

impl<T> Grid<T> {
    pub fn new(height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidValue("grid dimensions must be at least 1"));
        }
        if data.len() != height * width {
            return Err(Error::ShapeMismatch {
                expected: (height, width, 1),
                found: (data.len(), 1, 1),
            });
        }
        Ok(Self { height, width, data })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        assert!(height > 0 && width > 0, "grid dimensions must be at least 1");
        let mut data = Vec::with_capacity(height * width);
        for a in 0..height {
            for b in 0..width {
                data.push(f(a, b));
            }
        }
        Self { height, width, data }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn iter(&self) -> core::slice::Iter<'_, T> {
        self.data.iter()
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Grid<U> {
        Grid {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(f).collect(),
        }
    }
}

impl<T: Clone> Grid<T> {
    pub fn filled(height: usize, width: usize, value: T) -> Self {
        assert!(height > 0 && width > 0, "grid dimensions must be at least 1");
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    /// Mirror top to bottom.
    pub fn flip_rows(&self) -> Self {
        Self::from_fn(self.height, self.width, |a, b| {
            self[(self.height - 1 - a, b)].clone()
        })
    }

    /// Mirror left to right.
    pub fn flip_cols(&self) -> Self {
        Self::from_fn(self.height, self.width, |a, b| {
            self[(a, self.width - 1 - b)].clone()
        })
    }

    /// Rotate a quarter turn clockwise; the result is `width x height`.
    pub fn rotate90(&self) -> Self {
        let h = self.height;
        Self::from_fn(self.width, self.height, |a, b| self[(h - 1 - b, a)].clone())
    }
}

impl<T> Index<(usize, usize)> for Grid<T> {
    type Output = T;

    #[inline]
    fn index(&self, (a, b): (usize, usize)) -> &T {
        debug_assert!(a < self.height && b < self.width);
        &self.data[a * self.width + b]
    }
}

impl<T> IndexMut<(usize, usize)> for Grid<T> {
    #[inline]
    fn index_mut(&mut self, (a, b): (usize, usize)) -> &mut T {
        debug_assert!(a < self.height && b < self.width);
        &mut self.data[a * self.width + b]
    }
}
