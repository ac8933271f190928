//! Image container and the column-major vectorization convention.
//!
//! An `r x s` image `X` is stored as the vector `x` with `x[i] = X[k, l]`,
//! `i = l * r + k` (zero-based). Every operator in the crate works on this
//! flat layout; the 2D view is only needed by the difference stencils, the
//! FFT and the file formats.

use crate::error::{check_len, Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::DimensionMismatch {
                expected: "positive rows and cols".into(),
                got: format!("{rows}x{cols}"),
            });
        }
        check_len(rows * cols, data.len())?;
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 0.0)
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        assert!(rows > 0 && cols > 0, "image dimensions must be positive");
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    /// Builds an image from `f(row, col)` (zero-based).
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(rows > 0 && cols > 0, "image dimensions must be positive");
        let mut data = Vec::with_capacity(rows * cols);
        for l in 0..cols {
            for k in 0..rows {
                data.push(f(k, l));
            }
        }
        Self { rows, cols, data }
    }

    /// Reshapes a column-major vector into an `rows x cols` image.
    pub fn from_vector(v: Vec<f64>, rows: usize, cols: usize) -> Result<Self> {
        Self::new(rows, cols, v)
    }

    pub fn to_vector(&self) -> Vec<f64> {
        self.data.clone()
    }

    pub fn into_vector(self) -> Vec<f64> {
        self.data
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize) -> usize {
        col * self.rows + row
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[self.index(row, col)]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        let i = self.index(row, col);
        self.data[i] = value;
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn norm(&self) -> f64 {
        crate::ops::norm(&self.data)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        self.map(|v| v * factor)
    }

    /// Returns a copy with dimensions checked against `other`.
    pub fn check_same_shape(&self, other: &Image) -> Result<()> {
        if self.shape() == other.shape() {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                expected: format!("{}x{}", self.rows, self.cols),
                got: format!("{}x{}", other.rows, other.cols),
            })
        }
    }

    /// Divides by the largest intensity so that the maximum becomes exactly 1.
    /// Returns the scaled image and the original maximum.
    pub fn scale_to_unit_max(&self) -> Result<(Image, f64)> {
        let max = self.max();
        if !(max > 0.0) {
            return Err(Error::ZeroImage);
        }
        Ok((self.map(|v| v / max), max))
    }
}

/// Periodic neighbour lookup on an `rows x cols` grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PixelIndexMap {
    pub rows: usize,
    pub cols: usize,
}

impl PixelIndexMap {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self { rows, cols }
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize) -> usize {
        col * self.rows + row
    }

    /// (row, col) of the flat index `i`.
    #[inline]
    pub fn position(&self, i: usize) -> (usize, usize) {
        (i % self.rows, i / self.rows)
    }

    #[inline]
    pub fn next_row(&self, row: usize) -> usize {
        if row + 1 == self.rows {
            0
        } else {
            row + 1
        }
    }

    #[inline]
    pub fn next_col(&self, col: usize) -> usize {
        if col + 1 == self.cols {
            0
        } else {
            col + 1
        }
    }

    /// Flat index of the pixel below (`k+1`, wrapping).
    #[inline]
    pub fn down(&self, i: usize) -> usize {
        let (k, l) = self.position(i);
        self.index(self.next_row(k), l)
    }

    /// Flat index of the pixel to the right (`l+1`, wrapping).
    #[inline]
    pub fn right(&self, i: usize) -> usize {
        let n = self.rows * self.cols;
        let j = i + self.rows;
        if j >= n {
            j - n
        } else {
            j
        }
    }
}
