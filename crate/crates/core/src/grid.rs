//! Row-major H×W grids backing masks, probability maps and images.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major grid. Pixel `(row, col)` lives at `row * width + col`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

/// Binary mask in {0,1}; houses the lesion mask, Q, C and derived regions.
pub type BinaryMask = Grid<bool>;
/// Per-pixel foreground probabilities in [0,1].
pub type ProbMap = Grid<f64>;
/// Windowed intensities in [0,1].
pub type SliceImage = Grid<f64>;

impl<T: Clone> Grid<T> {
    pub fn filled(width: usize, height: usize, value: T) -> Self {
        assert!(width >= 1 && height >= 1, "grid dims must be at least 1x1");
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::ShapeMismatch(format!(
                "grid dims must be at least 1x1, got {width}x{height}"
            )));
        }
        if data.len() != width * height {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {width}x{height} grid",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        assert!(width >= 1 && height >= 1, "grid dims must be at least 1x1");
        let mut data = Vec::with_capacity(width * height);
        for row in 0..height {
            for col in 0..width {
                data.push(f(row, col));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn map<U: Clone>(&self, f: impl FnMut(&T) -> U) -> Grid<U> {
        Grid {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(f).collect(),
        }
    }

    /// Mirror left-right.
    pub fn flip_horizontal(&self) -> Self {
        Self::from_fn(self.width, self.height, |r, c| {
            self.get(r, self.width - 1 - c).clone()
        })
    }

    /// Mirror top-bottom.
    pub fn flip_vertical(&self) -> Self {
        Self::from_fn(self.width, self.height, |r, c| {
            self.get(self.height - 1 - r, c).clone()
        })
    }
}

impl<T> Grid<T> {
    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    /// `(width, height)`.
    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
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
    pub fn get(&self, row: usize, col: usize) -> &T {
        &self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: T) {
        self.data[row * self.width + col] = value;
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

    pub fn check_same_dims<U>(&self, other: &Grid<U>) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::DimMismatch {
                left: self.dims(),
                right: other.dims(),
            });
        }
        Ok(())
    }
}

impl Grid<bool> {
    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    pub fn to_prob(&self) -> ProbMap {
        self.map(|&v| if v { 1.0 } else { 0.0 })
    }

    pub fn and(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a && b)
    }

    pub fn or(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a || b)
    }

    pub fn and_not(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a && !b)
    }

    pub fn not(&self) -> Self {
        self.map(|&v| !v)
    }

    /// `|self ∩ other|`.
    pub fn intersection_count(&self, other: &Self) -> Result<usize> {
        self.check_same_dims(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .filter(|(&a, &b)| a && b)
            .count())
    }

    fn zip_with(&self, other: &Self, f: impl Fn(bool, bool) -> bool) -> Result<Self> {
        self.check_same_dims(other)?;
        Ok(Grid {
            width: self.width,
            height: self.height,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }
}

impl Grid<f64> {
    /// Builds a map whose values must lie in [0,1].
    pub fn unit_from_vec(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::ShapeMismatch(format!(
                "value {v} outside [0,1]"
            )));
        }
        Self::from_vec(width, height, data)
    }

    /// Pixelwise `value >= threshold`.
    pub fn threshold(&self, threshold: f64) -> BinaryMask {
        self.map(|&v| v >= threshold)
    }
}
