//! Dense row-major rasters and binary masks shared by every module.
//!
//! Pixel convention throughout the crate: zero-based, `x` is the column,
//! `y` is the row, and a pixel's center sits at its integer coordinates.
//! Storage is row-major, index `y * width + x`, so iterating rows outer /
//! columns inner visits pixels in raster-scan order.

use crate::error::{ensure_same_dims, Error, Result};

/// Owned `height x width` raster of `T`.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

impl<T> Grid<T> {
    /// Wraps an existing row-major buffer; `data.len()` must equal `width * height`.
    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::InvalidInput(format!(
                "raster buffer holds {} elements, expected {}x{} = {}",
                data.len(),
                width,
                height,
                width * height
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    fn index(&self, x: usize, y: usize) -> usize {
        debug_assert!(x < self.width && y < self.height);
        y * self.width + x
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> &T {
        &self.data[self.index(x, y)]
    }

    #[inline]
    pub fn at_mut(&mut self, x: usize, y: usize) -> &mut T {
        let i = self.index(x, y);
        &mut self.data[i]
    }

    pub fn try_at(&self, x: usize, y: usize) -> Option<&T> {
        if x < self.width && y < self.height {
            Some(&self.data[y * self.width + x])
        } else {
            None
        }
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    /// Raster-scan iteration: `(x, y, &value)` with `y` outer, `x` inner.
    pub fn enumerate(&self) -> impl Iterator<Item = (usize, usize, &T)> {
        let w = self.width;
        self.data
            .iter()
            .enumerate()
            .map(move |(i, v)| (i % w, i / w, v))
    }
}

impl<T: Clone> Grid<T> {
    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
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
}

impl Grid<f64> {
    /// True if every entry is finite.
    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Binary `{0,1}` raster. Used for validity, non-occlusion, moving-region,
/// and alignment-region masks.
#[derive(Clone, Debug, PartialEq)]
pub struct Mask {
    grid: Grid<bool>,
}

impl Mask {
    pub fn all_true(width: usize, height: usize) -> Self {
        Self {
            grid: Grid::filled(width, height, true),
        }
    }

    pub fn all_false(width: usize, height: usize) -> Self {
        Self {
            grid: Grid::filled(width, height, false),
        }
    }

    pub fn from_grid(grid: Grid<bool>) -> Self {
        Self { grid }
    }

    pub fn from_fn(width: usize, height: usize, f: impl FnMut(usize, usize) -> bool) -> Self {
        Self {
            grid: Grid::from_fn(width, height, f),
        }
    }

    pub fn width(&self) -> usize {
        self.grid.width()
    }

    pub fn height(&self) -> usize {
        self.grid.height()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.grid.dims()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        *self.grid.at(x, y)
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        *self.grid.at_mut(x, y) = value;
    }

    pub fn count(&self) -> usize {
        self.grid.as_slice().iter().filter(|&&b| b).count()
    }

    /// Elementwise AND; rasters must agree on size.
    pub fn and(&self, other: &Mask) -> Mask {
        assert_eq!(self.dims(), other.dims(), "mask size mismatch in and()");
        Mask {
            grid: Grid::from_fn(self.width(), self.height(), |x, y| {
                self.get(x, y) && other.get(x, y)
            }),
        }
    }

    /// Elementwise OR; rasters must agree on size.
    pub fn or(&self, other: &Mask) -> Mask {
        assert_eq!(self.dims(), other.dims(), "mask size mismatch in or()");
        Mask {
            grid: Grid::from_fn(self.width(), self.height(), |x, y| {
                self.get(x, y) || other.get(x, y)
            }),
        }
    }

    pub fn not(&self) -> Mask {
        Mask {
            grid: self.grid.map(|&b| !b),
        }
    }

    /// True where `self` is set only where `other` is also set.
    pub fn is_subset_of(&self, other: &Mask) -> bool {
        assert_eq!(self.dims(), other.dims(), "mask size mismatch in subset");
        self.grid
            .as_slice()
            .iter()
            .zip(other.grid.as_slice())
            .all(|(&a, &b)| !a || b)
    }

    /// `{0,1}` weights as `f64`, for use as a loss weight raster.
    pub fn to_weights(&self) -> Grid<f64> {
        self.grid.map(|&b| if b { 1.0 } else { 0.0 })
    }

    pub fn as_grid(&self) -> &Grid<bool> {
        &self.grid
    }
}

/// Checks a raster against reference dimensions, naming the pair on error.
pub(crate) fn check_dims(context: &str, expected: (usize, usize), actual: (usize, usize)) -> Result<()> {
    ensure_same_dims(context, expected, actual)
}
