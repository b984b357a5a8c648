// SPDX-License-Identifier: Apache-2.0

//! Plain 2-D grids used by the layout and lithography code.

use crate::error::{Error, Result};

/// A 2-D grid stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid<T> {
    height: usize,
    width: usize,
    data: Vec<T>,
}

/// Binary layout or resist image: every cell is 0 or 1.
pub type Bitmap = Grid<u8>;

/// Real-valued grid (aerial intensity, displacement components).
pub type Field = Grid<f64>;

impl<T: Copy + Default> Grid<T> {
    pub fn new(height: usize, width: usize) -> Self {
        Self { height, width, data: vec![T::default(); height * width] }
    }

    pub fn filled(height: usize, width: usize, v: T) -> Self {
        Self { height, width, data: vec![v; height * width] }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Shape(format!(
                "grid {height}x{width} needs {} cells, got {}",
                height * width,
                data.len()
            )));
        }
        Ok(Self { height, width, data })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
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

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> T {
        self.data[y * self.width + x]
    }

    /// Value at signed coordinates, or `None` outside the grid.
    #[inline]
    pub fn get_signed(&self, y: isize, x: isize) -> Option<T> {
        if y < 0 || x < 0 || y >= self.height as isize || x >= self.width as isize {
            None
        } else {
            Some(self.data[y as usize * self.width + x as usize])
        }
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: T) {
        self.data[y * self.width + x] = v;
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn row(&self, y: usize) -> &[T] {
        &self.data[y * self.width..(y + 1) * self.width]
    }

    /// Copy of the window `[y0, y0+h) x [x0, x0+w)`.
    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Self {
        assert!(y0 + h <= self.height && x0 + w <= self.width, "crop outside grid");
        let mut data = Vec::with_capacity(h * w);
        for y in y0..y0 + h {
            data.extend_from_slice(&self.data[y * self.width + x0..y * self.width + x0 + w]);
        }
        Self { height: h, width: w, data }
    }

    pub fn map<U: Copy + Default>(&self, f: impl Fn(T) -> U) -> Grid<U> {
        Grid { height: self.height, width: self.width, data: self.data.iter().map(|&v| f(v)).collect() }
    }
}

impl Bitmap {
    pub fn count_ones(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    pub fn is_binary(&self) -> bool {
        self.data.iter().all(|&v| v <= 1)
    }

    pub fn fill_fraction(&self) -> f64 {
        if self.data.is_empty() {
            0.0
        } else {
            self.count_ones() as f64 / self.data.len() as f64
        }
    }

    /// Foreground pixel with at least one 4-neighbour that is background or outside.
    pub fn is_contour(&self, y: usize, x: usize) -> bool {
        if self.get(y, x) == 0 {
            return false;
        }
        let (y, x) = (y as isize, x as isize);
        [(-1, 0), (1, 0), (0, -1), (0, 1)]
            .iter()
            .any(|&(dy, dx)| self.get_signed(y + dy, x + dx).unwrap_or(0) == 0)
    }

    pub fn contour_pixels(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for y in 0..self.height {
            for x in 0..self.width {
                if self.is_contour(y, x) {
                    out.push((y, x));
                }
            }
        }
        out
    }

    /// Fraction of cells where two bitmaps agree.
    pub fn agreement(&self, other: &Bitmap) -> f64 {
        assert_eq!(self.dims(), other.dims());
        let same = self.data.iter().zip(&other.data).filter(|(a, b)| a == b).count();
        same as f64 / self.data.len().max(1) as f64
    }
}

impl Field {
    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            0.0
        } else {
            self.data.iter().sum::<f64>() / self.data.len() as f64
        }
    }
}
