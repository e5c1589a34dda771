//! Dense row-major H×W grids shared by depth maps, flow fields and masks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A dense `height × width` grid stored row-major. Pixel `(u, v)` is column
/// `u`, row `v`; integer coordinates are pixel centres.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

/// Per-pixel validity. `true` marks a pixel that carries a meaningful value.
pub type Mask = Grid<bool>;

impl<T: Clone> Grid<T> {
    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }
}

impl<T> Grid<T> {
    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
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

    /// Builds a grid by evaluating `f(u, v)` at every pixel.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for v in 0..height {
            for u in 0..width {
                data.push(f(u, v));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn same_shape<U>(&self, other: &Grid<U>) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn get(&self, u: usize, v: usize) -> &T {
        &self.data[v * self.width + u]
    }

    pub fn get_mut(&mut self, u: usize, v: usize) -> &mut T {
        &mut self.data[v * self.width + u]
    }

    pub fn set(&mut self, u: usize, v: usize, value: T) {
        self.data[v * self.width + u] = value;
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    /// Iterates `(u, v, &value)` in row-major order.
    pub fn indexed(&self) -> impl Iterator<Item = (usize, usize, &T)> + '_ {
        let w = self.width;
        self.data
            .iter()
            .enumerate()
            .map(move |(i, x)| (i % w, i / w, x))
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Grid<U> {
        Grid {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(f).collect(),
        }
    }
}

impl<T: Send> Grid<T> {
    /// Row-parallel construction. Every pixel is computed independently, so
    /// the result does not depend on scheduling.
    pub fn par_from_fn(
        width: usize,
        height: usize,
        f: impl Fn(usize, usize) -> T + Sync + Send,
    ) -> Self {
        use rayon::prelude::*;
        let rows: Vec<Vec<T>> = (0..height)
            .into_par_iter()
            .map(|v| (0..width).map(|u| f(u, v)).collect())
            .collect();
        Self {
            width,
            height,
            data: rows.into_iter().flatten().collect(),
        }
    }
}

impl Mask {
    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn and(&self, other: &Mask) -> Result<Mask> {
        if !self.same_shape(other) {
            return Err(Error::DimensionMismatch("mask shapes differ".into()));
        }
        Ok(Grid {
            width: self.width,
            height: self.height,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| a && b)
                .collect(),
        })
    }

    /// True when every pixel valid in `self` is also valid in `other`.
    pub fn is_subset_of(&self, other: &Mask) -> bool {
        self.same_shape(other) && self.data.iter().zip(&other.data).all(|(&a, &b)| !a || b)
    }
}

/// Bilinear sample of a scalar grid at a fractional pixel position. Returns
/// `None` outside `[0, w-1] × [0, h-1]`.
pub fn bilinear(grid: &Grid<f64>, x: f64, y: f64) -> Option<f64> {
    let (w, h) = (grid.width(), grid.height());
    if !(x >= 0.0 && y >= 0.0 && x <= (w - 1) as f64 && y <= (h - 1) as f64) {
        return None;
    }
    let x0 = (x.floor() as usize).min(w.saturating_sub(2));
    let y0 = (y.floor() as usize).min(h.saturating_sub(2));
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let ax = x - x0 as f64;
    let ay = y - y0 as f64;
    let top = (1.0 - ax) * grid.get(x0, y0) + ax * grid.get(x1, y0);
    let bottom = (1.0 - ax) * grid.get(x0, y1) + ax * grid.get(x1, y1);
    Some((1.0 - ay) * top + ay * bottom)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bilinear_reproduces_affine_functions() {
        let g = Grid::from_fn(7, 5, |u, v| 2.0 * u as f64 - 3.0 * v as f64 + 1.0);
        for &(x, y) in &[(0.0, 0.0), (3.25, 1.5), (6.0, 4.0), (5.999, 0.001)] {
            let s = bilinear(&g, x, y).unwrap();
            assert!((s - (2.0 * x - 3.0 * y + 1.0)).abs() < 1e-12);
        }
        assert!(bilinear(&g, -0.01, 1.0).is_none());
        assert!(bilinear(&g, 1.0, 4.0001).is_none());
    }

    #[test]
    fn integer_positions_gather_exactly() {
        let g = Grid::from_fn(4, 3, |u, v| (u * 10 + v) as f64 + 0.123);
        for v in 0..3 {
            for u in 0..4 {
                assert_eq!(bilinear(&g, u as f64, v as f64).unwrap(), *g.get(u, v));
            }
        }
    }

    #[test]
    fn par_from_fn_matches_sequential() {
        let f = |u: usize, v: usize| ((u * 31 + v * 17) as f64).sin();
        assert_eq!(Grid::par_from_fn(33, 9, f), Grid::from_fn(33, 9, f));
    }
}
