//! Uniform square grids and grid-sampled fields.

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::geometry::Point;

/// Smallest admissible number of nodes per side.
pub const MIN_RESOLUTION: usize = 33;

/// An `m x m` node grid covering `[-L, L]^2`.
///
/// Nodes are stored row-major: index `row * m + col`, where `col` runs
/// along `x` and `row` along `y`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid2D {
    half_width: f64,
    m: usize,
}

impl Grid2D {
    pub fn new(half_width: f64, m: usize) -> Result<Self> {
        if !(half_width > 0.0 && half_width.is_finite()) {
            return Err(LabError::domain(format!(
                "grid half-width must be positive, got {half_width}"
            )));
        }
        if m < MIN_RESOLUTION {
            return Err(LabError::domain(format!(
                "grid resolution must be at least {MIN_RESOLUTION}, got {m}"
            )));
        }
        Ok(Grid2D { half_width, m })
    }

    #[inline]
    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    #[inline]
    pub fn resolution(&self) -> usize {
        self.m
    }

    #[inline]
    pub fn spacing(&self) -> f64 {
        2.0 * self.half_width / (self.m - 1) as f64
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.m * self.m
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn index(&self, col: usize, row: usize) -> usize {
        row * self.m + col
    }

    #[inline]
    pub fn col_row(&self, idx: usize) -> (usize, usize) {
        (idx % self.m, idx / self.m)
    }

    #[inline]
    pub fn coord(&self, k: usize) -> f64 {
        -self.half_width + k as f64 * self.spacing()
    }

    #[inline]
    pub fn node(&self, col: usize, row: usize) -> Point {
        Point::new(self.coord(col), self.coord(row))
    }

    #[inline]
    pub fn node_at(&self, idx: usize) -> Point {
        let (c, r) = self.col_row(idx);
        self.node(c, r)
    }

    #[inline]
    pub fn is_boundary(&self, col: usize, row: usize) -> bool {
        col == 0 || row == 0 || col == self.m - 1 || row == self.m - 1
    }

    pub fn contains(&self, p: Point) -> bool {
        p.x.abs() <= self.half_width && p.y.abs() <= self.half_width
    }

    /// Index of the node nearest to `p`, if `p` lies in the box.
    pub fn nearest(&self, p: Point) -> Option<usize> {
        if !self.contains(p) {
            return None;
        }
        let h = self.spacing();
        let c = (((p.x + self.half_width) / h).round() as usize).min(self.m - 1);
        let r = (((p.y + self.half_width) / h).round() as usize).min(self.m - 1);
        Some(self.index(c, r))
    }

    /// Lower-left cell corner and local coordinates in `[0, 1]^2`.
    pub fn locate(&self, p: Point) -> Option<(usize, usize, f64, f64)> {
        if !self.contains(p) {
            return None;
        }
        let h = self.spacing();
        let sx = (p.x + self.half_width) / h;
        let sy = (p.y + self.half_width) / h;
        let c = (sx.floor() as usize).min(self.m - 2);
        let r = (sy.floor() as usize).min(self.m - 2);
        Some((c, r, sx - c as f64, sy - r as f64))
    }

    /// The four 4-neighbours of an interior node (left, right, down, up).
    #[inline]
    pub fn neighbours(&self, idx: usize) -> [usize; 4] {
        [idx - 1, idx + 1, idx - self.m, idx + self.m]
    }

    pub fn nodes(&self) -> impl Iterator<Item = Point> + '_ {
        (0..self.len()).map(move |k| self.node_at(k))
    }

    /// Samples a function at every node.
    pub fn sample<F: Fn(Point) -> f64>(&self, f: F) -> ScalarField {
        ScalarField {
            grid: *self,
            values: self.nodes().map(f).collect(),
        }
    }
}

/// A scalar function sampled on a [`Grid2D`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalarField {
    pub grid: Grid2D,
    pub values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: Grid2D, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(LabError::domain(format!(
                "field has {} values for a grid of {} nodes",
                values.len(),
                grid.len()
            )));
        }
        Ok(ScalarField { grid, values })
    }

    pub fn zeros(grid: Grid2D) -> Self {
        ScalarField {
            grid,
            values: vec![0.0; grid.len()],
        }
    }

    #[inline]
    pub fn at(&self, col: usize, row: usize) -> f64 {
        self.values[self.grid.index(col, row)]
    }

    /// Bilinear interpolation; `None` outside the box.
    pub fn interpolate(&self, p: Point) -> Option<f64> {
        let (c, r, u, v) = self.grid.locate(p)?;
        let f00 = self.at(c, r);
        let f10 = self.at(c + 1, r);
        let f01 = self.at(c, r + 1);
        let f11 = self.at(c + 1, r + 1);
        Some(f00 + u * (f10 - f00) + v * (f01 - f00) + u * v * (f11 - f10 - f01 + f00))
    }

    /// Five-point discrete Laplacian at an interior node.
    #[inline]
    pub fn laplacian_at(&self, idx: usize) -> f64 {
        let h = self.grid.spacing();
        let [l, r, d, u] = self.grid.neighbours(idx);
        let v = &self.values;
        (v[l] + v[r] + v[d] + v[u] - 4.0 * v[idx]) / (h * h)
    }

    /// Centred-difference gradient (one-sided on the outer ring).
    pub fn gradient_at(&self, col: usize, row: usize) -> [f64; 2] {
        let m = self.grid.resolution();
        let h = self.grid.spacing();
        let d = |a: f64, b: f64, span: f64| (b - a) / span;
        let gx = if col == 0 {
            d(self.at(0, row), self.at(1, row), h)
        } else if col == m - 1 {
            d(self.at(m - 2, row), self.at(m - 1, row), h)
        } else {
            d(self.at(col - 1, row), self.at(col + 1, row), 2.0 * h)
        };
        let gy = if row == 0 {
            d(self.at(col, 0), self.at(col, 1), h)
        } else if row == m - 1 {
            d(self.at(col, m - 2), self.at(col, m - 1), h)
        } else {
            d(self.at(col, row - 1), self.at(col, row + 1), 2.0 * h)
        };
        [gx, gy]
    }
}

/// A planar vector field sampled on a [`Grid2D`].
#[derive(Clone, Debug, PartialEq)]
pub struct VectorField {
    pub grid: Grid2D,
    pub values: Vec<[f64; 2]>,
}

impl VectorField {
    pub fn zeros(grid: Grid2D) -> Self {
        VectorField {
            grid,
            values: vec![[0.0; 2]; grid.len()],
        }
    }

    pub fn interpolate(&self, p: Point) -> Option<[f64; 2]> {
        let (c, r, u, v) = self.grid.locate(p)?;
        let g = &self.grid;
        let f = |cc, rr| self.values[g.index(cc, rr)];
        let (a, b, cq, d) = (f(c, r), f(c + 1, r), f(c, r + 1), f(c + 1, r + 1));
        let lerp = |k: usize| a[k] + u * (b[k] - a[k]) + v * (cq[k] - a[k]) + u * v * (d[k] - b[k] - cq[k] + a[k]);
        Some([lerp(0), lerp(1)])
    }
}
