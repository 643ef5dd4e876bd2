//! Uniform rectangular meshes of square bilinear cells.

use serde::{Deserialize, Serialize};

use super::PdeError;

/// Axis-aligned rectangle `[x0, x1] × [y0, y1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl Rect {
    pub fn new(x0: f64, x1: f64, y0: f64, y1: f64) -> Self {
        Self { x0, x1, y0, y1 }
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }
}

/// The four sides of a rectangle.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    Left,
    Right,
    Bottom,
    Top,
}

impl Side {
    pub const ALL: [Side; 4] = [Side::Left, Side::Right, Side::Bottom, Side::Top];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn opposite(self) -> Side {
        match self {
            Side::Left => Side::Right,
            Side::Right => Side::Left,
            Side::Bottom => Side::Top,
            Side::Top => Side::Bottom,
        }
    }
}

/// Tag carried by each boundary node. Corners are always exterior.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BoundaryTag {
    Interior,
    Exterior,
    Side(Side),
}

/// Structured mesh with node id `i * (ny + 1) + j` for column `i`, row `j`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mesh {
    pub rect: Rect,
    pub h: f64,
    pub nx: usize,
    pub ny: usize,
}

fn cells(len: f64, h: f64) -> Result<usize, PdeError> {
    let n = (len / h).round();
    if n < 1.0 || ((len / h) - n).abs() > 1e-9 * n.max(1.0) {
        return Err(PdeError::Mesh(format!("length {len} is not a multiple of h = {h}")));
    }
    Ok(n as usize)
}

impl Mesh {
    pub fn new(rect: Rect, h: f64) -> Result<Self, PdeError> {
        if !(h > 0.0) {
            return Err(PdeError::Mesh(format!("mesh size must be positive, got {h}")));
        }
        Ok(Self { rect, h, nx: cells(rect.width(), h)?, ny: cells(rect.height(), h)? })
    }

    pub fn num_nodes(&self) -> usize {
        (self.nx + 1) * (self.ny + 1)
    }

    pub fn num_elements(&self) -> usize {
        self.nx * self.ny
    }

    #[inline]
    pub fn node(&self, i: usize, j: usize) -> usize {
        i * (self.ny + 1) + j
    }

    #[inline]
    pub fn coords(&self, n: usize) -> [f64; 2] {
        let (i, j) = (n / (self.ny + 1), n % (self.ny + 1));
        [self.rect.x0 + i as f64 * self.h, self.rect.y0 + j as f64 * self.h]
    }

    pub fn nodes(&self) -> impl Iterator<Item = [f64; 2]> + '_ {
        (0..self.num_nodes()).map(|n| self.coords(n))
    }

    /// Element `(i, j)` has lower-left node `(i, j)`; corners counter-clockwise.
    #[inline]
    pub fn element_nodes(&self, i: usize, j: usize) -> [usize; 4] {
        [self.node(i, j), self.node(i + 1, j), self.node(i + 1, j + 1), self.node(i, j + 1)]
    }

    pub fn tag(&self, n: usize) -> BoundaryTag {
        let (i, j) = (n / (self.ny + 1), n % (self.ny + 1));
        let on_x = i == 0 || i == self.nx;
        let on_y = j == 0 || j == self.ny;
        match (on_x, on_y) {
            (true, true) => BoundaryTag::Exterior,
            (true, false) => BoundaryTag::Side(if i == 0 { Side::Left } else { Side::Right }),
            (false, true) => BoundaryTag::Side(if j == 0 { Side::Bottom } else { Side::Top }),
            (false, false) => BoundaryTag::Interior,
        }
    }

    /// Nodes strictly inside a side (corners excluded), in increasing coordinate order.
    pub fn side_nodes(&self, side: Side) -> Vec<usize> {
        match side {
            Side::Left => (1..self.ny).map(|j| self.node(0, j)).collect(),
            Side::Right => (1..self.ny).map(|j| self.node(self.nx, j)).collect(),
            Side::Bottom => (1..self.nx).map(|i| self.node(i, 0)).collect(),
            Side::Top => (1..self.nx).map(|i| self.node(i, self.ny)).collect(),
        }
    }

    /// The four corner nodes.
    pub fn corners(&self) -> [usize; 4] {
        [self.node(0, 0), self.node(self.nx, 0), self.node(self.nx, self.ny), self.node(0, self.ny)]
    }

    /// Node of the first interior layer next to `n` on `side`.
    pub fn inward_neighbor(&self, n: usize, side: Side) -> usize {
        match side {
            Side::Left => n + (self.ny + 1),
            Side::Right => n - (self.ny + 1),
            Side::Bottom => n + 1,
            Side::Top => n - 1,
        }
    }

    /// Tensor-product trapezoidal quadrature weights; they sum to the area.
    pub fn trapezoid_weights(&self) -> Vec<f64> {
        let w1 = |k: usize, n: usize| if k == 0 || k == n { 0.5 * self.h } else { self.h };
        (0..self.num_nodes())
            .map(|n| {
                let (i, j) = (n / (self.ny + 1), n % (self.ny + 1));
                w1(i, self.nx) * w1(j, self.ny)
            })
            .collect()
    }

    /// Index of the mesh line at coordinate `v` along an axis starting at `start`.
    pub(crate) fn grid_index(&self, v: f64, start: f64, n: usize) -> Option<usize> {
        let k = ((v - start) / self.h).round();
        if k < 0.0 || k > n as f64 || ((v - start) / self.h - k).abs() > 1e-9 {
            return None;
        }
        Some(k as usize)
    }
}
