//! Uniform Cartesian grids on axis-aligned boxes.
//!
//! Nodes are numbered row-major with the x axis slowest:
//! `index = (ix * ny + iy) * nz + iz` (with `nz = 1` in 2D).

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest node count per axis; one-sided second-order stencils and the
/// two constrained boundary layers both need room.
pub const MIN_NODES: usize = 5;

/// A boundary face of the box, identified by its axis and side.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Face {
    pub axis: usize,
    /// `true` for the face at the upper end of the axis.
    pub high: bool,
}

impl Face {
    pub fn id(self) -> usize {
        2 * self.axis + usize::from(self.high)
    }

    pub fn from_id(id: usize) -> Self {
        Face {
            axis: id / 2,
            high: id % 2 == 1,
        }
    }

    /// Sign of the outward normal along `axis`.
    pub fn sign(self) -> f64 {
        if self.high {
            1.0
        } else {
            -1.0
        }
    }

    pub fn normal(self, dim: usize) -> [f64; 3] {
        let mut n = [0.0; 3];
        debug_assert!(self.axis < dim);
        n[self.axis] = self.sign();
        n
    }

    pub fn name(self) -> &'static str {
        match (self.axis, self.high) {
            (0, false) => "x-",
            (0, true) => "x+",
            (1, false) => "y-",
            (1, true) => "y+",
            (2, false) => "z-",
            _ => "z+",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    dim: usize,
    shape: [usize; 3],
    spacing: [f64; 3],
    origin: [f64; 3],
}

impl Grid {
    /// Grid with the given per-axis node counts and spacings, origin at zero.
    pub fn new(shape: &[usize], spacing: &[f64]) -> Result<Self> {
        Self::with_origin(shape, spacing, &[0.0; 3][..shape.len().min(3)])
    }

    pub fn with_origin(shape: &[usize], spacing: &[f64], origin: &[f64]) -> Result<Self> {
        let dim = shape.len();
        if !(2..=3).contains(&dim) {
            return Err(Error::InvalidGrid(format!("dimension {dim} is not 2 or 3")));
        }
        if spacing.len() != dim || origin.len() != dim {
            return Err(Error::InvalidGrid(format!(
                "shape has {dim} axes but spacing has {} and origin {}",
                spacing.len(),
                origin.len()
            )));
        }
        let mut g = Grid {
            dim,
            shape: [1; 3],
            spacing: [1.0; 3],
            origin: [0.0; 3],
        };
        for d in 0..dim {
            if shape[d] < MIN_NODES {
                return Err(Error::InvalidGrid(format!(
                    "axis {d} has {} nodes, need at least {MIN_NODES}",
                    shape[d]
                )));
            }
            if !(spacing[d].is_finite() && spacing[d] > 0.0) {
                return Err(Error::InvalidGrid(format!(
                    "axis {d} spacing {} is not strictly positive",
                    spacing[d]
                )));
            }
            if !origin[d].is_finite() {
                return Err(Error::InvalidGrid(format!("axis {d} origin is not finite")));
            }
            g.shape[d] = shape[d];
            g.spacing[d] = spacing[d];
            g.origin[d] = origin[d];
        }
        Ok(g)
    }

    /// Grid covering the unit square or cube.
    pub fn unit(shape: &[usize]) -> Result<Self> {
        let spacing: Vec<f64> = shape
            .iter()
            .map(|&n| 1.0 / (n.max(2) - 1) as f64)
            .collect();
        Self::new(shape, &spacing)
    }

    pub fn unit_square(n: usize) -> Result<Self> {
        Self::unit(&[n, n])
    }

    pub fn unit_cube(n: usize) -> Result<Self> {
        Self::unit(&[n, n, n])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape[..self.dim]
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing[..self.dim]
    }

    pub fn origin(&self) -> &[f64] {
        &self.origin[..self.dim]
    }

    pub fn n(&self, axis: usize) -> usize {
        self.shape[axis]
    }

    pub fn h(&self, axis: usize) -> f64 {
        self.spacing[axis]
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Linear-index stride of `axis`.
    pub fn stride(&self, axis: usize) -> usize {
        self.shape[axis + 1..].iter().product()
    }

    pub fn index(&self, ix: [usize; 3]) -> usize {
        (ix[0] * self.shape[1] + ix[1]) * self.shape[2] + ix[2]
    }

    pub fn multi_index(&self, idx: usize) -> [usize; 3] {
        let iz = idx % self.shape[2];
        let rest = idx / self.shape[2];
        [rest / self.shape[1], rest % self.shape[1], iz]
    }

    pub fn coords(&self, idx: usize) -> [f64; 3] {
        let m = self.multi_index(idx);
        let mut p = [0.0; 3];
        for d in 0..self.dim {
            p[d] = self.origin[d] + m[d] as f64 * self.spacing[d];
        }
        p
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing().iter().product()
    }

    /// Trapezoidal quadrature weight of a node (exact for multilinear integrands).
    pub fn quadrature_weight(&self, idx: usize) -> f64 {
        let m = self.multi_index(idx);
        let mut w = self.cell_volume();
        for d in 0..self.dim {
            if m[d] == 0 || m[d] == self.shape[d] - 1 {
                w *= 0.5;
            }
        }
        w
    }

    /// Distance in nodes to the nearest boundary face: 0 on the boundary,
    /// 1 on the first interior ring, and so on.
    pub fn layer(&self, idx: usize) -> usize {
        let m = self.multi_index(idx);
        (0..self.dim)
            .map(|d| m[d].min(self.shape[d] - 1 - m[d]))
            .min()
            .unwrap_or(0)
    }

    pub fn is_boundary(&self, idx: usize) -> bool {
        self.layer(idx) == 0
    }

    pub fn faces(&self) -> impl Iterator<Item = Face> {
        let dim = self.dim;
        (0..2 * dim).map(Face::from_id)
    }

    pub fn face_count(&self) -> usize {
        2 * self.dim
    }

    /// Axes tangential to `face`.
    pub fn tangential_axes(&self, face: Face) -> impl Iterator<Item = usize> {
        let dim = self.dim;
        (0..dim).filter(move |&d| d != face.axis)
    }

    pub fn face_len(&self, face: Face) -> usize {
        self.len() / self.shape[face.axis]
    }

    /// Node indices of `face` in row-major order over the remaining axes.
    pub fn face_nodes(&self, face: Face) -> Vec<usize> {
        let fixed = if face.high {
            self.shape[face.axis] - 1
        } else {
            0
        };
        (0..self.len())
            .filter(|&i| self.multi_index(i)[face.axis] == fixed)
            .collect()
    }

    /// Position within the face array of a node lying on `face`.
    pub fn face_position(&self, face: Face, idx: usize) -> usize {
        let m = self.multi_index(idx);
        let mut pos = 0;
        for d in 0..3 {
            if d == face.axis {
                continue;
            }
            pos = pos * self.shape[d] + m[d];
        }
        pos
    }

    /// Index of the node `steps` nodes inward from `idx` across `face`.
    pub fn inward(&self, face: Face, idx: usize, steps: usize) -> usize {
        let s = self.stride(face.axis) * steps;
        if face.high {
            idx - s
        } else {
            idx + s
        }
    }

    /// Faces a node lies on.
    pub fn faces_of(&self, idx: usize) -> Vec<Face> {
        let m = self.multi_index(idx);
        let mut out = Vec::new();
        for d in 0..self.dim {
            if m[d] == 0 {
                out.push(Face { axis: d, high: false });
            }
            if m[d] == self.shape[d] - 1 {
                out.push(Face { axis: d, high: true });
            }
        }
        out
    }

    /// Longest mesh width, used as the discretization scale `h`.
    pub fn max_spacing(&self) -> f64 {
        self.spacing().iter().cloned().fold(0.0, f64::max)
    }
}
