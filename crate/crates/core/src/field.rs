//! Scalar, vector and boundary-trace fields on a [`Grid`].

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Face, Grid};

fn check_finite(values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::NonFinite { index }),
        None => Ok(()),
    }
}

/// One real value per grid node.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalarField {
    grid: Grid,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidInput(alloc::format!(
                "field has {} values, grid has {} nodes",
                values.len(),
                grid.len()
            )));
        }
        check_finite(&values)?;
        Ok(ScalarField { grid, values })
    }

    /// Field built from values that are finite by construction.
    pub(crate) fn from_vec(grid: Grid, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        ScalarField { grid, values }
    }

    pub fn zeros(grid: Grid) -> Self {
        ScalarField {
            grid,
            values: vec![0.0; grid.len()],
        }
    }

    pub fn constant(grid: Grid, c: f64) -> Self {
        ScalarField {
            grid,
            values: vec![c; grid.len()],
        }
    }

    /// Samples `f` at every node. Fails if `f` returns a non-finite value.
    pub fn from_fn(grid: Grid, f: impl Fn([f64; 3]) -> f64) -> Result<Self> {
        let values = (0..grid.len()).map(|i| f(grid.coords(i))).collect();
        Self::new(grid, values)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, idx: usize) -> f64 {
        self.values[idx]
    }

    pub fn same_grid(&self, other: &ScalarField) -> Result<()> {
        if self.grid == other.grid {
            Ok(())
        } else {
            Err(Error::GridMismatch)
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ScalarField {
        ScalarField::from_vec(self.grid, self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_with(&self, other: &ScalarField, f: impl Fn(f64, f64) -> f64) -> Result<ScalarField> {
        self.same_grid(other)?;
        Ok(ScalarField::from_vec(
            self.grid,
            self.values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        ))
    }

    /// `a * self + b * other`.
    pub fn lin_comb(&self, a: f64, other: &ScalarField, b: f64) -> Result<ScalarField> {
        self.zip_with(other, |x, y| a * x + b * y)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Dirichlet trace of the field on every face.
    pub fn trace(&self) -> BoundaryData {
        let faces = self
            .grid
            .faces()
            .map(|f| self.grid.face_nodes(f).iter().map(|&n| self.values[n]).collect())
            .collect();
        BoundaryData {
            grid: self.grid,
            kind: TraceKind::Dirichlet,
            faces,
        }
    }
}

/// `dim` reals per node, stored node-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VectorField {
    grid: Grid,
    values: Vec<f64>,
}

impl VectorField {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() * grid.dim() {
            return Err(Error::InvalidInput(alloc::format!(
                "vector field has {} components, expected {}",
                values.len(),
                grid.len() * grid.dim()
            )));
        }
        check_finite(&values)?;
        Ok(VectorField { grid, values })
    }

    pub(crate) fn from_vec(grid: Grid, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len() * grid.dim());
        VectorField { grid, values }
    }

    /// Assembles a field from one `ScalarField` per component.
    pub fn from_components(components: &[ScalarField]) -> Result<Self> {
        let grid = *components
            .first()
            .ok_or_else(|| Error::InvalidInput("no components".into()))?
            .grid();
        if components.len() != grid.dim() {
            return Err(Error::InvalidInput("component count differs from dimension".into()));
        }
        let dim = grid.dim();
        let mut values = vec![0.0; grid.len() * dim];
        for (d, c) in components.iter().enumerate() {
            if *c.grid() != grid {
                return Err(Error::GridMismatch);
            }
            for (i, &v) in c.values().iter().enumerate() {
                values[i * dim + d] = v;
            }
        }
        Ok(VectorField { grid, values })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, idx: usize) -> [f64; 3] {
        let dim = self.grid.dim();
        let mut out = [0.0; 3];
        out[..dim].copy_from_slice(&self.values[idx * dim..(idx + 1) * dim]);
        out
    }

    pub fn component(&self, d: usize) -> ScalarField {
        let dim = self.grid.dim();
        ScalarField::from_vec(
            self.grid,
            (0..self.grid.len()).map(|i| self.values[i * dim + d]).collect(),
        )
    }

    /// Pointwise Euclidean norm.
    pub fn magnitude(&self) -> ScalarField {
        let dim = self.grid.dim();
        ScalarField::from_vec(
            self.grid,
            self.values
                .chunks(dim)
                .map(|c| libm::sqrt(c.iter().map(|x| x * x).sum()))
                .collect(),
        )
    }

    /// Pointwise unit field; fails where the magnitude is below `floor`.
    /// `label` names the field in the error (functional index).
    pub fn normalized(&self, floor: f64, label: usize) -> Result<VectorField> {
        let dim = self.grid.dim();
        let mut out = self.values.clone();
        for (i, c) in out.chunks_mut(dim).enumerate() {
            let m = libm::sqrt(c.iter().map(|x| x * x).sum());
            if !(m >= floor) || m == 0.0 {
                return Err(Error::GradientFloorViolation {
                    functional: label,
                    node: i,
                    magnitude: m,
                    floor,
                });
            }
            c.iter_mut().for_each(|x| *x /= m);
        }
        Ok(VectorField::from_vec(self.grid, out))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TraceKind {
    /// Boundary values.
    Dirichlet,
    /// Outward normal derivatives.
    Neumann,
}

/// Values on boundary nodes, stored per face.
///
/// Face `f` (see [`Face::id`]) holds one value for every node of that face in
/// the order of [`Grid::face_nodes`]. Nodes on edges and corners appear on
/// several faces; for Dirichlet traces the copies agree, for normal-derivative
/// traces each face carries the derivative along its own normal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryData {
    grid: Grid,
    kind: TraceKind,
    faces: Vec<Vec<f64>>,
}

impl BoundaryData {
    pub fn new(grid: Grid, kind: TraceKind, faces: Vec<Vec<f64>>) -> Result<Self> {
        if faces.len() != grid.face_count() {
            return Err(Error::InvalidInput("one array per face is required".into()));
        }
        for (id, vals) in faces.iter().enumerate() {
            if vals.len() != grid.face_len(Face::from_id(id)) {
                return Err(Error::InvalidInput(alloc::format!(
                    "face {} has {} values, expected {}",
                    Face::from_id(id).name(),
                    vals.len(),
                    grid.face_len(Face::from_id(id))
                )));
            }
            check_finite(vals)?;
        }
        Ok(BoundaryData { grid, kind, faces })
    }

    pub fn zeros(grid: Grid, kind: TraceKind) -> Self {
        let faces = grid.faces().map(|f| vec![0.0; grid.face_len(f)]).collect();
        BoundaryData { grid, kind, faces }
    }

    /// Evaluates `f(x, outward normal)` at every face node.
    pub fn from_fn(grid: Grid, kind: TraceKind, f: impl Fn([f64; 3], [f64; 3]) -> f64) -> Result<Self> {
        let faces = grid
            .faces()
            .map(|face| {
                let nu = face.normal(grid.dim());
                grid.face_nodes(face)
                    .iter()
                    .map(|&n| f(grid.coords(n), nu))
                    .collect()
            })
            .collect();
        Self::new(grid, kind, faces)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn kind(&self) -> TraceKind {
        self.kind
    }

    pub fn face(&self, face: Face) -> &[f64] {
        &self.faces[face.id()]
    }

    pub fn faces(&self) -> &[Vec<f64>] {
        &self.faces
    }

    pub fn value(&self, face: Face, node: usize) -> f64 {
        self.faces[face.id()][self.grid.face_position(face, node)]
    }

    /// Value at a boundary node, averaged over the faces it lies on.
    pub fn nodal(&self, node: usize) -> f64 {
        let faces = self.grid.faces_of(node);
        faces.iter().map(|&f| self.value(f, node)).sum::<f64>() / faces.len() as f64
    }

    pub fn zip_with(&self, other: &BoundaryData, f: impl Fn(f64, f64) -> f64) -> Result<BoundaryData> {
        if self.grid != other.grid || self.kind != other.kind {
            return Err(Error::GridMismatch);
        }
        let faces = self
            .faces
            .iter()
            .zip(&other.faces)
            .map(|(a, b)| a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect())
            .collect();
        Ok(BoundaryData {
            grid: self.grid,
            kind: self.kind,
            faces,
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> BoundaryData {
        BoundaryData {
            grid: self.grid,
            kind: self.kind,
            faces: self.faces.iter().map(|v| v.iter().map(|&x| f(x)).collect()).collect(),
        }
    }

    /// Maximum absolute value, optionally skipping nodes on more than one face
    /// (edges and corners).
    pub fn max_abs(&self, skip_edges: bool) -> f64 {
        let mut m: f64 = 0.0;
        for face in self.grid.faces() {
            for (p, &n) in self.grid.face_nodes(face).iter().enumerate() {
                if skip_edges && self.grid.faces_of(n).len() > 1 {
                    continue;
                }
                m = m.max(self.faces[face.id()][p].abs());
            }
        }
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_finite_and_wrong_length() {
        let g = Grid::unit_square(5).unwrap();
        assert!(ScalarField::new(g, vec![0.0; 24]).is_err());
        let mut v = vec![0.0; 25];
        v[3] = f64::NAN;
        assert_eq!(ScalarField::new(g, v), Err(Error::NonFinite { index: 3 }));
    }

    #[test]
    fn trace_and_nodal_average() {
        let g = Grid::unit_square(5).unwrap();
        let u = ScalarField::from_fn(g, |p| p[0] + 10.0 * p[1]).unwrap();
        let t = u.trace();
        assert_eq!(t.kind(), TraceKind::Dirichlet);
        for i in 0..g.len() {
            if g.is_boundary(i) {
                assert_eq!(t.nodal(i), u.get(i));
            }
        }
    }

    #[test]
    fn normalized_reports_floor_violation() {
        let g = Grid::unit_square(5).unwrap();
        let mut vals = vec![1.0; 50];
        vals[14] = 0.0;
        vals[15] = 0.0;
        let v = VectorField::new(g, vals).unwrap();
        match v.normalized(1e-3, 2) {
            Err(Error::GradientFloorViolation { functional: 2, node: 7, .. }) => {}
            other => panic!("{other:?}"),
        }
    }
}
