//! The conductivity equation `∇·γ∇u = 0` with Dirichlet data, and synthesis
//! of power densities `H = γ|∇u|²` with their Neumann traces.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::diff::{conductivity_matrix, gradient, normal_trace};
use crate::error::{Error, Result};
use crate::field::{BoundaryData, ScalarField, TraceKind};
use crate::grid::Grid;
use crate::linalg::{conjugate_gradient, EnvelopeCholesky};
use crate::sparse::{CsrMatrix, Triplets};
use crate::vecmath::dot;

/// Default lower bound on `|∇u_j|` accepted by [`synthesize_dataset`].
pub const DEFAULT_GRADIENT_FLOOR: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    /// Relative residual required of the discrete solve.
    pub tolerance: f64,
    /// Largest system factored directly; larger ones use conjugate gradients.
    pub direct_limit: usize,
    /// Largest envelope (stored entries) accepted for a direct factorization.
    pub envelope_limit: usize,
    pub max_iter: usize,
    /// `γ` must exceed this everywhere.
    pub gamma_floor: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tolerance: 1e-12,
            direct_limit: 100_000,
            envelope_limit: 200_000_000,
            max_iter: 20_000,
            gamma_floor: 0.0,
        }
    }
}

/// `∇·γ∇u + source = 0` in the box, `u = f` on its boundary.
#[derive(Clone, Debug)]
pub struct ConductivityProblem {
    pub gamma: ScalarField,
    pub dirichlet: BoundaryData,
    pub source: Option<ScalarField>,
}

impl ConductivityProblem {
    pub fn new(gamma: ScalarField, dirichlet: BoundaryData, source: Option<ScalarField>) -> Result<Self> {
        if dirichlet.grid() != gamma.grid() {
            return Err(Error::GridMismatch);
        }
        if dirichlet.kind() != TraceKind::Dirichlet {
            return Err(Error::InvalidInput("boundary data must be a Dirichlet trace".into()));
        }
        if let Some(s) = &source {
            s.same_grid(&gamma)?;
        }
        Ok(ConductivityProblem {
            gamma,
            dirichlet,
            source,
        })
    }
}

fn check_gamma(gamma: &ScalarField, floor: f64) -> Result<()> {
    for (node, &value) in gamma.values().iter().enumerate() {
        if !(value > floor) {
            return Err(Error::NonPositiveConductivity { node, value, floor });
        }
    }
    Ok(())
}

enum Factor {
    Direct(EnvelopeCholesky),
    Iterative,
}

/// The interior block of `−∇·γ∇` factored once for a fixed `γ`, reusable
/// across boundary data and sources.
pub struct ConductivitySolver {
    grid: Grid,
    opts: SolverOptions,
    full: CsrMatrix,
    interior: Vec<usize>,
    /// Position of each node among the interior unknowns.
    slot: Vec<Option<usize>>,
    matrix: CsrMatrix,
    factor: Factor,
}

impl ConductivitySolver {
    pub fn new(gamma: &ScalarField, opts: SolverOptions) -> Result<Self> {
        check_gamma(gamma, opts.gamma_floor)?;
        let grid = *gamma.grid();
        let full = conductivity_matrix(&grid, gamma.values());
        let interior: Vec<usize> = (0..grid.len()).filter(|&i| !grid.is_boundary(i)).collect();
        let mut slot = vec![None; grid.len()];
        for (k, &i) in interior.iter().enumerate() {
            slot[i] = Some(k);
        }
        let mut t = Triplets::new(interior.len(), interior.len());
        for (k, &i) in interior.iter().enumerate() {
            let (cols, vals) = full.row(i);
            for (&c, &v) in cols.iter().zip(vals) {
                if let Some(l) = slot[c] {
                    t.push(k, l, -v);
                }
            }
        }
        let matrix = t.finish();
        let direct = interior.len() <= opts.direct_limit
            && EnvelopeCholesky::envelope_size(&matrix) <= opts.envelope_limit;
        let factor = if direct {
            Factor::Direct(EnvelopeCholesky::factor(&matrix)?)
        } else {
            Factor::Iterative
        };
        Ok(ConductivitySolver {
            grid,
            opts,
            full,
            interior,
            slot,
            matrix,
            factor,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// Solves with Dirichlet data `f` and optional source.
    pub fn solve(&self, f: &BoundaryData, source: Option<&ScalarField>) -> Result<ScalarField> {
        if f.grid() != &self.grid {
            return Err(Error::GridMismatch);
        }
        let grid = self.grid;
        let mut u = vec![0.0; grid.len()];
        for (i, ui) in u.iter_mut().enumerate() {
            if grid.is_boundary(i) {
                *ui = f.nodal(i);
            }
        }
        let mut rhs: Vec<f64> = self
            .interior
            .iter()
            .map(|&i| {
                let (cols, vals) = self.full.row(i);
                let mut r = source.map_or(0.0, |s| s.values()[i]);
                for (&c, &v) in cols.iter().zip(vals) {
                    if self.slot[c].is_none() {
                        r += v * u[c];
                    }
                }
                r
            })
            .collect();
        let x = match &self.factor {
            Factor::Direct(l) => l.solve(&rhs),
            Factor::Iterative => {
                conjugate_gradient(&self.matrix, &rhs, self.opts.tolerance, self.opts.max_iter)?.x
            }
        };
        let ax = self.matrix.matvec(&x);
        let bnorm = libm::sqrt(dot(&rhs, &rhs));
        rhs.iter_mut().zip(&ax).for_each(|(r, a)| *r -= a);
        let res = libm::sqrt(dot(&rhs, &rhs));
        let rel = if bnorm > 0.0 { res / bnorm } else { res };
        if !(rel <= self.opts.tolerance) {
            return Err(Error::SolverFailure {
                residual: rel,
                tolerance: self.opts.tolerance,
            });
        }
        for (k, &i) in self.interior.iter().enumerate() {
            u[i] = x[k];
        }
        ScalarField::new(grid, u)
    }
}

pub fn solve_conductivity(p: &ConductivityProblem, opts: SolverOptions) -> Result<ScalarField> {
    ConductivitySolver::new(&p.gamma, opts)?.solve(&p.dirichlet, p.source.as_ref())
}

/// `H = γ|∇u|²` at every node.
pub fn power_density(gamma: &ScalarField, u: &ScalarField) -> Result<ScalarField> {
    gamma.same_grid(u)?;
    let grad = gradient(u);
    let dim = gamma.grid().dim();
    Ok(ScalarField::from_vec(
        *gamma.grid(),
        grad.values()
            .chunks(dim)
            .zip(gamma.values())
            .map(|(g, &c)| c * dot(g, g))
            .collect(),
    ))
}

/// Solutions, power densities and Neumann traces for a set of boundary
/// conditions.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Dataset {
    pub u: Vec<ScalarField>,
    pub h: Vec<ScalarField>,
    pub g: Vec<BoundaryData>,
    /// `min_j min_x |∇u_j|`.
    pub min_gradient: f64,
}

pub fn synthesize_dataset(
    gamma: &ScalarField,
    boundary_set: &[BoundaryData],
    gradient_floor: f64,
    opts: SolverOptions,
) -> Result<Dataset> {
    if boundary_set.is_empty() {
        return Err(Error::InvalidInput("at least one boundary condition is required".into()));
    }
    let solver = ConductivitySolver::new(gamma, opts)?;
    let mut out = Dataset {
        u: Vec::new(),
        h: Vec::new(),
        g: Vec::new(),
        min_gradient: f64::INFINITY,
    };
    for (j, f) in boundary_set.iter().enumerate() {
        let u = solver.solve(f, None)?;
        let mag = gradient(&u).magnitude();
        let (node, &m) = mag
            .values()
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .expect("nonempty grid");
        if m < gradient_floor {
            return Err(Error::GradientFloorViolation {
                functional: j,
                node,
                magnitude: m,
                floor: gradient_floor,
            });
        }
        out.min_gradient = out.min_gradient.min(m);
        out.h.push(power_density(gamma, &u)?);
        out.g.push(normal_trace(&u));
        out.u.push(u);
    }
    Ok(out)
}

/// Dirichlet traces of `x`, `y` and `x + y`, whose gradients form an
/// elliptic family wherever the first two are independent.
pub fn default_boundary_set(grid: &Grid) -> Vec<BoundaryData> {
    let fs: [fn([f64; 3]) -> f64; 3] = [|p| p[0], |p| p[1], |p| p[0] + p[1]];
    fs.iter()
        .map(|f| BoundaryData::from_fn(*grid, TraceKind::Dirichlet, |p, _| f(p)).expect("finite"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use core::f64::consts::PI;

    fn dirichlet(g: Grid, f: impl Fn([f64; 3]) -> f64) -> BoundaryData {
        BoundaryData::from_fn(g, TraceKind::Dirichlet, |p, _| f(p)).unwrap()
    }

    #[test]
    fn affine_solution_is_reproduced() {
        let g = Grid::unit_square(12).unwrap();
        let p = ConductivityProblem::new(ScalarField::constant(g, 1.0), dirichlet(g, |p| p[0]), None).unwrap();
        let u = solve_conductivity(&p, SolverOptions::default()).unwrap();
        for i in 0..g.len() {
            assert!((u.get(i) - g.coords(i)[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn harmonic_quadratic_is_exact_for_unit_conductivity() {
        let g = Grid::unit_square(10).unwrap();
        let f = |p: [f64; 3]| p[0] * p[0] - p[1] * p[1];
        let p = ConductivityProblem::new(ScalarField::constant(g, 1.0), dirichlet(g, f), None).unwrap();
        let u = solve_conductivity(&p, SolverOptions::default()).unwrap();
        for i in 0..g.len() {
            assert!((u.get(i) - f(g.coords(i))).abs() < 1e-11);
        }
    }

    #[test]
    fn rejects_nonpositive_conductivity() {
        let g = Grid::unit_square(6).unwrap();
        let mut gamma = ScalarField::constant(g, 1.0);
        gamma.values_mut()[7] = -0.5;
        let p = ConductivityProblem::new(gamma, dirichlet(g, |p| p[0]), None).unwrap();
        assert!(matches!(
            solve_conductivity(&p, SolverOptions::default()),
            Err(Error::NonPositiveConductivity { node: 7, .. })
        ));
    }

    #[test]
    fn power_density_examples() {
        let g = Grid::unit_square(8).unwrap();
        let u = ScalarField::from_fn(g, |p| p[0] + p[1]).unwrap();
        let h = power_density(&ScalarField::constant(g, 2.0), &u).unwrap();
        assert!(h.values().iter().all(|v| (v - 4.0).abs() < 1e-12));
        let gamma = ScalarField::from_fn(g, |p| 1.0 + p[0] * p[0]).unwrap();
        let h = power_density(&gamma, &ScalarField::from_fn(g, |p| p[1]).unwrap()).unwrap();
        for i in 0..g.len() {
            assert!((h.get(i) - gamma.get(i)).abs() < 1e-12);
        }
        let other = Grid::unit_square(9).unwrap();
        assert!(power_density(&gamma, &ScalarField::zeros(other)).is_err());
    }

    #[test]
    fn dataset_for_coordinate_functions() {
        let g = Grid::unit_square(9).unwrap();
        let set = default_boundary_set(&g);
        let d = synthesize_dataset(&ScalarField::constant(g, 1.0), &set, DEFAULT_GRADIENT_FLOOR, SolverOptions::default()).unwrap();
        assert!(d.h[0].values().iter().all(|v| (v - 1.0).abs() < 1e-10));
        assert!(d.h[2].values().iter().all(|v| (v - 2.0).abs() < 1e-10));
        for face in g.faces() {
            let nu = face.normal(2);
            assert!(d.g[0].face(face).iter().all(|v| (v - nu[0]).abs() < 1e-10));
            assert!(d.g[1].face(face).iter().all(|v| (v - nu[1]).abs() < 1e-10));
        }
        let flat = vec![dirichlet(g, |_| 1.0)];
        assert!(matches!(
            synthesize_dataset(&ScalarField::constant(g, 1.0), &flat, DEFAULT_GRADIENT_FLOOR, SolverOptions::default()),
            Err(Error::GradientFloorViolation { .. })
        ));
    }

    #[test]
    fn iterative_path_matches_direct() {
        let g = Grid::unit_square(14).unwrap();
        let gamma = ScalarField::from_fn(g, |p| 1.0 + 0.5 * p[0]).unwrap();
        let src = ScalarField::from_fn(g, |p| libm::sin(PI * p[0]) * p[1]).unwrap();
        let f = dirichlet(g, |p| p[0] * p[1]);
        let direct = ConductivitySolver::new(&gamma, SolverOptions::default()).unwrap().solve(&f, Some(&src)).unwrap();
        let opts = SolverOptions { direct_limit: 0, tolerance: 1e-12, ..SolverOptions::default() };
        let iter = ConductivitySolver::new(&gamma, opts).unwrap().solve(&f, Some(&src)).unwrap();
        for i in 0..g.len() {
            assert!((direct.get(i) - iter.get(i)).abs() < 1e-9);
        }
    }
}
