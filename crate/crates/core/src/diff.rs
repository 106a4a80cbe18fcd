//! Second-order finite-difference stencils: gradients, boundary normal
//! derivatives, the conservative conductivity stencil and discrete norms.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::field::{BoundaryData, ScalarField, TraceKind, VectorField};
use crate::grid::{Face, Grid};
use crate::sparse::{CsrMatrix, Triplets};

/// Stencil of `∂_axis` at `idx`: `(node, weight)` pairs.
///
/// Central in the interior, second-order one-sided at both ends of the axis.
pub fn partial_stencil(grid: &Grid, axis: usize, idx: usize) -> [(usize, f64); 3] {
    let m = grid.multi_index(idx)[axis];
    let n = grid.n(axis);
    let s = grid.stride(axis);
    let c = 1.0 / (2.0 * grid.h(axis));
    if m == 0 {
        [(idx, -3.0 * c), (idx + s, 4.0 * c), (idx + 2 * s, -c)]
    } else if m == n - 1 {
        [(idx, 3.0 * c), (idx - s, -4.0 * c), (idx - 2 * s, c)]
    } else {
        [(idx - s, -c), (idx + s, c), (idx, 0.0)]
    }
}

/// `∂_axis u` at every node.
pub fn partial(grid: &Grid, u: &[f64], axis: usize) -> Vec<f64> {
    (0..grid.len())
        .map(|i| {
            partial_stencil(grid, axis, i)
                .iter()
                .map(|&(j, w)| w * u[j])
                .sum()
        })
        .collect()
}

/// `∂²_axis u` at every node; one-sided four-point stencil at the ends.
pub fn second_partial(grid: &Grid, u: &[f64], axis: usize) -> Vec<f64> {
    let n = grid.n(axis);
    let s = grid.stride(axis);
    let c = 1.0 / (grid.h(axis) * grid.h(axis));
    (0..grid.len())
        .map(|i| {
            let m = grid.multi_index(i)[axis];
            if m == 0 {
                c * (2.0 * u[i] - 5.0 * u[i + s] + 4.0 * u[i + 2 * s] - u[i + 3 * s])
            } else if m == n - 1 {
                c * (2.0 * u[i] - 5.0 * u[i - s] + 4.0 * u[i - 2 * s] - u[i - 3 * s])
            } else {
                c * (u[i + s] - 2.0 * u[i] + u[i - s])
            }
        })
        .collect()
}

pub fn gradient(u: &ScalarField) -> VectorField {
    let grid = *u.grid();
    let dim = grid.dim();
    let parts: Vec<Vec<f64>> = (0..dim).map(|d| partial(&grid, u.values(), d)).collect();
    let mut values = vec![0.0; grid.len() * dim];
    for (d, p) in parts.iter().enumerate() {
        for (i, &v) in p.iter().enumerate() {
            values[i * dim + d] = v;
        }
    }
    VectorField::from_vec(grid, values)
}

/// Sparse matrix of `∂_axis`, identical to [`partial`].
pub fn partial_matrix(grid: &Grid, axis: usize) -> CsrMatrix {
    let mut t = Triplets::new(grid.len(), grid.len());
    for i in 0..grid.len() {
        for (j, w) in partial_stencil(grid, axis, i) {
            t.push(i, j, w);
        }
    }
    t.finish()
}

/// Outward normal derivative stencil at a node on `face`.
pub fn normal_stencil(grid: &Grid, face: Face, idx: usize) -> [(usize, f64); 3] {
    let c = 1.0 / (2.0 * grid.h(face.axis));
    [
        (idx, 3.0 * c),
        (grid.inward(face, idx, 1), -4.0 * c),
        (grid.inward(face, idx, 2), c),
    ]
}

/// Outward normal derivative on every face. Edge and corner nodes carry one
/// value per face; [`BoundaryData::nodal`] averages them.
pub fn normal_trace(u: &ScalarField) -> BoundaryData {
    let grid = *u.grid();
    let faces = grid
        .faces()
        .map(|face| {
            grid.face_nodes(face)
                .iter()
                .map(|&b| {
                    normal_stencil(&grid, face, b)
                        .iter()
                        .map(|&(j, w)| w * u.values()[j])
                        .sum()
                })
                .collect()
        })
        .collect();
    BoundaryData::new(grid, TraceKind::Neumann, faces).expect("finite stencil output")
}

/// Harmonic mean used for face conductivities.
#[inline]
pub fn harmonic(a: f64, b: f64) -> f64 {
    2.0 * a * b / (a + b)
}

/// `∂/∂a` of [`harmonic`].
#[inline]
fn harmonic_da(a: f64, b: f64) -> f64 {
    let s = a + b;
    2.0 * b * b / (s * s)
}

/// Applies the conservative stencil of `∇·γ∇` at interior nodes; boundary
/// entries are zero.
pub fn conductivity_apply(grid: &Grid, gamma: &[f64], u: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; grid.len()];
    for (i, o) in out.iter_mut().enumerate() {
        if grid.is_boundary(i) {
            continue;
        }
        let mut acc = 0.0;
        for d in 0..grid.dim() {
            let s = grid.stride(d);
            let h2 = grid.h(d) * grid.h(d);
            let gp = harmonic(gamma[i], gamma[i + s]);
            let gm = harmonic(gamma[i], gamma[i - s]);
            acc += (gp * (u[i + s] - u[i]) - gm * (u[i] - u[i - s])) / h2;
        }
        *o = acc;
    }
    out
}

/// Matrix of `u ↦ conductivity_apply(γ, u)`; boundary rows are empty.
pub fn conductivity_matrix(grid: &Grid, gamma: &[f64]) -> CsrMatrix {
    let mut t = Triplets::new(grid.len(), grid.len());
    for i in 0..grid.len() {
        if grid.is_boundary(i) {
            continue;
        }
        let mut diag = 0.0;
        for d in 0..grid.dim() {
            let s = grid.stride(d);
            let h2 = grid.h(d) * grid.h(d);
            let gp = harmonic(gamma[i], gamma[i + s]) / h2;
            let gm = harmonic(gamma[i], gamma[i - s]) / h2;
            t.push(i, i + s, gp);
            t.push(i, i - s, gm);
            diag -= gp + gm;
        }
        t.push(i, i, diag);
    }
    t.finish()
}

/// Jacobian of `γ ↦ conductivity_apply(γ, u)` at `(γ, u)`.
pub fn conductivity_gamma_jacobian(grid: &Grid, gamma: &[f64], u: &[f64]) -> CsrMatrix {
    let mut t = Triplets::new(grid.len(), grid.len());
    for i in 0..grid.len() {
        if grid.is_boundary(i) {
            continue;
        }
        for d in 0..grid.dim() {
            let s = grid.stride(d);
            let h2 = grid.h(d) * grid.h(d);
            for j in [i + s, i - s] {
                let du = (u[j] - u[i]) / h2;
                t.push(i, i, harmonic_da(gamma[i], gamma[j]) * du);
                t.push(i, j, harmonic_da(gamma[j], gamma[i]) * du);
            }
        }
    }
    t.finish()
}

/// Matrix-free product of [`conductivity_gamma_jacobian`] with `dg`.
pub fn conductivity_gamma_apply(grid: &Grid, gamma: &[f64], u: &[f64], dg: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; grid.len()];
    for (i, o) in out.iter_mut().enumerate() {
        if grid.is_boundary(i) {
            continue;
        }
        let mut acc = 0.0;
        for d in 0..grid.dim() {
            let s = grid.stride(d);
            let h2 = grid.h(d) * grid.h(d);
            for j in [i + s, i - s] {
                let dm = harmonic_da(gamma[i], gamma[j]) * dg[i] + harmonic_da(gamma[j], gamma[i]) * dg[j];
                acc += dm * (u[j] - u[i]) / h2;
            }
        }
        *o = acc;
    }
    out
}

/// One damped Jacobi pass of the discrete Laplacian (weight 2/3) at interior
/// nodes; boundary values are kept.
pub fn jacobi_smooth(grid: &Grid, u: &[f64]) -> Vec<f64> {
    let mut out = u.to_vec();
    for (i, o) in out.iter_mut().enumerate() {
        if grid.is_boundary(i) {
            continue;
        }
        let (mut off, mut diag) = (0.0, 0.0);
        for d in 0..grid.dim() {
            let s = grid.stride(d);
            let w = 1.0 / (grid.h(d) * grid.h(d));
            off += w * (u[i + s] + u[i - s]);
            diag += 2.0 * w;
        }
        *o = u[i] + (2.0 / 3.0) * (off / diag - u[i]);
    }
    out
}

/// The three discrete norms reported for grid functions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Norms {
    pub l2: f64,
    pub h1: f64,
    pub max: f64,
}

/// `sqrt(Σ w_i u_i²)` with trapezoidal weights, so that constants on the
/// unit box have norm equal to their magnitude.
pub fn weighted_l2(grid: &Grid, u: &[f64]) -> f64 {
    let s: f64 = u
        .iter()
        .enumerate()
        .map(|(i, v)| grid.quadrature_weight(i) * v * v)
        .sum();
    libm::sqrt(s)
}

/// Trapezoidal `l²` norm of a boundary trace over all faces.
pub fn boundary_l2(data: &BoundaryData) -> f64 {
    let grid = data.grid();
    let mut s = 0.0;
    for face in grid.faces() {
        for (&n, v) in grid.face_nodes(face).iter().zip(data.face(face)) {
            let m = grid.multi_index(n);
            let mut w = 1.0;
            for e in grid.tangential_axes(face) {
                w *= grid.h(e);
                if m[e] == 0 || m[e] == grid.n(e) - 1 {
                    w *= 0.5;
                }
            }
            s += w * v * v;
        }
    }
    libm::sqrt(s)
}

pub fn discrete_norms(u: &ScalarField) -> Norms {
    let grid = *u.grid();
    let l2 = weighted_l2(&grid, u.values());
    let mut h1sq = l2 * l2;
    for d in 0..grid.dim() {
        let p = weighted_l2(&grid, &partial(&grid, u.values(), d));
        h1sq += p * p;
    }
    let max = u.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    Norms {
        l2,
        h1: libm::sqrt(h1sq),
        max,
    }
}

/// Tangential derivative `∂_axis` of values living on `face`, returned in
/// face order. `axis` must be tangential to the face.
pub fn face_partial(grid: &Grid, face: Face, values: &[f64], axis: usize) -> Vec<f64> {
    face_apply(grid, face, values, |full| partial(grid, full, axis))
}

/// Tangential second derivative on a face.
pub fn face_second_partial(grid: &Grid, face: Face, values: &[f64], axis: usize) -> Vec<f64> {
    face_apply(grid, face, values, |full| second_partial(grid, full, axis))
}

fn face_apply(grid: &Grid, face: Face, values: &[f64], op: impl Fn(&[f64]) -> Vec<f64>) -> Vec<f64> {
    let nodes = grid.face_nodes(face);
    let mut full = vec![0.0; grid.len()];
    for (&n, &v) in nodes.iter().zip(values) {
        full[n] = v;
    }
    let r = op(&full);
    nodes.iter().map(|&n| r[n]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn field(g: Grid, f: impl Fn([f64; 3]) -> f64) -> ScalarField {
        ScalarField::from_fn(g, f).unwrap()
    }

    #[test]
    fn boundary_norm_of_a_constant_is_the_perimeter() {
        let g = Grid::unit_square(9).unwrap();
        let one = BoundaryData::from_fn(g, TraceKind::Dirichlet, |_, _| 1.0).unwrap();
        assert!((boundary_l2(&one) - 2.0).abs() < 1e-14);
        let g = Grid::unit_cube(5).unwrap();
        let one = BoundaryData::from_fn(g, TraceKind::Dirichlet, |_, _| 1.0).unwrap();
        assert!((boundary_l2(&one) - libm::sqrt(6.0)).abs() < 1e-14);
    }

    #[test]
    fn gradient_of_affine_is_exact() {
        let g = Grid::unit_square(9).unwrap();
        let grad = gradient(&field(g, |p| 2.0 * p[0] - 3.0 * p[1] + 1.0));
        for i in 0..g.len() {
            let v = grad.get(i);
            assert!((v[0] - 2.0).abs() < 1e-12 && (v[1] + 3.0).abs() < 1e-12);
        }
        let c = gradient(&ScalarField::constant(g, 3.7));
        assert!(c.values().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn quadratic_gradient_error_ratio() {
        let err = |n: usize| {
            let g = Grid::unit_square(n).unwrap();
            let grad = gradient(&field(g, |p| p[0] * p[0] + p[1] * p[1]));
            (0..g.len())
                .map(|i| {
                    let p = g.coords(i);
                    let v = grad.get(i);
                    (v[0] - 2.0 * p[0]).abs().max((v[1] - 2.0 * p[1]).abs())
                })
                .fold(0.0, f64::max)
        };
        // Second-order stencils reproduce quadratics exactly.
        assert!(err(32) < 1e-10 && err(64) < 1e-10);
        let errc = |n: usize| {
            let g = Grid::unit_square(n).unwrap();
            let grad = gradient(&field(g, |p| libm::sin(2.0 * p[0]) * libm::cos(p[1])));
            (0..g.len())
                .map(|i| {
                    let p = g.coords(i);
                    let v = grad.get(i);
                    (v[0] - 2.0 * libm::cos(2.0 * p[0]) * libm::cos(p[1])).abs()
                })
                .fold(0.0, f64::max)
        };
        let ratio = errc(33) / errc(65);
        assert!((3.5..=4.5).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn normal_trace_of_x() {
        let g = Grid::unit_square(9).unwrap();
        let t = normal_trace(&field(g, |p| p[0]));
        assert!(t.face(Face { axis: 0, high: true }).iter().all(|v| (v - 1.0).abs() < 1e-12));
        assert!(t.face(Face { axis: 0, high: false }).iter().all(|v| (v + 1.0).abs() < 1e-12));
        assert!(t.face(Face { axis: 1, high: true }).iter().all(|v| v.abs() < 1e-12));
        let q = normal_trace(&field(g, |p| p[0] * p[0]));
        assert!(q.face(Face { axis: 0, high: true }).iter().all(|v| (v - 2.0).abs() < 1e-10));
    }

    #[test]
    fn matrices_match_loops() {
        let g = Grid::unit(&[6, 7]).unwrap();
        let gamma: Vec<f64> = (0..g.len()).map(|i| 1.0 + 0.1 * (i % 5) as f64).collect();
        let u: Vec<f64> = (0..g.len()).map(|i| libm::sin(i as f64)).collect();
        let a = conductivity_matrix(&g, &gamma).matvec(&u);
        let b = conductivity_apply(&g, &gamma, &u);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-10);
        }
        let p = partial_matrix(&g, 1).matvec(&u);
        for (x, y) in p.iter().zip(partial(&g, &u, 1)) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn gamma_jacobian_matches_finite_difference() {
        let g = Grid::unit_square(6).unwrap();
        let gamma: Vec<f64> = (0..g.len()).map(|i| 1.0 + 0.3 * libm::cos(i as f64)).collect();
        let u: Vec<f64> = (0..g.len()).map(|i| libm::sin(0.7 * i as f64)).collect();
        let w: Vec<f64> = (0..g.len()).map(|i| libm::cos(1.3 * i as f64)).collect();
        let jw = conductivity_gamma_jacobian(&g, &gamma, &u).matvec(&w);
        let eps = 1e-6;
        let gp: Vec<f64> = gamma.iter().zip(&w).map(|(a, b)| a + eps * b).collect();
        let gm: Vec<f64> = gamma.iter().zip(&w).map(|(a, b)| a - eps * b).collect();
        let fp = conductivity_apply(&g, &gp, &u);
        let fm = conductivity_apply(&g, &gm, &u);
        for i in 0..g.len() {
            let fd = (fp[i] - fm[i]) / (2.0 * eps);
            assert!((fd - jw[i]).abs() < 1e-5 * (1.0 + fd.abs()), "{i}: {fd} vs {}", jw[i]);
        }
    }

    #[test]
    fn norms_of_constants() {
        let g = Grid::unit_square(17).unwrap();
        let z = discrete_norms(&ScalarField::zeros(g));
        assert_eq!((z.l2, z.h1, z.max), (0.0, 0.0, 0.0));
        let one = discrete_norms(&ScalarField::constant(g, 1.0));
        assert!((one.l2 - 1.0).abs() < 1e-14 && (one.max - 1.0).abs() < 1e-14);
        assert!((one.h1 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn face_derivatives() {
        let g = Grid::unit_square(9).unwrap();
        let f = Face { axis: 1, high: false };
        let vals: Vec<f64> = g.face_nodes(f).iter().map(|&n| {
            let x = g.coords(n)[0];
            x * x * x
        }).collect();
        let d2 = face_second_partial(&g, f, &vals, 0);
        for (&n, v) in g.face_nodes(f).iter().zip(d2) {
            assert!((v - 6.0 * g.coords(n)[0]).abs() < 1e-9);
        }
    }
}
