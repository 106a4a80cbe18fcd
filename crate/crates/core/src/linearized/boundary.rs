//! Boundary traces of `δγ` from the first functional and the Cauchy data of
//! its solution increment.
//!
//! On the boundary `δH₁ = δγ|F|² + 2γF·∇δu₁` gives the value directly, since
//! `∇δu₁` is known from the trace (tangential part) and the normal derivative.
//! Differentiating that identity along the normal and combining it with the
//! linearized conductivity equation gives a 2×2 system for `∂_ν δγ` and
//! `∂²_ν δu₁`, solvable when `1 − 2(F̂·ν)² ≠ 0`.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::diff::{face_partial, face_second_partial, partial, second_partial};
use crate::error::{Error, Result};
use crate::field::{BoundaryData, ScalarField, TraceKind};
use crate::grid::Face;

pub const DEFAULT_CHARACTERISTIC_TOLERANCE: f64 = 1e-6;

/// Boundary value and outward normal derivative of a field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CauchyData {
    pub value: BoundaryData,
    pub normal: BoundaryData,
}

fn gather(nodes: &[usize], full: &[f64]) -> Vec<f64> {
    nodes.iter().map(|&n| full[n]).collect()
}

/// Recovers the Cauchy data of `δγ` from `δH₁`, `u₁`, `γ` and the Cauchy data
/// of `δu₁`. Fails with [`Error::CharacteristicBoundaryNormal`] listing every
/// face node where `|1 − 2(F̂₁·ν)²| ≤ tol`.
pub fn recover_boundary_dgamma(
    dh1: &ScalarField,
    u1: &ScalarField,
    gamma: &ScalarField,
    du1: &CauchyData,
    tol: f64,
) -> Result<CauchyData> {
    let g = *u1.grid();
    dh1.same_grid(u1)?;
    gamma.same_grid(u1)?;
    if du1.value.grid() != &g || du1.normal.grid() != &g {
        return Err(Error::GridMismatch);
    }
    let dim = g.dim();
    let u = u1.values();
    let gm = gamma.values();
    let du: Vec<Vec<f64>> = (0..dim).map(|e| partial(&g, u, e)).collect();
    let duu: Vec<Vec<f64>> = (0..dim).map(|e| second_partial(&g, u, e)).collect();
    let dgam: Vec<Vec<f64>> = (0..dim).map(|e| partial(&g, gm, e)).collect();
    let mut values = Vec::new();
    let mut normals = Vec::new();
    let mut characteristic = Vec::new();
    for face in g.faces() {
        let d = face.axis;
        let sigma = face.sign();
        let nodes = g.face_nodes(face);
        let m = nodes.len();
        let phi0 = du1.value.face(face);
        let phi1 = du1.normal.face(face);
        let f: Vec<Vec<f64>> = (0..dim).map(|e| gather(&nodes, &du[e])).collect();
        let gam = gather(&nodes, gm);
        let dh = gather(&nodes, dh1.values());
        let tang: Vec<usize> = g.tangential_axes(face).collect();
        let mut grad_du = vec![vec![0.0; m]; dim];
        for &e in &tang {
            grad_du[e] = face_partial(&g, face, phi0, e);
        }
        grad_du[d] = phi1.iter().map(|p| sigma * p).collect();
        let value: Vec<f64> = (0..m)
            .map(|k| {
                let fsq: f64 = (0..dim).map(|e| f[e][k] * f[e][k]).sum();
                let fdot: f64 = (0..dim).map(|e| f[e][k] * grad_du[e][k]).sum();
                (dh[k] - 2.0 * gam[k] * fdot) / fsq
            })
            .collect();

        // `δH₁` mixes central and one-sided gradients of `δu₁`; their
        // differing error constants make a stencil through the boundary node
        // only first-order accurate, so extrapolate from layers 1 to 3.
        let h = g.h(d);
        let ddh: Vec<f64> = nodes
            .iter()
            .map(|&b| {
                let f = |k: usize| dh1.values()[g.inward(face, b, k)];
                -sigma * (-5.0 * f(1) + 8.0 * f(2) - 3.0 * f(3)) / (2.0 * h)
            })
            .collect();
        let dgam_d = gather(&nodes, &dgam[d]);
        // ∂_d F_e: second derivative along the normal, mixed ones from the
        // tangential derivative of the normal derivative on the face.
        let fd_face = f[d].clone();
        let mut dnf = vec![vec![0.0; m]; dim];
        dnf[d] = gather(&nodes, &duu[d]);
        for &e in &tang {
            dnf[e] = face_partial(&g, face, &fd_face, e);
        }
        let tang_dgamma: Vec<Vec<f64>> = tang.iter().map(|&e| face_partial(&g, face, &value, e)).collect();
        let tang_uee: Vec<Vec<f64>> = tang.iter().map(|&e| gather(&nodes, &duu[e])).collect();
        let tang_phi0_ee: Vec<Vec<f64>> = tang.iter().map(|&e| face_second_partial(&g, face, phi0, e)).collect();
        let tang_phi1_e: Vec<Vec<f64>> = tang.iter().map(|&e| face_partial(&g, face, phi1, e)).collect();
        let tang_dgam: Vec<Vec<f64>> = tang.iter().map(|&e| gather(&nodes, &dgam[e])).collect();

        let mut normal = vec![0.0; m];
        for k in 0..m {
            let fsq: f64 = (0..dim).map(|e| f[e][k] * f[e][k]).sum();
            let fd = f[d][k];
            if libm::fabs(1.0 - 2.0 * fd * fd / fsq) <= tol {
                characteristic.push((face, nodes[k]));
                continue;
            }
            let gk = gam[k];
            let dg = value[k];
            let dn_fsq: f64 = 2.0 * (0..dim).map(|e| f[e][k] * dnf[e][k]).sum::<f64>();
            let mut r1 = ddh[k] - dg * dn_fsq;
            for e in 0..dim {
                r1 -= 2.0 * (dgam_d[k] * f[e][k] + gk * dnf[e][k]) * grad_du[e][k];
            }
            let mut div_f = dnf[d][k];
            let mut r2 = 0.0;
            for (t, &e) in tang.iter().enumerate() {
                r1 -= 2.0 * gk * f[e][k] * sigma * tang_phi1_e[t][k];
                div_f += tang_uee[t][k];
                r2 += f[e][k] * tang_dgamma[t][k];
                r2 += gk * tang_phi0_ee[t][k];
                r2 += tang_dgam[t][k] * grad_du[e][k];
            }
            r2 += dg * div_f + dgam_d[k] * grad_du[d][k];
            let r2 = -r2;
            // [|F|²  2γF_d] [a]   [r1]
            // [F_d     γ  ] [c] = [r2]
            let det = gk * (fsq - 2.0 * fd * fd);
            let a = (r1 * gk - 2.0 * gk * fd * r2) / det;
            // `a` is ∂_d δγ; the outward normal derivative carries σ.
            normal[k] = sigma * a;
        }
        values.push(value);
        normals.push(normal);
    }
    if !characteristic.is_empty() {
        return Err(Error::CharacteristicBoundaryNormal { nodes: characteristic });
    }
    Ok(CauchyData {
        value: BoundaryData::new(g, TraceKind::Dirichlet, values)?,
        normal: BoundaryData::new(g, TraceKind::Neumann, normals)?,
    })
}

/// Faces and nodes where `ν` is characteristic for the first functional.
pub fn characteristic_nodes(u1: &ScalarField, tol: f64) -> Vec<(Face, usize)> {
    let g = *u1.grid();
    let du: Vec<Vec<f64>> = (0..g.dim()).map(|e| partial(&g, u1.values(), e)).collect();
    let mut out = Vec::new();
    for face in g.faces() {
        for n in g.face_nodes(face) {
            let fsq: f64 = du.iter().map(|c| c[n] * c[n]).sum();
            let fd = du[face.axis][n];
            if libm::fabs(1.0 - 2.0 * fd * fd / fsq) <= tol {
                out.push((face, n));
            }
        }
    }
    out
}
