//! Linearized power-density systems around a base state `(γ, {u_j})`.
//!
//! Unknowns are `v = (δγ, δu_1, …, δu_J)` (or `{δu_j}` alone for the
//! eliminated systems), each a grid function stored block after block.
//! With `L_γ = ∇·γ∇`, `F_j = ∇u_j` and `K_j = 2γ|F_j|⁻²F_j·∇` the systems are
//!
//! * `First`: `∇·δγ∇u_j + L_γ δu_j = 0` at interior nodes and
//!   `δγ|F_j|² + 2γF_j·∇δu_j = δH_j` at every node;
//! * `Eliminated`: `−L_γ δu_j + ∇·(F_j K_j δu_j) = ∇·(δH_j F_j/|F_j|²)` with
//!   the scalar constraints `K_j δu_j − K_k δu_k = δH_j/|F_j|² − δH_k/|F_k|²`;
//! * `Eliminated2`: the same with the gradient of each constraint;
//! * `Triangular`: the first row together with
//!   `L_γ|F_j|⁻²(functional row) − K_j(first row)`, whose right-hand side is
//!   `L_γ(δH_j/|F_j|²)`.
//!
//! `∇·(δγ∇u_j)` is discretized as the exact derivative of the conservative
//! stencil with respect to `γ`, so [`SystemKind::First`] is the Jacobian of
//! the discrete forward map.

mod boundary;
mod normal;

pub use boundary::{characteristic_nodes, recover_boundary_dgamma, CauchyData, DEFAULT_CHARACTERISTIC_TOLERANCE};
pub use normal::{BcKind, BlockCondition, BoundaryConditionSet, NormalOptions, NormalSystem};

use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use serde::{Deserialize, Serialize};

use crate::diff::{
    conductivity_apply, conductivity_gamma_apply, conductivity_gamma_jacobian, conductivity_matrix,
    gradient, jacobi_smooth, partial, partial_matrix,
};
use crate::error::{Error, Result};
use crate::field::{ScalarField, VectorField};
use crate::grid::Grid;
use crate::sparse::{CsrMatrix, Triplets};

/// Base state `v₀ = (γ, {u_j})` with its gradients and the discrete operators
/// frozen at it.
#[derive(Clone, Debug)]
pub struct BaseState {
    grid: Grid,
    gamma: Vec<f64>,
    u: Vec<Vec<f64>>,
    grad: Vec<VectorField>,
    grad_sq: Vec<Vec<f64>>,
    lg: CsrMatrix,
    jg: Vec<CsrMatrix>,
    gd: Vec<CsrMatrix>,
    k: Vec<CsrMatrix>,
}

impl BaseState {
    pub fn new(gamma: &ScalarField, u: &[ScalarField], gradient_floor: f64) -> Result<Self> {
        if u.is_empty() {
            return Err(Error::InvalidInput("at least one solution u_j is required".into()));
        }
        let grid = *gamma.grid();
        for (node, &value) in gamma.values().iter().enumerate() {
            if !(value > 0.0) {
                return Err(Error::NonPositiveConductivity { node, value, floor: 0.0 });
            }
        }
        let mut grads = Vec::new();
        let mut grad_sq = Vec::new();
        for (j, uj) in u.iter().enumerate() {
            uj.same_grid(gamma)?;
            let g = gradient(uj);
            let sq: Vec<f64> = g
                .values()
                .chunks(grid.dim())
                .map(|c| c.iter().map(|x| x * x).sum())
                .collect();
            for (node, &s) in sq.iter().enumerate() {
                let m = libm::sqrt(s);
                if !(m >= gradient_floor) || m == 0.0 {
                    return Err(Error::GradientFloorViolation {
                        functional: j,
                        node,
                        magnitude: m,
                        floor: gradient_floor,
                    });
                }
            }
            grads.push(g);
            grad_sq.push(sq);
        }
        let gv = gamma.values().to_vec();
        let lg = conductivity_matrix(&grid, &gv);
        let jg = u
            .iter()
            .map(|uj| conductivity_gamma_jacobian(&grid, &gv, uj.values()))
            .collect();
        let gd: Vec<CsrMatrix> = (0..grid.dim()).map(|d| partial_matrix(&grid, d)).collect();
        let k = (0..u.len())
            .map(|j| {
                let mut acc = CsrMatrix::zeros(grid.len(), grid.len());
                for (d, g) in gd.iter().enumerate() {
                    let coef: Vec<f64> = (0..grid.len())
                        .map(|i| 2.0 * gv[i] * grads[j].get(i)[d] / grad_sq[j][i])
                        .collect();
                    let mut m = g.clone();
                    m.scale_rows(&coef);
                    acc = acc.add_scaled(1.0, &m, 1.0);
                }
                acc
            })
            .collect();
        Ok(BaseState {
            grid,
            gamma: gv,
            u: u.iter().map(|x| x.values().to_vec()).collect(),
            grad: grads,
            grad_sq,
            lg,
            jg,
            gd,
            k,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn functionals(&self) -> usize {
        self.u.len()
    }

    pub fn gamma(&self) -> &[f64] {
        &self.gamma
    }

    pub fn u(&self, j: usize) -> &[f64] {
        &self.u[j]
    }

    pub fn gradient(&self, j: usize) -> &VectorField {
        &self.grad[j]
    }

    /// `|F_j|²` at every node.
    pub fn grad_sq(&self, j: usize) -> &[f64] {
        &self.grad_sq[j]
    }

    /// Matrix of `L_γ`.
    pub fn conductivity(&self) -> &CsrMatrix {
        &self.lg
    }

    /// Matrix of `δγ ↦ ∇·(δγ∇u_j)`.
    pub fn gamma_jacobian(&self, j: usize) -> &CsrMatrix {
        &self.jg[j]
    }

    /// Matrix of `K_j = 2γ|F_j|⁻²F_j·∇`.
    pub fn k(&self, j: usize) -> &CsrMatrix {
        &self.k[j]
    }

    pub fn partial(&self, d: usize) -> &CsrMatrix {
        &self.gd[d]
    }

    pub(crate) fn k_apply(&self, j: usize, x: &[f64]) -> Vec<f64> {
        let n = self.grid.len();
        let mut out = vec![0.0; n];
        for d in 0..self.grid.dim() {
            let p = partial(&self.grid, x, d);
            for i in 0..n {
                out[i] += 2.0 * self.gamma[i] * self.grad[j].get(i)[d] / self.grad_sq[j][i] * p[i];
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SystemKind {
    First,
    Eliminated,
    Eliminated2,
    Triangular,
}

impl SystemKind {
    pub fn name(self) -> &'static str {
        match self {
            SystemKind::First => "first",
            SystemKind::Eliminated => "eliminated",
            SystemKind::Eliminated2 => "eliminated2",
            SystemKind::Triangular => "triangular",
        }
    }

    pub fn has_gamma(self) -> bool {
        matches!(self, SystemKind::First | SystemKind::Triangular)
    }
}

/// Ordered unknown blocks `(δγ?, δu_1, …, δu_J)`, one grid function each.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnknownLayout {
    pub grid: Grid,
    pub functionals: usize,
    pub has_gamma: bool,
}

impl UnknownLayout {
    pub fn block_count(&self) -> usize {
        self.functionals + usize::from(self.has_gamma)
    }

    pub fn len(&self) -> usize {
        self.block_count() * self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn offset(&self, block: usize) -> usize {
        block * self.grid.len()
    }

    /// Block holding `δu_j`.
    pub fn u_block(&self, j: usize) -> usize {
        j + usize::from(self.has_gamma)
    }

    pub fn index(&self, block: usize, node: usize) -> usize {
        self.offset(block) + node
    }

    pub fn block<'a>(&self, v: &'a [f64], block: usize) -> &'a [f64] {
        let n = self.grid.len();
        &v[block * n..(block + 1) * n]
    }
}

/// Which equation a block of rows discretizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EquationTag {
    Pde { j: usize },
    Functional { j: usize },
    Principal { j: usize },
    Constraint { j: usize, k: usize },
    ConstraintGradient { j: usize, k: usize, axis: usize },
    Triangular { j: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquationBlock {
    pub tag: EquationTag,
    pub rows: Range<usize>,
    /// Grid node of each row.
    pub nodes: Vec<usize>,
}

/// A sparse linearized system with its row and unknown bookkeeping.
#[derive(Clone, Debug)]
pub struct LinearOperator {
    kind: SystemKind,
    layout: UnknownLayout,
    matrix: CsrMatrix,
    blocks: Vec<EquationBlock>,
    row_scale: Vec<f64>,
    base: BaseState,
}

fn interior_nodes(g: &Grid) -> Vec<usize> {
    (0..g.len()).filter(|&i| g.layer(i) >= 1).collect()
}

fn deep_nodes(g: &Grid) -> Vec<usize> {
    (0..g.len()).filter(|&i| g.layer(i) >= 2).collect()
}

fn all_nodes(g: &Grid) -> Vec<usize> {
    (0..g.len()).collect()
}

struct Builder {
    t: Triplets,
    blocks: Vec<EquationBlock>,
    row: usize,
    n: usize,
}

impl Builder {
    fn new(nrows: usize, ncols: usize, n: usize) -> Self {
        Builder {
            t: Triplets::new(nrows, ncols),
            blocks: Vec::new(),
            row: 0,
            n,
        }
    }

    /// Adds a row block: for each `(matrix, column block, scale)` the rows of
    /// the node-indexed `matrix` at `nodes`.
    fn block(&mut self, tag: EquationTag, nodes: Vec<usize>, parts: &[(&CsrMatrix, usize, f64)]) {
        for (r, &i) in nodes.iter().enumerate() {
            for &(m, cb, s) in parts {
                let (cols, vals) = m.row(i);
                for (&c, &v) in cols.iter().zip(vals) {
                    self.t.push(self.row + r, cb * self.n + c, s * v);
                }
            }
        }
        let rows = self.row..self.row + nodes.len();
        self.row += nodes.len();
        self.blocks.push(EquationBlock { tag, rows, nodes });
    }
}

fn row_count(kind: SystemKind, g: &Grid, j: usize) -> usize {
    let (ni, nd, na) = (interior_nodes(g).len(), deep_nodes(g).len(), g.len());
    let pairs = j * (j - 1) / 2;
    match kind {
        SystemKind::First => j * (ni + na),
        SystemKind::Triangular => j * (ni + nd),
        SystemKind::Eliminated => j * ni + pairs * na,
        SystemKind::Eliminated2 => j * ni + pairs * na * g.dim(),
    }
}

fn diag(d: &[f64]) -> CsrMatrix {
    CsrMatrix::diagonal(d)
}

/// Per-row factors `1/median(max_j |a_ij|)` over the rows of each block.
fn block_scales(m: &CsrMatrix, blocks: &[EquationBlock]) -> Vec<f64> {
    let rm = m.row_max_abs();
    let mut out = vec![1.0; m.nrows()];
    for b in blocks {
        let mut vals: Vec<f64> = rm[b.rows.clone()].iter().copied().filter(|v| *v > 0.0).collect();
        if vals.is_empty() {
            continue;
        }
        let mid = vals.len() / 2;
        vals.select_nth_unstable_by(mid, |a, b| a.total_cmp(b));
        let s = 1.0 / vals[mid];
        out[b.rows.clone()].iter_mut().for_each(|x| *x = s);
    }
    out
}

impl LinearOperator {
    fn finish(kind: SystemKind, base: &BaseState, b: Builder, ncols: usize) -> Self {
        let matrix = b.t.finish();
        debug_assert_eq!(matrix.ncols(), ncols);
        let row_scale = block_scales(&matrix, &b.blocks);
        LinearOperator {
            kind,
            layout: UnknownLayout {
                grid: base.grid,
                functionals: base.functionals(),
                has_gamma: kind.has_gamma(),
            },
            matrix,
            blocks: b.blocks,
            row_scale,
            base: base.clone(),
        }
    }

    pub fn kind(&self) -> SystemKind {
        self.kind
    }

    pub fn layout(&self) -> &UnknownLayout {
        &self.layout
    }

    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }

    pub fn blocks(&self) -> &[EquationBlock] {
        &self.blocks
    }

    pub fn base(&self) -> &BaseState {
        &self.base
    }

    pub fn nrows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.matrix.ncols()
    }

    /// Row factors giving each equation block unit median magnitude.
    pub fn row_scale(&self) -> &[f64] {
        &self.row_scale
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        self.matrix.matvec(v)
    }

    pub fn apply_transpose(&self, y: &[f64]) -> Vec<f64> {
        self.matrix.matvec_transpose(y)
    }

    /// `Av` evaluated from the stencils directly, without the sparse matrix.
    pub fn apply_matrix_free(&self, v: &[f64]) -> Vec<f64> {
        let base = &self.base;
        let g = &base.grid;
        let lay = &self.layout;
        let mut out = vec![0.0; self.nrows()];
        let pde = |j: usize| -> Vec<f64> {
            let dg = lay.block(v, 0);
            let du = lay.block(v, lay.u_block(j));
            let a = conductivity_gamma_apply(g, &base.gamma, &base.u[j], dg);
            let b = conductivity_apply(g, &base.gamma, du);
            a.iter().zip(&b).map(|(x, y)| x + y).collect()
        };
        let func = |j: usize| -> Vec<f64> {
            let dg = lay.block(v, 0);
            let ku = base.k_apply(j, lay.block(v, lay.u_block(j)));
            (0..g.len())
                .map(|i| base.grad_sq[j][i] * (dg[i] + ku[i]))
                .collect()
        };
        let principal = |j: usize| -> Vec<f64> {
            let du = lay.block(v, lay.u_block(j));
            let ku = base.k_apply(j, du);
            let a = conductivity_gamma_apply(g, &base.gamma, &base.u[j], &ku);
            let b = conductivity_apply(g, &base.gamma, du);
            a.iter().zip(&b).map(|(x, y)| x - y).collect()
        };
        let constraint = |j: usize, k: usize| -> Vec<f64> {
            let a = base.k_apply(j, lay.block(v, lay.u_block(j)));
            let b = base.k_apply(k, lay.block(v, lay.u_block(k)));
            a.iter().zip(&b).map(|(x, y)| x - y).collect()
        };
        for blk in &self.blocks {
            let vals: Vec<f64> = match blk.tag {
                EquationTag::Pde { j } => pde(j),
                EquationTag::Functional { j } => func(j),
                EquationTag::Principal { j } => principal(j),
                EquationTag::Constraint { j, k } => constraint(j, k),
                EquationTag::ConstraintGradient { j, k, axis } => partial(g, &constraint(j, k), axis),
                EquationTag::Triangular { j } => {
                    let f = func(j);
                    let w: Vec<f64> = f.iter().zip(&base.grad_sq[j]).map(|(a, b)| a / b).collect();
                    let a = conductivity_apply(g, &base.gamma, &w);
                    let b = base.k_apply(j, &pde(j));
                    a.iter().zip(&b).map(|(x, y)| x - y).collect()
                }
            };
            for (r, &node) in blk.rows.clone().zip(&blk.nodes) {
                out[r] = vals[node];
            }
        }
        out
    }

    /// Right-hand side for data increments `δH_j`, optionally smoothed by one
    /// Jacobi pass first.
    pub fn rhs(&self, dh: &[ScalarField], smooth: bool) -> Result<Vec<f64>> {
        let base = &self.base;
        let g = &base.grid;
        if dh.len() != base.functionals() {
            return Err(Error::InvalidInput("one data increment per functional is required".into()));
        }
        let data: Vec<Vec<f64>> = dh
            .iter()
            .map(|d| {
                if d.grid() != g {
                    return Err(Error::GridMismatch);
                }
                Ok(if smooth {
                    jacobi_smooth(g, d.values())
                } else {
                    d.values().to_vec()
                })
            })
            .collect::<Result<_>>()?;
        let scaled: Vec<Vec<f64>> = data
            .iter()
            .enumerate()
            .map(|(j, d)| d.iter().zip(&base.grad_sq[j]).map(|(a, b)| a / b).collect())
            .collect();
        let mut out = vec![0.0; self.nrows()];
        for blk in &self.blocks {
            let vals: Option<Vec<f64>> = match blk.tag {
                EquationTag::Pde { .. } => None,
                EquationTag::Functional { j } => Some(data[j].clone()),
                EquationTag::Principal { j } => {
                    Some(conductivity_gamma_apply(g, &base.gamma, &base.u[j], &scaled[j]))
                }
                EquationTag::Constraint { j, k } => {
                    Some(scaled[j].iter().zip(&scaled[k]).map(|(a, b)| a - b).collect())
                }
                EquationTag::ConstraintGradient { j, k, axis } => {
                    let c: Vec<f64> = scaled[j].iter().zip(&scaled[k]).map(|(a, b)| a - b).collect();
                    Some(partial(g, &c, axis))
                }
                EquationTag::Triangular { j } => Some(conductivity_apply(g, &base.gamma, &scaled[j])),
            };
            if let Some(vals) = vals {
                for (r, &node) in blk.rows.clone().zip(&blk.nodes) {
                    out[r] = vals[node];
                }
            }
        }
        Ok(out)
    }
}

/// `[∂_γL_j δγ + L_γ δu_j; |F_j|²δγ + 2γF_j·∇δu_j]` for each `j`.
pub fn assemble_first_order_linearization(base: &BaseState) -> LinearOperator {
    let g = base.grid;
    let j = base.functionals();
    let ncols = (j + 1) * g.len();
    let mut b = Builder::new(row_count(SystemKind::First, &g, j), ncols, g.len());
    for jj in 0..j {
        b.block(
            EquationTag::Pde { j: jj },
            interior_nodes(&g),
            &[(&base.jg[jj], 0, 1.0), (&base.lg, jj + 1, 1.0)],
        );
        let f2 = diag(&base.grad_sq[jj]);
        let fk = f2.matmul(&base.k[jj]);
        b.block(
            EquationTag::Functional { j: jj },
            all_nodes(&g),
            &[(&f2, 0, 1.0), (&fk, jj + 1, 1.0)],
        );
    }
    LinearOperator::finish(SystemKind::First, base, b, ncols)
}

/// Systems in `{δu_j}` alone after eliminating `δγ` with the functional rows.
/// `second_order` selects the gradient form of the constraints.
pub fn assemble_eliminated_system(base: &BaseState, second_order: bool) -> Result<LinearOperator> {
    let g = base.grid;
    let j = base.functionals();
    if j < 2 {
        return Err(Error::NeedAtLeastTwoFunctionals);
    }
    let kind = if second_order {
        SystemKind::Eliminated2
    } else {
        SystemKind::Eliminated
    };
    let ncols = j * g.len();
    let mut b = Builder::new(row_count(kind, &g, j), ncols, g.len());
    for jj in 0..j {
        let p = base.jg[jj].matmul(&base.k[jj]).add_scaled(1.0, &base.lg, -1.0);
        b.block(EquationTag::Principal { j: jj }, interior_nodes(&g), &[(&p, jj, 1.0)]);
    }
    for a in 0..j {
        for c in a + 1..j {
            if second_order {
                for d in 0..g.dim() {
                    let ka = base.gd[d].matmul(&base.k[a]);
                    let kc = base.gd[d].matmul(&base.k[c]);
                    b.block(
                        EquationTag::ConstraintGradient { j: a, k: c, axis: d },
                        all_nodes(&g),
                        &[(&ka, a, 1.0), (&kc, c, -1.0)],
                    );
                }
            } else {
                b.block(
                    EquationTag::Constraint { j: a, k: c },
                    all_nodes(&g),
                    &[(&base.k[a], a, 1.0), (&base.k[c], c, -1.0)],
                );
            }
        }
    }
    Ok(LinearOperator::finish(kind, base, b, ncols))
}

/// The first-order PDE rows together with
/// `L_γ|F_j|⁻²(functional row) − K_j(PDE row)` at nodes two layers in.
pub fn assemble_triangular_system(base: &BaseState) -> LinearOperator {
    let g = base.grid;
    let j = base.functionals();
    let ncols = (j + 1) * g.len();
    let mut b = Builder::new(row_count(SystemKind::Triangular, &g, j), ncols, g.len());
    let n = g.len();
    for jj in 0..j {
        // Full node-indexed rows of the first-order operator for functional jj.
        let mut pde = Triplets::new(n, ncols);
        let mut func = Triplets::new(n, ncols);
        let fk = diag(&base.grad_sq[jj]).matmul(&base.k[jj]);
        for i in 0..n {
            if g.layer(i) >= 1 {
                for (m, cb) in [(&base.jg[jj], 0), (&base.lg, jj + 1)] {
                    let (cols, vals) = m.row(i);
                    for (&c, &v) in cols.iter().zip(vals) {
                        pde.push(i, cb * n + c, v);
                    }
                }
            }
            func.push(i, i, base.grad_sq[jj][i]);
            let (cols, vals) = fk.row(i);
            for (&c, &v) in cols.iter().zip(vals) {
                func.push(i, (jj + 1) * n + c, v);
            }
        }
        let pde = pde.finish();
        let func = func.finish();
        let inv: Vec<f64> = base.grad_sq[jj].iter().map(|x| 1.0 / x).collect();
        let lhs = base.lg.matmul(&diag(&inv).matmul(&func));
        let rhs = base.k[jj].matmul(&pde);
        let tri = lhs.add_scaled(1.0, &rhs, -1.0);
        let interior = interior_nodes(&g);
        let deep = deep_nodes(&g);
        // Rows of a full-width matrix are added with column block 0.
        b.block(EquationTag::Pde { j: jj }, interior, &[(&pde, 0, 1.0)]);
        b.block(EquationTag::Triangular { j: jj }, deep, &[(&tri, 0, 1.0)]);
    }
    LinearOperator::finish(SystemKind::Triangular, base, b, ncols)
}

pub fn assemble(base: &BaseState, kind: SystemKind) -> Result<LinearOperator> {
    match kind {
        SystemKind::First => Ok(assemble_first_order_linearization(base)),
        SystemKind::Eliminated => assemble_eliminated_system(base, false),
        SystemKind::Eliminated2 => assemble_eliminated_system(base, true),
        SystemKind::Triangular => Ok(assemble_triangular_system(base)),
    }
}
