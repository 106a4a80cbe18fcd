//! Least-squares normal equations `AᵗA v = AᵗS` with boundary values and
//! normal derivatives prescribed per unknown block.
//!
//! Constrained unknowns are eliminated: boundary nodes take their Dirichlet
//! values and, for Cauchy blocks, nodes one layer in are fixed by the
//! one-sided normal-derivative stencil `(3v_b − 4v₁ + v₂)/(2h) = φ₁`. Writing
//! `v = P z + v_φ` with `z` the remaining unknowns, the system solved is
//! `(AP)ᵗ(AP) z + λz = (AP)ᵗ(S − A v_φ)`.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{LinearOperator, UnknownLayout};
use crate::diff::normal_trace;
use crate::error::{Error, Result};
use crate::field::{BoundaryData, ScalarField, TraceKind};
use crate::grid::{Face, Grid};
use crate::linalg::{smallest_eigenpair, EnvelopeCholesky};
use crate::sparse::{CsrMatrix, Triplets};
use crate::vecmath::dot;

const REFINEMENT_STEPS: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BcKind {
    None,
    Dirichlet,
    Cauchy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum BlockCondition {
    Free,
    Dirichlet(BoundaryData),
    Cauchy { value: BoundaryData, normal: BoundaryData },
}

impl BlockCondition {
    pub fn kind(&self) -> BcKind {
        match self {
            BlockCondition::Free => BcKind::None,
            BlockCondition::Dirichlet(_) => BcKind::Dirichlet,
            BlockCondition::Cauchy { .. } => BcKind::Cauchy,
        }
    }
}

/// One condition per unknown block, in layout order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryConditionSet {
    pub blocks: Vec<BlockCondition>,
}

impl BoundaryConditionSet {
    /// Builds conditions from optional traces; a Cauchy block without both
    /// traces is an error.
    pub fn from_traces(
        kinds: &[BcKind],
        values: &[Option<BoundaryData>],
        normals: &[Option<BoundaryData>],
    ) -> Result<Self> {
        let mut blocks = Vec::new();
        for (b, kind) in kinds.iter().enumerate() {
            let v = values.get(b).cloned().flatten();
            let n = normals.get(b).cloned().flatten();
            blocks.push(match kind {
                BcKind::None => BlockCondition::Free,
                BcKind::Dirichlet => {
                    BlockCondition::Dirichlet(v.ok_or(Error::MissingCauchyData { block: b })?)
                }
                BcKind::Cauchy => match (v, n) {
                    (Some(value), Some(normal)) => BlockCondition::Cauchy { value, normal },
                    _ => return Err(Error::MissingCauchyData { block: b }),
                },
            });
        }
        Ok(BoundaryConditionSet { blocks })
    }

    /// Zero traces of the given kind on every block.
    pub fn homogeneous(layout: &UnknownLayout, kind: BcKind) -> Self {
        let g = layout.grid;
        let blocks = (0..layout.block_count())
            .map(|_| match kind {
                BcKind::None => BlockCondition::Free,
                BcKind::Dirichlet => BlockCondition::Dirichlet(BoundaryData::zeros(g, TraceKind::Dirichlet)),
                BcKind::Cauchy => BlockCondition::Cauchy {
                    value: BoundaryData::zeros(g, TraceKind::Dirichlet),
                    normal: BoundaryData::zeros(g, TraceKind::Neumann),
                },
            })
            .collect();
        BoundaryConditionSet { blocks }
    }

    /// The discrete traces of a full unknown vector.
    pub fn traces_of(layout: &UnknownLayout, v: &[f64], kinds: &[BcKind]) -> Self {
        let g = layout.grid;
        let blocks = kinds
            .iter()
            .enumerate()
            .map(|(b, kind)| {
                let f = ScalarField::from_vec(g, layout.block(v, b).to_vec());
                match kind {
                    BcKind::None => BlockCondition::Free,
                    BcKind::Dirichlet => BlockCondition::Dirichlet(f.trace()),
                    BcKind::Cauchy => BlockCondition::Cauchy {
                        value: f.trace(),
                        normal: normal_trace(&f),
                    },
                }
            })
            .collect();
        BoundaryConditionSet { blocks }
    }

    pub fn kinds(&self) -> Vec<BcKind> {
        self.blocks.iter().map(|b| b.kind()).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NormalOptions {
    /// Shift `λ` added to the normal matrix.
    pub tikhonov: f64,
    /// Scale each equation block to unit median row magnitude.
    pub scale_rows: bool,
}

impl Default for NormalOptions {
    fn default() -> Self {
        NormalOptions {
            tikhonov: 0.0,
            scale_rows: true,
        }
    }
}

/// How a constrained node depends on others: `v_i = Σ w·v_src + Σ w·φ`.
#[derive(Clone, Debug)]
struct Rule {
    index: usize,
    /// `(face, boundary node, second inward node)` contributions averaged.
    terms: Vec<(Face, usize, usize)>,
}

#[derive(Clone, Debug)]
pub struct NormalSystem {
    layout: UnknownLayout,
    kinds: Vec<BcKind>,
    /// Global unknown index of each reduced unknown.
    free: Vec<usize>,
    /// Ring rules per block, in dependency order.
    rules: Vec<Vec<Rule>>,
    p: CsrMatrix,
    scale: Vec<f64>,
    a_scaled: CsrMatrix,
    ap: CsrMatrix,
    matrix: CsrMatrix,
    factor: EnvelopeCholesky,
    opts: NormalOptions,
}

fn ring_rules(g: &Grid) -> Vec<Rule> {
    let mut rules: Vec<(usize, Rule)> = Vec::new();
    for i in 0..g.len() {
        if g.layer(i) != 1 {
            continue;
        }
        let m = g.multi_index(i);
        let mut terms = Vec::new();
        for d in 0..g.dim() {
            for high in [false, true] {
                let dist = if high { g.n(d) - 1 - m[d] } else { m[d] };
                if dist == 1 {
                    let face = Face { axis: d, high };
                    // The node two steps out from the boundary is one step
                    // further inward from `i`.
                    let b = if high { i + g.stride(d) } else { i - g.stride(d) };
                    terms.push((face, b, g.inward(face, b, 2)));
                }
            }
        }
        rules.push((terms.len(), Rule { index: i, terms }));
    }
    rules.sort_by_key(|r| r.0);
    rules.into_iter().map(|r| r.1).collect()
}

impl NormalSystem {
    pub fn new(op: &LinearOperator, kinds: &[BcKind], opts: NormalOptions) -> Result<Self> {
        let layout = *op.layout();
        let g = layout.grid;
        if kinds.len() != layout.block_count() {
            return Err(Error::InvalidInput("one boundary condition per unknown block is required".into()));
        }
        if kinds.contains(&BcKind::Cauchy) && g.shape().iter().any(|&n| n < 6) {
            return Err(Error::InvalidGrid("Cauchy constraints need at least 6 nodes per axis".into()));
        }
        let n = g.len();
        let mut zindex = vec![usize::MAX; layout.len()];
        let mut free = Vec::new();
        for node in 0..n {
            let layer = g.layer(node);
            for (b, kind) in kinds.iter().enumerate() {
                let is_free = match kind {
                    BcKind::None => true,
                    BcKind::Dirichlet => layer >= 1,
                    BcKind::Cauchy => layer >= 2,
                };
                if is_free {
                    let gi = layout.index(b, node);
                    zindex[gi] = free.len();
                    free.push(gi);
                }
            }
        }
        let ring = ring_rules(&g);
        let rules: Vec<Vec<Rule>> = kinds
            .iter()
            .enumerate()
            .map(|(b, k)| {
                if *k == BcKind::Cauchy {
                    ring.iter()
                        .map(|r| Rule {
                            index: layout.index(b, r.index),
                            terms: r
                                .terms
                                .iter()
                                .map(|&(f, bn, n2)| (f, layout.index(b, bn), layout.index(b, n2)))
                                .collect(),
                        })
                        .collect()
                } else {
                    Vec::new()
                }
            })
            .collect();
        // Rows of P: sparse combinations of reduced unknowns.
        let mut prow: Vec<Vec<(usize, f64)>> = vec![Vec::new(); layout.len()];
        for (zi, &gi) in free.iter().enumerate() {
            prow[gi] = vec![(zi, 1.0)];
        }
        for block_rules in &rules {
            for r in block_rules {
                let w = 0.25 / r.terms.len() as f64;
                let mut acc: Vec<(usize, f64)> = Vec::new();
                for &(_, _, n2) in &r.terms {
                    for &(zi, c) in &prow[n2] {
                        acc.push((zi, w * c));
                    }
                }
                acc.sort_by_key(|e| e.0);
                let mut merged: Vec<(usize, f64)> = Vec::new();
                for (zi, c) in acc {
                    match merged.last_mut() {
                        Some(last) if last.0 == zi => last.1 += c,
                        _ => merged.push((zi, c)),
                    }
                }
                prow[r.index] = merged;
            }
        }
        let mut t = Triplets::new(layout.len(), free.len());
        for (gi, row) in prow.iter().enumerate() {
            for &(zi, c) in row {
                t.push(gi, zi, c);
            }
        }
        let p = t.finish();
        let scale = if opts.scale_rows {
            op.row_scale().to_vec()
        } else {
            vec![1.0; op.nrows()]
        };
        let mut a_scaled = op.matrix().clone();
        a_scaled.scale_rows(&scale);
        let ap = a_scaled.matmul(&p);
        let mut matrix = ap.transpose().matmul(&ap);
        if opts.tikhonov != 0.0 {
            matrix = matrix.add_scaled(1.0, &CsrMatrix::identity(free.len()), opts.tikhonov);
        }
        let factor = EnvelopeCholesky::factor(&matrix)?;
        Ok(NormalSystem {
            layout,
            kinds: kinds.to_vec(),
            free,
            rules,
            p,
            scale,
            a_scaled,
            ap,
            matrix,
            factor,
            opts,
        })
    }

    pub fn layout(&self) -> &UnknownLayout {
        &self.layout
    }

    pub fn kinds(&self) -> &[BcKind] {
        &self.kinds
    }

    pub fn reduced_len(&self) -> usize {
        self.free.len()
    }

    /// The reduced normal matrix `(AP)ᵗ(AP) + λI`.
    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }

    /// Scaled operator restricted to the reduced unknowns, `S A P`.
    pub fn reduced_operator(&self) -> &CsrMatrix {
        &self.ap
    }

    /// Embedding `P` of reduced unknowns into full unknown vectors.
    pub fn embedding(&self) -> &CsrMatrix {
        &self.p
    }

    pub fn options(&self) -> &NormalOptions {
        &self.opts
    }

    /// The affine part `v_φ` fixed by boundary data.
    pub fn lift(&self, bc: &BoundaryConditionSet) -> Result<Vec<f64>> {
        if bc.kinds() != self.kinds {
            return Err(Error::InvalidInput("boundary conditions differ from the assembled kinds".into()));
        }
        let g = self.layout.grid;
        let mut v = vec![0.0; self.layout.len()];
        for (b, cond) in bc.blocks.iter().enumerate() {
            let value = match cond {
                BlockCondition::Free => continue,
                BlockCondition::Dirichlet(v) => v,
                BlockCondition::Cauchy { value, .. } => value,
            };
            if value.grid() != &g {
                return Err(Error::GridMismatch);
            }
            for node in 0..g.len() {
                if g.is_boundary(node) {
                    v[self.layout.index(b, node)] = value.nodal(node);
                }
            }
            if let BlockCondition::Cauchy { normal, .. } = cond {
                if normal.grid() != &g {
                    return Err(Error::GridMismatch);
                }
                let off = self.layout.offset(b);
                for r in &self.rules[b] {
                    let mut acc = 0.0;
                    for &(face, bn, n2) in &r.terms {
                        let h = g.h(face.axis);
                        acc += 3.0 * v[bn] + v[n2] - 2.0 * h * normal.value(face, bn - off);
                    }
                    v[r.index] = 0.25 * acc / r.terms.len() as f64;
                }
            }
        }
        Ok(v)
    }

    /// Solves for the full unknown vector given the (unscaled) right-hand
    /// side and boundary data.
    pub fn solve(&self, rhs: &[f64], bc: &BoundaryConditionSet) -> Result<Vec<f64>> {
        if rhs.len() != self.a_scaled.nrows() {
            return Err(Error::InvalidInput("right-hand side length differs from the row count".into()));
        }
        let vphi = self.lift(bc)?;
        let av = self.a_scaled.matvec(&vphi);
        let r: Vec<f64> = rhs
            .iter()
            .zip(&self.scale)
            .zip(&av)
            .map(|((b, s), a)| b * s - a)
            .collect();
        let mut z = self.factor.solve(&self.ap.matvec_transpose(&r));
        // Corrected semi-normal refinement recovers the accuracy lost to
        // squaring the condition number.
        for _ in 0..REFINEMENT_STEPS {
            let apz = self.ap.matvec(&z);
            let res: Vec<f64> = r.iter().zip(&apz).map(|(a, b)| a - b).collect();
            let mut g = self.ap.matvec_transpose(&res);
            g.iter_mut().zip(&z).for_each(|(a, b)| *a -= self.opts.tikhonov * b);
            let dz = self.factor.solve(&g);
            z.iter_mut().zip(&dz).for_each(|(a, b)| *a += b);
        }
        if z.iter().any(|x| !x.is_finite()) {
            return Err(Error::LinearSolveFailure("normal solve produced non-finite values".into()));
        }
        let mut v = self.p.matvec(&z);
        v.iter_mut().zip(&vphi).for_each(|(a, b)| *a += b);
        Ok(v)
    }

    /// Smallest eigenvalue of the reduced normal matrix and its eigenvector
    /// expanded to full unknowns (with homogeneous boundary data).
    pub fn smallest_eigenpair(&self, iterations: usize) -> (f64, Vec<f64>) {
        let (l, z) = smallest_eigenpair(&self.matrix, &self.factor, iterations);
        (l, self.p.matvec(&z))
    }

    /// Square form of the constrained normal equations over all unknowns:
    /// rows of `AᵗA` (scaled, shifted) at free unknowns, value rows at
    /// boundary nodes and normal-derivative rows one layer in. Returns the
    /// matrix and its right-hand side.
    pub fn square_form(&self, rhs: &[f64], bc: &BoundaryConditionSet) -> Result<(CsrMatrix, Vec<f64>)> {
        let vphi = self.lift(bc)?;
        let ata = self.a_scaled.transpose().matmul(&self.a_scaled);
        let srhs: Vec<f64> = rhs.iter().zip(&self.scale).map(|(b, s)| b * s).collect();
        let atb = self.a_scaled.matvec_transpose(&srhs);
        let nv = self.layout.len();
        let mut t = Triplets::new(nv, nv);
        let mut b = vec![0.0; nv];
        let mut is_free = vec![false; nv];
        for &gi in &self.free {
            is_free[gi] = true;
            let (cols, vals) = ata.row(gi);
            for (&c, &v) in cols.iter().zip(vals) {
                t.push(gi, c, v);
            }
            if self.opts.tikhonov != 0.0 {
                t.push(gi, gi, self.opts.tikhonov);
            }
            b[gi] = atb[gi];
        }
        let mut ruled = vec![false; nv];
        for block_rules in &self.rules {
            for r in block_rules {
                ruled[r.index] = true;
                let w = 0.25 / r.terms.len() as f64;
                t.push(r.index, r.index, 1.0);
                let mut rest = vphi[r.index];
                for &(_, bn, n2) in &r.terms {
                    t.push(r.index, bn, -3.0 * w);
                    t.push(r.index, n2, -w);
                    rest -= w * (3.0 * vphi[bn] + vphi[n2]);
                }
                b[r.index] = rest;
            }
        }
        for gi in 0..nv {
            if !is_free[gi] && !ruled[gi] {
                t.push(gi, gi, 1.0);
                b[gi] = vphi[gi];
            }
        }
        Ok((t.finish(), b))
    }

    /// `‖S(Av − rhs)‖₂` with the row scaling used in the solve.
    pub fn scaled_residual(&self, v: &[f64], rhs: &[f64]) -> f64 {
        let av = self.a_scaled.matvec(v);
        let r: Vec<f64> = av
            .iter()
            .zip(rhs.iter().zip(&self.scale))
            .map(|(a, (b, s))| a - b * s)
            .collect();
        libm::sqrt(dot(&r, &r))
    }
}
