//! Fixed-point reconstruction of `γ` from power densities and Neumann data.
//!
//! With `R` the nonlinear residual of the chosen system, built so that
//! `R(v₀) = 0` for data generated at `v₀` and `∂R/∂v = A`, each iterate solves
//! the constrained normal equations for
//!
//! `A(v^{k+1} − b) ≈ A(v^k − b) − R(v^k)`
//!
//! around a base `b`: the initial state `v₀` (frozen) or the current iterate
//! (refreshed). Boundary values of `δu_j` come from the Dirichlet data and
//! the measured Neumann traces; those of `δγ` are recovered from the first
//! functional.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::diff::{boundary_l2, conductivity_apply, normal_trace, partial, weighted_l2};
use crate::error::{Error, Result};
use crate::field::{BoundaryData, ScalarField};
use crate::forward::{power_density, synthesize_dataset, ConductivitySolver, Dataset, SolverOptions};
use crate::grid::Grid;
use crate::linearized::{
    assemble, recover_boundary_dgamma, BaseState, BcKind, BlockCondition, BoundaryConditionSet, CauchyData,
    EquationTag, LinearOperator, NormalOptions, NormalSystem, SystemKind, DEFAULT_CHARACTERISTIC_TOLERANCE,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SystemVariant {
    Triangular,
    Eliminated2,
}

impl SystemVariant {
    pub fn kind(self) -> SystemKind {
        match self {
            SystemVariant::Triangular => SystemKind::Triangular,
            SystemVariant::Eliminated2 => SystemKind::Eliminated2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReconstructionConfig {
    pub functionals: usize,
    pub system_variant: SystemVariant,
    pub max_iter: usize,
    /// Stop once `‖w^{k+1} − w^k‖ ≤ tol_rel·‖w^{k+1}‖`, or once the
    /// increment reaches roundoff relative to the iterate.
    pub tol_rel: f64,
    pub gradient_floor: f64,
    pub solver: SolverOptions,
    pub tikhonov: f64,
    /// Re-linearize at every iterate instead of keeping `v₀`.
    pub refresh_linearization: bool,
    /// One Jacobi pass over the data before differentiating it.
    pub smooth_data: bool,
    pub characteristic_tolerance: f64,
}

impl Default for ReconstructionConfig {
    fn default() -> Self {
        ReconstructionConfig {
            functionals: 2,
            system_variant: SystemVariant::Triangular,
            max_iter: 50,
            tol_rel: 1e-8,
            gradient_floor: crate::forward::DEFAULT_GRADIENT_FLOOR,
            solver: SolverOptions::default(),
            tikhonov: 0.0,
            refresh_linearization: false,
            smooth_data: false,
            characteristic_tolerance: DEFAULT_CHARACTERISTIC_TOLERANCE,
        }
    }
}

impl ReconstructionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iter < 1 {
            return Err(Error::InvalidInput("max_iter must be at least 1".into()));
        }
        if !(self.tol_rel > 0.0) || !(self.gradient_floor > 0.0) {
            return Err(Error::InvalidInput("tolerances must be positive".into()));
        }
        if !(self.tikhonov >= 0.0) {
            return Err(Error::InvalidInput("tikhonov shift must be non-negative".into()));
        }
        if self.functionals == 0 {
            return Err(Error::InvalidInput("at least one functional is required".into()));
        }
        Ok(())
    }
}

/// Dirichlet conditions with the measured power densities and Neumann
/// traces of the corresponding solutions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Measurements {
    pub dirichlet: Vec<BoundaryData>,
    pub h: Vec<ScalarField>,
    pub neumann: Vec<BoundaryData>,
}

impl Measurements {
    pub fn from_dataset(dirichlet: &[BoundaryData], ds: &Dataset) -> Self {
        Measurements {
            dirichlet: dirichlet.to_vec(),
            h: ds.h.clone(),
            neumann: ds.g.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.h.len()
    }

    pub fn is_empty(&self) -> bool {
        self.h.is_empty()
    }

    fn check(&self, grid: &Grid, functionals: usize) -> Result<()> {
        if self.h.len() != functionals || self.dirichlet.len() != functionals || self.neumann.len() != functionals {
            return Err(Error::InvalidInput("one Dirichlet condition, power density and Neumann trace per functional".into()));
        }
        for j in 0..functionals {
            if self.h[j].grid() != grid || self.dirichlet[j].grid() != grid || self.neumann[j].grid() != grid {
                return Err(Error::GridMismatch);
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Converged,
    Stalled,
    Diverged,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionReport {
    pub system: SystemVariant,
    pub iterate_count: usize,
    /// `‖w^{k+1} − w^k‖`.
    pub increments: Vec<f64>,
    /// `‖F(v₀ + w^k) − (0, H)‖` over PDE and functional rows.
    pub residuals: Vec<f64>,
    /// `(Σ_j ‖γ|∇u_j|² − H_j‖²)^{1/2}`.
    pub data_misfits: Vec<f64>,
    /// `(Σ_j ‖∂_ν u_j − g_j‖²)^{1/2}` on the boundary.
    pub boundary_misfits: Vec<f64>,
    pub gamma: ScalarField,
    pub u: Vec<ScalarField>,
    pub verdict: Verdict,
    /// Largest `‖I(w) − I(0)‖/‖w‖²` seen along the iterates.
    pub c1: f64,
    /// Largest `‖I(w) − I(w̃)‖/((‖w‖+‖w̃‖)‖w − w̃‖)` over consecutive iterates.
    pub c2: f64,
}

/// Nodewise `L(γ,u_j)` (zero on the boundary) and `γ|∇u_j|²`.
pub fn first_order_forward(grid: &Grid, gamma: &[f64], u: &[Vec<f64>]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut pde = Vec::new();
    let mut func = Vec::new();
    for uj in u {
        pde.push(conductivity_apply(grid, gamma, uj));
        let grads: Vec<Vec<f64>> = (0..grid.dim()).map(|d| partial(grid, uj, d)).collect();
        func.push(
            (0..grid.len())
                .map(|i| gamma[i] * grads.iter().map(|c| c[i] * c[i]).sum::<f64>())
                .collect(),
        );
    }
    (pde, func)
}

/// Scatters nodewise values per equation tag into the operator's row order.
fn place(op: &LinearOperator, mut rows: impl FnMut(EquationTag) -> Vec<f64>) -> Vec<f64> {
    let mut out = vec![0.0; op.nrows()];
    for blk in op.blocks() {
        let vals = rows(blk.tag);
        for (r, &n) in blk.rows.clone().zip(&blk.nodes) {
            out[r] = vals[n];
        }
    }
    out
}

fn check_state(grid: &Grid, gamma: &[f64], u: &[Vec<f64>], floor: f64) -> Result<()> {
    for (node, &value) in gamma.iter().enumerate() {
        if !(value > 0.0) {
            return Err(Error::NonPositiveConductivity { node, value, floor: 0.0 });
        }
    }
    for (j, uj) in u.iter().enumerate() {
        let grads: Vec<Vec<f64>> = (0..grid.dim()).map(|d| partial(grid, uj, d)).collect();
        for node in 0..grid.len() {
            let m = libm::sqrt(grads.iter().map(|c| c[node] * c[node]).sum::<f64>());
            if !(m >= floor) {
                return Err(Error::GradientFloorViolation {
                    functional: j,
                    node,
                    magnitude: m,
                    floor,
                });
            }
        }
    }
    Ok(())
}

fn split(grid: &Grid, functionals: usize, v: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = grid.len();
    let gamma = v[..n].to_vec();
    let u = (0..functionals).map(|j| v[(j + 1) * n..(j + 2) * n].to_vec()).collect();
    (gamma, u)
}

/// The transformed nonlinear map whose linearization at `base` is the
/// triangular system: `[L(γ,u_j); L_b(|F_b,j|⁻² γ|∇u_j|²) − K_b,j L(γ,u_j)]`
/// with `L_b` and `K_b,j` frozen at `base`. `state` is `(γ, u_1, …, u_J)`.
pub fn modified_forward(base: &BaseState, state: &[f64], gradient_floor: f64) -> Result<Vec<f64>> {
    let g = *base.grid();
    let j = base.functionals();
    if state.len() != (j + 1) * g.len() {
        return Err(Error::InvalidInput("state must hold γ and one u_j per functional".into()));
    }
    let (gamma, u) = split(&g, j, state);
    check_state(&g, &gamma, &u, gradient_floor)?;
    let (pde, func) = first_order_forward(&g, &gamma, &u);
    let op = assemble(base, SystemKind::Triangular)?;
    Ok(transformed_rows(&op, base, &pde, &func))
}

fn transformed_rows(op: &LinearOperator, base: &BaseState, pde: &[Vec<f64>], func: &[Vec<f64>]) -> Vec<f64> {
    place(op, |tag| match tag {
        EquationTag::Pde { j } => pde[j].clone(),
        EquationTag::Triangular { j } => {
            let w: Vec<f64> = func[j].iter().zip(base.grad_sq(j)).map(|(a, b)| a / b).collect();
            let l = base.conductivity().matvec(&w);
            let k = base.k(j).matvec(&pde[j]);
            l.iter().zip(&k).map(|(a, b)| a - b).collect()
        }
        _ => unreachable!("triangular systems hold PDE and transformed rows only"),
    })
}

/// Right-hand side of the transformed map for data `H`: zero PDE rows and
/// `L_b(|F_b,j|⁻² H_j)`.
pub fn modified_data(base: &BaseState, h: &[ScalarField]) -> Result<Vec<f64>> {
    let op = assemble(base, SystemKind::Triangular)?;
    let zero = vec![vec![0.0; base.grid().len()]; base.functionals()];
    let hv: Vec<Vec<f64>> = h.iter().map(|x| x.values().to_vec()).collect();
    Ok(transformed_rows(&op, base, &zero, &hv))
}

/// Residual of the eliminated second-order system at `u`, with
/// `γ_j = H_j/|∇u_j|²`: `[−L(γ_j,u_j); −∇(γ_j − γ_k)]`.
fn eliminated_residual(op: &LinearOperator, u: &[Vec<f64>], h: &[Vec<f64>], floor: f64) -> Result<Vec<f64>> {
    let g = op.layout().grid;
    let gam = gamma_estimates(&g, u, h, floor)?;
    Ok(place(op, |tag| match tag {
        EquationTag::Principal { j } => conductivity_apply(&g, &gam[j], &u[j]).iter().map(|x| -x).collect(),
        EquationTag::ConstraintGradient { j, k, axis } => {
            let d: Vec<f64> = gam[j].iter().zip(&gam[k]).map(|(a, b)| a - b).collect();
            partial(&g, &d, axis).iter().map(|x| -x).collect()
        }
        _ => unreachable!("second-order eliminated systems hold principal and constraint-gradient rows only"),
    }))
}

/// `H_j/|∇u_j|²` for each functional.
fn gamma_estimates(g: &Grid, u: &[Vec<f64>], h: &[Vec<f64>], floor: f64) -> Result<Vec<Vec<f64>>> {
    u.iter()
        .zip(h)
        .enumerate()
        .map(|(j, (uj, hj))| {
            let grads: Vec<Vec<f64>> = (0..g.dim()).map(|d| partial(g, uj, d)).collect();
            (0..g.len())
                .map(|i| {
                    let sq: f64 = grads.iter().map(|c| c[i] * c[i]).sum();
                    if !(libm::sqrt(sq) >= floor) {
                        return Err(Error::GradientFloorViolation {
                            functional: j,
                            node: i,
                            magnitude: libm::sqrt(sq),
                            floor,
                        });
                    }
                    Ok(hj[i] / sq)
                })
                .collect()
        })
        .collect()
}

/// One linearization: base state, operator and factored normal system.
struct Frame {
    base: BaseState,
    /// `(γ_b?, u_b,j)` in the operator's layout.
    state: Vec<f64>,
    op: LinearOperator,
    normal: NormalSystem,
}

struct Problem<'a> {
    grid: Grid,
    m: &'a Measurements,
    cfg: &'a ReconstructionConfig,
    data: Vec<Vec<f64>>,
    kinds: Vec<BcKind>,
}

impl<'a> Problem<'a> {
    fn has_gamma(&self) -> bool {
        self.cfg.system_variant == SystemVariant::Triangular
    }

    fn full_state(&self, gamma: &[f64], u: &[Vec<f64>]) -> Vec<f64> {
        let mut v = if self.has_gamma() { gamma.to_vec() } else { Vec::new() };
        for uj in u {
            v.extend_from_slice(uj);
        }
        v
    }

    /// `(γ, {u_j})` from an operator-layout state.
    fn fields(&self, v: &[f64]) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
        let n = self.grid.len();
        let j = self.cfg.functionals;
        if self.has_gamma() {
            Ok(split(&self.grid, j, v))
        } else {
            let u: Vec<Vec<f64>> = (0..j).map(|k| v[k * n..(k + 1) * n].to_vec()).collect();
            let gam = gamma_estimates(&self.grid, &u, &self.data, 0.0)?;
            Ok((gam[0].clone(), u))
        }
    }

    fn frame(&self, gamma: &[f64], u: &[Vec<f64>]) -> Result<Frame> {
        let gf = ScalarField::new(self.grid, gamma.to_vec())?;
        let uf: Vec<ScalarField> = u
            .iter()
            .map(|x| ScalarField::new(self.grid, x.clone()))
            .collect::<Result<_>>()?;
        let base = BaseState::new(&gf, &uf, self.cfg.gradient_floor)?;
        let op = assemble(&base, self.cfg.system_variant.kind())?;
        let normal = NormalSystem::new(
            &op,
            &self.kinds,
            NormalOptions {
                tikhonov: self.cfg.tikhonov,
                scale_rows: true,
            },
        )?;
        Ok(Frame {
            base,
            state: self.full_state(gamma, u),
            op,
            normal,
        })
    }

    fn residual(&self, fr: &Frame, v: &[f64]) -> Result<Vec<f64>> {
        let (gamma, u) = self.fields(v)?;
        if self.has_gamma() {
            check_state(&self.grid, &gamma, &u, self.cfg.gradient_floor)?;
            let (pde, func) = first_order_forward(&self.grid, &gamma, &u);
            let m = transformed_rows(&fr.op, &fr.base, &pde, &func);
            let zero = vec![vec![0.0; self.grid.len()]; u.len()];
            let d = transformed_rows(&fr.op, &fr.base, &zero, &self.data);
            Ok(m.iter().zip(&d).map(|(a, b)| a - b).collect())
        } else {
            eliminated_residual(&fr.op, &u, &self.data, self.cfg.gradient_floor)
        }
    }

    /// Cauchy data for the correction `z = v_new − b`.
    fn conditions(&self, fr: &Frame, v: &[f64]) -> Result<BoundaryConditionSet> {
        let j = self.cfg.functionals;
        let mut blocks = Vec::new();
        let mut du = Vec::new();
        for k in 0..j {
            let ub = ScalarField::new(self.grid, fr.base.u(k).to_vec())?;
            let value = self.m.dirichlet[k].zip_with(&ub.trace(), |a, b| a - b)?;
            let normal = self.m.neumann[k].zip_with(&normal_trace(&ub), |a, b| a - b)?;
            du.push(CauchyData { value, normal });
        }
        if self.has_gamma() {
            // Effective first-functional increment: H₁ − Func₁(v) + A_f(v − b).
            let (gamma, u) = self.fields(v)?;
            let (_, func) = first_order_forward(&self.grid, &gamma, &u);
            let n = self.grid.len();
            let dg: Vec<f64> = (0..n).map(|i| v[i] - fr.state[i]).collect();
            let du1: Vec<f64> = (0..n).map(|i| v[n + i] - fr.state[n + i]).collect();
            let ku = fr.base.k_apply(0, &du1);
            let dh: Vec<f64> = (0..n)
                .map(|i| self.data[0][i] - func[0][i] + fr.base.grad_sq(0)[i] * (dg[i] + ku[i]))
                .collect();
            let dh = ScalarField::new(self.grid, dh)?;
            let u1 = ScalarField::new(self.grid, fr.base.u(0).to_vec())?;
            let gb = ScalarField::new(self.grid, fr.base.gamma().to_vec())?;
            let rec = recover_boundary_dgamma(&dh, &u1, &gb, &du[0], self.cfg.characteristic_tolerance)?;
            blocks.push(BlockCondition::Cauchy {
                value: rec.value,
                normal: rec.normal,
            });
        }
        for c in du {
            blocks.push(BlockCondition::Cauchy {
                value: c.value,
                normal: c.normal,
            });
        }
        Ok(BoundaryConditionSet { blocks })
    }

    fn step(&self, fr: &Frame, v: &[f64]) -> Result<Vec<f64>> {
        let r = self.residual(fr, v)?;
        let dv: Vec<f64> = v.iter().zip(&fr.state).map(|(a, b)| a - b).collect();
        let adv = fr.op.apply(&dv);
        let rhs: Vec<f64> = adv.iter().zip(&r).map(|(a, b)| a - b).collect();
        let bc = self.conditions(fr, v)?;
        let z = fr.normal.solve(&rhs, &bc)?;
        Ok(z.iter().zip(&fr.state).map(|(a, b)| a + b).collect())
    }

    fn state_norm(&self, v: &[f64]) -> f64 {
        let n = self.grid.len();
        let s: f64 = v.chunks(n).map(|c| {
            let x = weighted_l2(&self.grid, c);
            x * x
        }).sum();
        libm::sqrt(s)
    }

    /// Residual, data misfit and boundary misfit of the first-order map.
    fn misfits(&self, v: &[f64]) -> Result<(f64, f64, f64)> {
        let (gamma, u) = self.fields(v)?;
        let (pde, func) = first_order_forward(&self.grid, &gamma, &u);
        let mut pde_sq = 0.0;
        let mut data_sq = 0.0;
        let mut bnd_sq = 0.0;
        for k in 0..u.len() {
            let p = weighted_l2(&self.grid, &pde[k]);
            let d: Vec<f64> = func[k].iter().zip(&self.data[k]).map(|(a, b)| a - b).collect();
            let d = weighted_l2(&self.grid, &d);
            pde_sq += p * p;
            data_sq += d * d;
            let uf = ScalarField::new(self.grid, u[k].clone())?;
            let b = boundary_l2(&normal_trace(&uf).zip_with(&self.m.neumann[k], |a, b| a - b)?);
            bnd_sq += b * b;
        }
        Ok((libm::sqrt(pde_sq + data_sq), libm::sqrt(data_sq), libm::sqrt(bnd_sq)))
    }
}

const ROUNDOFF_FLOOR: f64 = 1e3 * f64::EPSILON;

/// Runs the fixed-point iteration from the conductivity guess `gamma_guess`.
///
/// Divergence (three consecutive increment growths or a non-finite iterate)
/// ends the run with verdict [`Verdict::Diverged`]; the report is still
/// returned.
pub fn fixed_point_reconstruct(
    m: &Measurements,
    gamma_guess: &ScalarField,
    cfg: &ReconstructionConfig,
) -> Result<ReconstructionReport> {
    cfg.validate()?;
    let grid = *gamma_guess.grid();
    m.check(&grid, cfg.functionals)?;
    let data: Vec<Vec<f64>> = m
        .h
        .iter()
        .map(|h| {
            if cfg.smooth_data {
                crate::diff::jacobi_smooth(&grid, h.values())
            } else {
                h.values().to_vec()
            }
        })
        .collect();
    let nblocks = cfg.functionals + usize::from(cfg.system_variant == SystemVariant::Triangular);
    let p = Problem {
        grid,
        m,
        cfg,
        data,
        kinds: vec![BcKind::Cauchy; nblocks],
    };
    let ds0 = synthesize_dataset(gamma_guess, &m.dirichlet, cfg.gradient_floor, cfg.solver)?;
    let u0: Vec<Vec<f64>> = ds0.u.iter().map(|x| x.values().to_vec()).collect();
    let frozen = p.frame(gamma_guess.values(), &u0)?;
    let v0 = frozen.state.clone();
    let mut v = v0.clone();
    let mut w_prev = vec![0.0; v0.len()];
    let mut report = ReconstructionReport {
        system: cfg.system_variant,
        iterate_count: 0,
        increments: Vec::new(),
        residuals: Vec::new(),
        data_misfits: Vec::new(),
        boundary_misfits: Vec::new(),
        gamma: gamma_guess.clone(),
        u: ds0.u.clone(),
        verdict: Verdict::Stalled,
        c1: 0.0,
        c2: 0.0,
    };
    let mut first: Option<Vec<f64>> = None;
    let mut growth = 0;
    let mut wpp = 0.0;
    let mut refreshed: Option<Frame> = None;
    for _ in 0..cfg.max_iter {
        let next = {
            let fr = refreshed.as_ref().unwrap_or(&frozen);
            p.step(fr, &v)
        };
        let next = match next {
            Ok(x) if x.iter().all(|a| a.is_finite()) => x,
            Ok(_) => {
                report.verdict = Verdict::Diverged;
                break;
            }
            Err(e @ Error::LinearSolveFailure(_)) => return Err(e),
            Err(_) if report.iterate_count > 0 => {
                report.verdict = Verdict::Diverged;
                break;
            }
            Err(e) => return Err(e),
        };
        let w: Vec<f64> = next.iter().zip(&v0).map(|(a, b)| a - b).collect();
        let dw: Vec<f64> = w.iter().zip(&w_prev).map(|(a, b)| a - b).collect();
        let inc = p.state_norm(&dw);
        let wn = p.state_norm(&w);
        let wp = p.state_norm(&w_prev);
        match &first {
            None => first = Some(w.clone()),
            Some(w1) => {
                // I(w^k) − I(0) = w^{k+1} − w^1.
                let d: Vec<f64> = w.iter().zip(w1).map(|(a, b)| a - b).collect();
                if wp > 0.0 {
                    report.c1 = report.c1.max(p.state_norm(&d) / (wp * wp));
                }
                if let Some(&last) = report.increments.last() {
                    let denom = (wp + wpp) * last;
                    if denom > 0.0 {
                        report.c2 = report.c2.max(inc / denom);
                    }
                }
            }
        }
        if let Some(&last) = report.increments.last() {
            growth = if inc > last { growth + 1 } else { 0 };
        }
        report.increments.push(inc);
        let (res, dm, bm) = p.misfits(&next)?;
        report.residuals.push(res);
        report.data_misfits.push(dm);
        report.boundary_misfits.push(bm);
        report.iterate_count += 1;
        v = next;
        w_prev = w;
        wpp = wp;
        if inc <= cfg.tol_rel * wn || inc <= ROUNDOFF_FLOOR * p.state_norm(&v) {
            report.verdict = Verdict::Converged;
            break;
        }
        if growth >= 3 {
            report.verdict = Verdict::Diverged;
            break;
        }
        if cfg.refresh_linearization {
            // Re-base at the forward solution for the current conductivity so
            // the base satisfies the conductivity equation.
            let (gamma, _) = p.fields(&v)?;
            let gf = ScalarField::new(grid, gamma)?;
            let fresh = synthesize_dataset(&gf, &m.dirichlet, cfg.gradient_floor, cfg.solver).and_then(|ds| {
                let u: Vec<Vec<f64>> = ds.u.iter().map(|x| x.values().to_vec()).collect();
                p.frame(gf.values(), &u)
            });
            match fresh {
                Ok(fr) => {
                    v = fr.state.clone();
                    refreshed = Some(fr);
                }
                Err(_) => {
                    report.verdict = Verdict::Diverged;
                    break;
                }
            }
        }
    }
    let (gamma, u) = p.fields(&v)?;
    report.gamma = ScalarField::new(grid, gamma)?;
    report.u = u.into_iter().map(|x| ScalarField::new(grid, x)).collect::<Result<_>>()?;
    Ok(report)
}

/// Outcome of comparing two perturbed conductivities through the data.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InjectivityReport {
    /// `‖w − w̃‖` over `(δγ, {δu_j})`.
    pub state_distance: f64,
    /// `‖(H − H̃, g − g̃)‖`.
    pub data_distance: f64,
    /// `state_distance / data_distance`, zero when both vanish.
    pub ratio: f64,
    pub flagged: bool,
}

/// Solves the forward problem at `γ₀ + w` and `γ₀ + w̃` and compares the
/// distance between the states with that between their data.
pub fn local_injectivity_probe(
    gamma0: &ScalarField,
    dirichlet: &[BoundaryData],
    w: &ScalarField,
    w_tilde: &ScalarField,
    opts: SolverOptions,
    ceiling: f64,
) -> Result<InjectivityReport> {
    let g = *gamma0.grid();
    let a = gamma0.lin_comb(1.0, w, 1.0)?;
    let b = gamma0.lin_comb(1.0, w_tilde, 1.0)?;
    let sa = ConductivitySolver::new(&a, opts)?;
    let sb = ConductivitySolver::new(&b, opts)?;
    let dg: Vec<f64> = a.values().iter().zip(b.values()).map(|(x, y)| x - y).collect();
    let mut state_sq = {
        let x = weighted_l2(&g, &dg);
        x * x
    };
    let mut data_sq = 0.0;
    for f in dirichlet {
        let ua = sa.solve(f, None)?;
        let ub = sb.solve(f, None)?;
        let du: Vec<f64> = ua.values().iter().zip(ub.values()).map(|(x, y)| x - y).collect();
        let x = weighted_l2(&g, &du);
        state_sq += x * x;
        let ha = power_density(&a, &ua)?;
        let hb = power_density(&b, &ub)?;
        let dh: Vec<f64> = ha.values().iter().zip(hb.values()).map(|(x, y)| x - y).collect();
        let x = weighted_l2(&g, &dh);
        data_sq += x * x;
        let dn = normal_trace(&ua).zip_with(&normal_trace(&ub), |x, y| x - y)?;
        let x = boundary_l2(&dn);
        data_sq += x * x;
    }
    let (s, d) = (libm::sqrt(state_sq), libm::sqrt(data_sq));
    let ratio = if s == 0.0 && d == 0.0 { 0.0 } else { s / d };
    Ok(InjectivityReport {
        state_distance: s,
        data_distance: d,
        ratio,
        flagged: !(ratio <= ceiling),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::default_boundary_set;
    use crate::linearized::SystemKind;
    use core::f64::consts::{FRAC_1_SQRT_2, PI};

    fn bump(p: [f64; 3]) -> f64 {
        let r2 = (p[0] - 0.5) * (p[0] - 0.5) + (p[1] - 0.5) * (p[1] - 0.5);
        1.0 + 0.2 * libm::exp(-50.0 * r2)
    }

    fn pair(g: &Grid) -> Vec<BoundaryData> {
        let fs: [fn([f64; 3]) -> f64; 2] = [|p| p[0], |p| (p[0] + p[1]) * FRAC_1_SQRT_2];
        fs.iter()
            .map(|f| BoundaryData::from_fn(*g, TraceKind::Dirichlet, |p, _| f(p)).unwrap())
            .collect()
    }

    fn measurements(g: &Grid, gamma: impl Fn([f64; 3]) -> f64, set: &[BoundaryData]) -> Measurements {
        let gt = ScalarField::from_fn(*g, gamma).unwrap();
        let ds = synthesize_dataset(&gt, set, 1e-3, SolverOptions::default()).unwrap();
        Measurements::from_dataset(set, &ds)
    }

    fn base_at(g: &Grid, gamma: impl Fn([f64; 3]) -> f64, set: &[BoundaryData]) -> (BaseState, Vec<f64>) {
        let gm = ScalarField::from_fn(*g, gamma).unwrap();
        let ds = synthesize_dataset(&gm, set, 1e-3, SolverOptions::default()).unwrap();
        let base = BaseState::new(&gm, &ds.u, 1e-3).unwrap();
        let mut v = gm.values().to_vec();
        for u in &ds.u {
            v.extend_from_slice(u.values());
        }
        (base, v)
    }

    use crate::field::TraceKind;

    #[test]
    fn data_at_the_guess_gives_zero_increment() {
        let g = Grid::unit_square(14).unwrap();
        let set = pair(&g);
        let m = measurements(&g, |_| 1.0, &set);
        for variant in [SystemVariant::Triangular, SystemVariant::Eliminated2] {
            let cfg = ReconstructionConfig {
                system_variant: variant,
                ..Default::default()
            };
            let r = fixed_point_reconstruct(&m, &ScalarField::constant(g, 1.0), &cfg).unwrap();
            assert_eq!(r.verdict, Verdict::Converged);
            assert_eq!(r.iterate_count, 1);
            assert!(r.increments[0] <= 1e-10, "{:?}", r.increments);
            assert!(r.gamma.values().iter().all(|x| libm::fabs(x - 1.0) <= 1e-9));
        }
    }

    #[test]
    fn modified_forward_vanishes_on_self_consistent_data() {
        let g = Grid::unit_square(14).unwrap();
        let set = pair(&g);
        let (base, v0) = base_at(&g, bump, &set);
        let mf = modified_forward(&base, &v0, 1e-3).unwrap();
        let h: Vec<ScalarField> = (0..2)
            .map(|j| power_density(&ScalarField::from_fn(g, bump).unwrap(), &ScalarField::new(g, base.u(j).to_vec()).unwrap()).unwrap())
            .collect();
        let md = modified_data(&base, &h).unwrap();
        let op = assemble(&base, SystemKind::Triangular).unwrap();
        for blk in op.blocks() {
            for r in blk.rows.clone() {
                match blk.tag {
                    EquationTag::Pde { .. } => assert!(libm::fabs(mf[r]) <= 1e-9),
                    _ => assert!(libm::fabs(mf[r] - md[r]) <= 1e-9 * (1.0 + libm::fabs(md[r]))),
                }
            }
        }
    }

    fn perturbation(g: &Grid, len: usize) -> Vec<f64> {
        (0..len)
            .map(|i| {
                let p = g.coords(i % g.len());
                let b = (i / g.len()) as f64;
                0.3 * libm::sin(PI * p[0]) * libm::sin(PI * p[1]) * libm::cos(p[0] + b) + 0.1 * b * p[1]
            })
            .collect()
    }

    #[test]
    fn modified_forward_linearizes_to_the_triangular_system() {
        let g = Grid::unit_square(16).unwrap();
        let set = pair(&g);
        let (base, v0) = base_at(&g, bump, &set);
        let op = assemble(&base, SystemKind::Triangular).unwrap();
        let w = perturbation(&g, v0.len());
        let aw = op.apply(&w);
        let m0 = modified_forward(&base, &v0, 1e-3).unwrap();
        let mut rems = Vec::new();
        for eps in [1e-1, 1e-2, 1e-3] {
            let v: Vec<f64> = v0.iter().zip(&w).map(|(a, b)| a + eps * b).collect();
            let m = modified_forward(&base, &v, 1e-3).unwrap();
            let r: Vec<f64> = m.iter().zip(&m0).zip(&aw).map(|((a, b), c)| a - b - eps * c).collect();
            rems.push(libm::sqrt(r.iter().map(|x| x * x).sum::<f64>()) / (eps * eps));
        }
        // G(w; v₀)/‖w‖² settles to a constant.
        assert!(libm::fabs(rems[1] / rems[2] - 1.0) < 0.05, "{rems:?}");
        assert!(libm::fabs(rems[0] / rems[1] - 1.0) < 0.3, "{rems:?}");
    }

    #[test]
    fn nonlinear_twin_converges_for_both_variants() {
        let g = Grid::unit_square(20).unwrap();
        let set = pair(&g);
        let m = measurements(&g, bump, &set);
        let gt = ScalarField::from_fn(g, bump).unwrap();
        for (variant, bound) in [(SystemVariant::Triangular, 5e-3), (SystemVariant::Eliminated2, 1e-8)] {
            let cfg = ReconstructionConfig {
                system_variant: variant,
                ..Default::default()
            };
            let r = fixed_point_reconstruct(&m, &ScalarField::constant(g, 1.0), &cfg).unwrap();
            assert_eq!(r.verdict, Verdict::Converged);
            assert_eq!(r.increments.len(), r.iterate_count);
            assert_eq!(r.residuals.len(), r.iterate_count);
            let err = r.gamma.lin_comb(1.0, &gt, -1.0).unwrap();
            let rel = weighted_l2(&g, err.values()) / weighted_l2(&g, gt.values());
            assert!(rel < bound, "{variant:?} {rel}");
            assert!(r.c1.is_finite() && r.c2.is_finite());
        }
    }

    #[test]
    fn refreshed_linearization_reaches_the_discretization_floor() {
        let g = Grid::unit_square(20).unwrap();
        let set = pair(&g);
        let m = measurements(&g, bump, &set);
        let gt = ScalarField::from_fn(g, bump).unwrap();
        let cfg = ReconstructionConfig {
            refresh_linearization: true,
            ..Default::default()
        };
        let r = fixed_point_reconstruct(&m, &ScalarField::constant(g, 1.0), &cfg).unwrap();
        assert!(r.increments[2] < 1e-2 * r.increments[0], "{:?}", r.increments);
        let err = r.gamma.lin_comb(1.0, &gt, -1.0).unwrap();
        let rel = weighted_l2(&g, err.values()) / weighted_l2(&g, gt.values());
        assert!(rel < 5e-3, "{rel}");
    }

    #[test]
    fn relabeling_functionals_gives_the_same_conductivity() {
        let g = Grid::unit_square(16).unwrap();
        let set = default_boundary_set(&g);
        let m = measurements(&g, bump, &set);
        let mut swapped = m.clone();
        swapped.dirichlet.swap(0, 2);
        swapped.h.swap(0, 2);
        swapped.neumann.swap(0, 2);
        let cfg = ReconstructionConfig {
            functionals: 3,
            system_variant: SystemVariant::Eliminated2,
            ..Default::default()
        };
        let guess = ScalarField::constant(g, 1.0);
        let a = fixed_point_reconstruct(&m, &guess, &cfg).unwrap();
        let b = fixed_point_reconstruct(&swapped, &guess, &cfg).unwrap();
        let d = a.gamma.lin_comb(1.0, &b.gamma, -1.0).unwrap();
        assert!(d.values().iter().all(|x| libm::fabs(*x) < 1e-8));
        for j in 0..3 {
            let k = [2, 1, 0][j];
            let du = a.u[j].lin_comb(1.0, &b.u[k], -1.0).unwrap();
            assert!(du.values().iter().all(|x| libm::fabs(*x) < 1e-8));
        }
    }

    #[test]
    fn injectivity_probe_is_zero_on_equal_perturbations() {
        let g = Grid::unit_square(12).unwrap();
        let set = pair(&g);
        let w = ScalarField::from_fn(g, |p| 0.01 * libm::sin(PI * p[0]) * libm::sin(PI * p[1])).unwrap();
        let r = local_injectivity_probe(&ScalarField::constant(g, 1.0), &set, &w, &w, SolverOptions::default(), 10.0).unwrap();
        assert_eq!((r.state_distance, r.data_distance, r.ratio), (0.0, 0.0, 0.0));
        assert!(!r.flagged);
    }

    #[test]
    fn injectivity_ratio_is_stable_for_an_elliptic_family() {
        let g = Grid::unit_square(24).unwrap();
        let set = pair(&g);
        let gamma0 = ScalarField::constant(g, 1.0);
        let w = ScalarField::from_fn(g, |p| 0.02 * libm::sin(PI * p[0]) * libm::sin(PI * p[1])).unwrap();
        let ratios: Vec<f64> = [1e-3, 5e-4, 2.5e-4]
            .iter()
            .map(|&eps| {
                let wt = ScalarField::from_fn(g, |p| {
                    0.02 * libm::sin(PI * p[0]) * libm::sin(PI * p[1])
                        + eps * libm::sin(2.0 * PI * p[0]) * libm::sin(3.0 * PI * p[1])
                })
                .unwrap();
                local_injectivity_probe(&gamma0, &set, &w, &wt, SolverOptions::default(), 1e3).unwrap().ratio
            })
            .collect();
        assert!(ratios.iter().all(|r| r.is_finite() && *r > 0.0));
        assert!(libm::fabs(ratios[2] / ratios[1] - 1.0) < 0.02, "{ratios:?}");
    }

    #[test]
    fn config_validation() {
        let mut cfg = ReconstructionConfig::default();
        cfg.max_iter = 0;
        assert!(cfg.validate().is_err());
        let cfg = ReconstructionConfig {
            tol_rel: 0.0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }
}
