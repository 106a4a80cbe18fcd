//! Scripted experiments: stability sweeps contrasting elliptic and
//! sub-elliptic families, the linear twin, and catalogs of ellipticity and
//! unique-continuation verdicts.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::{FRAC_1_SQRT_2, PI};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diff::{conductivity_gamma_apply, normal_trace, weighted_l2};
use crate::error::{Error, Result};
use crate::field::{BoundaryData, ScalarField, TraceKind};
use crate::forward::{synthesize_dataset, ConductivitySolver, SolverOptions};
use crate::grid::Grid;
use crate::linearized::{
    assemble, recover_boundary_dgamma, BaseState, BcKind, BlockCondition, BoundaryConditionSet, CauchyData,
    NormalOptions, NormalSystem, SystemKind, DEFAULT_CHARACTERISTIC_TOLERANCE,
};
use crate::symbol::{
    check_ellipticity_point, check_ucp_point, pair_witness_3d, EllipticityOptions, FormFamily, UcpOptions,
};
use crate::vecmath::{cross, dot, normalized};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepFamily {
    /// `f₁ = x`, `f₂ = (x + y)/√2`.
    Elliptic,
    /// `f₁ = x`, `f₂ = y`: the null cones coincide.
    Orthogonal2d,
    /// `f₁ = x` alone.
    SingleJ1,
}

impl SweepFamily {
    pub fn name(self) -> &'static str {
        match self {
            SweepFamily::Elliptic => "elliptic",
            SweepFamily::Orthogonal2d => "orthogonal-2d",
            SweepFamily::SingleJ1 => "single-j1",
        }
    }

    /// Dirichlet conditions defining the family on `grid`.
    pub fn boundary_set(self, grid: &Grid) -> Vec<BoundaryData> {
        let fs: &[fn([f64; 3]) -> f64] = match self {
            SweepFamily::Elliptic => &[|p| p[0], |p| (p[0] + p[1]) * FRAC_1_SQRT_2],
            SweepFamily::Orthogonal2d => &[|p| p[0], |p| p[1]],
            SweepFamily::SingleJ1 => &[|p| p[0]],
        };
        fs.iter()
            .map(|f| BoundaryData::from_fn(*grid, TraceKind::Dirichlet, |p, _| f(p)).expect("finite"))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub frequencies: Vec<usize>,
    pub family: SweepFamily,
    /// Nodes per axis of each square grid.
    pub grid_sizes: Vec<usize>,
    /// Amplitude of the `sin(kπx)sin(kπy)` perturbation of every `δH_j`.
    pub amplitude: f64,
    /// Relative amplitude of uniform noise added on top.
    pub noise: f64,
    pub seed: u64,
    pub tikhonov: f64,
}

impl SweepSpec {
    pub fn new(family: SweepFamily, frequencies: Vec<usize>, grid_sizes: Vec<usize>) -> Self {
        SweepSpec {
            frequencies,
            family,
            grid_sizes,
            amplitude: 1e-2,
            noise: 0.0,
            seed: 0,
            tikhonov: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.frequencies.is_empty() || self.frequencies.iter().any(|&k| k < 1) {
            return Err(Error::InvalidInput("frequencies must be at least 1".into()));
        }
        if self.frequencies.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::InvalidInput("frequencies must be sorted".into()));
        }
        if self.grid_sizes.is_empty() {
            return Err(Error::InvalidInput("at least one grid size is required".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub n: usize,
    pub k: usize,
    pub dgamma_l2: f64,
    pub dh_l2: f64,
    /// `‖δγ‖/‖δH‖`, zero for a zero perturbation.
    pub amplification: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub family: SweepFamily,
    pub rows: Vec<SweepRow>,
    /// `(n, k)` pairs left out because `kπh > 1`.
    pub skipped: Vec<(usize, usize)>,
}

impl SweepTable {
    pub fn amplification(&self, n: usize, k: usize) -> Option<f64> {
        self.rows.iter().find(|r| r.n == n && r.k == k).map(|r| r.amplification)
    }
}

/// Linearized response to oscillatory data perturbations: for each `k`, the
/// constrained normal equations of the triangular system at `γ ≡ 1` are
/// solved with `δH_j = a·sin(kπx)sin(kπy)` and zero Cauchy data for `δu_j`.
pub fn stability_sweep(spec: &SweepSpec) -> Result<SweepTable> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut table = SweepTable {
        family: spec.family,
        rows: Vec::new(),
        skipped: Vec::new(),
    };
    for &n in &spec.grid_sizes {
        let g = Grid::unit_square(n)?;
        let gamma = ScalarField::constant(g, 1.0);
        let set = spec.family.boundary_set(&g);
        let ds = synthesize_dataset(&gamma, &set, crate::forward::DEFAULT_GRADIENT_FLOOR, SolverOptions::default())?;
        let base = BaseState::new(&gamma, &ds.u, crate::forward::DEFAULT_GRADIENT_FLOOR)?;
        let op = assemble(&base, SystemKind::Triangular)?;
        let kinds = vec![BcKind::Cauchy; op.layout().block_count()];
        let ns = NormalSystem::new(
            &op,
            &kinds,
            NormalOptions {
                tikhonov: spec.tikhonov,
                scale_rows: true,
            },
        )?;
        let h = g.max_spacing();
        for &k in &spec.frequencies {
            if k as f64 * PI * h > 1.0 {
                table.skipped.push((n, k));
                continue;
            }
            let kp = k as f64 * PI;
            let mut dh = Vec::new();
            for _ in 0..set.len() {
                let mut f = ScalarField::from_fn(g, |p| spec.amplitude * libm::sin(kp * p[0]) * libm::sin(kp * p[1]))?;
                if spec.noise > 0.0 {
                    for v in f.values_mut() {
                        *v += spec.noise * spec.amplitude * rng.gen_range(-1.0..1.0);
                    }
                }
                dh.push(f);
            }
            let zero = CauchyData {
                value: BoundaryData::zeros(g, TraceKind::Dirichlet),
                normal: BoundaryData::zeros(g, TraceKind::Neumann),
            };
            let dg = recover_boundary_dgamma(&dh[0], &ds.u[0], &gamma, &zero, DEFAULT_CHARACTERISTIC_TOLERANCE)?;
            let mut blocks = vec![BlockCondition::Cauchy {
                value: dg.value,
                normal: dg.normal,
            }];
            for _ in 0..set.len() {
                blocks.push(BlockCondition::Cauchy {
                    value: zero.value.clone(),
                    normal: zero.normal.clone(),
                });
            }
            let rhs = op.rhs(&dh, false)?;
            let v = ns.solve(&rhs, &BoundaryConditionSet { blocks })?;
            let dgamma_l2 = weighted_l2(&g, &v[..g.len()]);
            let dh_l2 = libm::sqrt(
                dh.iter()
                    .map(|f| {
                        let x = weighted_l2(&g, f.values());
                        x * x
                    })
                    .sum(),
            );
            let amplification = if dh_l2 == 0.0 { 0.0 } else { dgamma_l2 / dh_l2 };
            table.rows.push(SweepRow {
                n,
                k,
                dgamma_l2,
                dh_l2,
                amplification,
            });
        }
    }
    Ok(table)
}

/// Errors of the linear twin: a planted `(δγ, δu_j)` solving the first-order
/// system at `γ ≡ 1` with `f₁ = x`, `f₂ = (x + y)/√2`, recovered from its
/// data through the triangular normal system.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearTwinReport {
    pub n: usize,
    /// Relative `l²` error of the whole unknown vector.
    pub relative_error: f64,
    pub gamma_relative_error: f64,
    /// Largest error of the recovered boundary value of `δγ`.
    pub dirichlet_trace_error: f64,
    /// Largest error of the recovered normal derivative of `δγ` away from
    /// edges and corners.
    pub neumann_trace_error: f64,
}

/// Planted conductivity increment of the linear twin. Its gradient vanishes
/// at the corners, so the planted `δu_j` carry no corner singularities.
pub fn twin_dgamma(p: [f64; 3]) -> f64 {
    0.1 * libm::sin(PI * p[0]) * libm::sin(PI * p[1]) * (1.0 + 0.5 * p[0])
}

/// Harmonic Dirichlet data of the planted `δu_j`.
pub fn twin_du_boundary(j: usize, p: [f64; 3]) -> f64 {
    if j % 2 == 0 {
        0.05 * (p[0] * p[0] - p[1] * p[1] + p[0] * p[1])
    } else {
        0.05 * libm::exp(p[0]) * libm::sin(p[1] + 0.5)
    }
}

pub fn linear_twin(n: usize) -> Result<LinearTwinReport> {
    let g = Grid::unit_square(n)?;
    let gamma = ScalarField::constant(g, 1.0);
    let set = SweepFamily::Elliptic.boundary_set(&g);
    let ds = synthesize_dataset(&gamma, &set, crate::forward::DEFAULT_GRADIENT_FLOOR, SolverOptions::default())?;
    let base = BaseState::new(&gamma, &ds.u, crate::forward::DEFAULT_GRADIENT_FLOOR)?;
    let dgamma = ScalarField::from_fn(g, twin_dgamma)?;
    let solver = ConductivitySolver::new(&gamma, SolverOptions::default())?;
    let mut du = Vec::new();
    let mut dh = Vec::new();
    for j in 0..set.len() {
        let src = ScalarField::new(g, conductivity_gamma_apply(&g, gamma.values(), ds.u[j].values(), dgamma.values()))?;
        let bd = BoundaryData::from_fn(g, TraceKind::Dirichlet, |p, _| twin_du_boundary(j, p))?;
        let d = solver.solve(&bd, Some(&src))?;
        let ku = base.k_apply(j, d.values());
        let h: Vec<f64> = (0..g.len())
            .map(|i| base.grad_sq(j)[i] * (dgamma.get(i) + ku[i]))
            .collect();
        dh.push(ScalarField::new(g, h)?);
        du.push(d);
    }
    let cauchy: Vec<CauchyData> = du
        .iter()
        .map(|d| CauchyData {
            value: d.trace(),
            normal: normal_trace(d),
        })
        .collect();
    let rec = recover_boundary_dgamma(&dh[0], &ds.u[0], &gamma, &cauchy[0], DEFAULT_CHARACTERISTIC_TOLERANCE)?;
    let dirichlet_trace_error = rec.value.zip_with(&dgamma.trace(), |a, b| a - b)?.max_abs(false);
    let neumann_trace_error = rec.normal.zip_with(&normal_trace(&dgamma), |a, b| a - b)?.max_abs(true);

    let op = assemble(&base, SystemKind::Triangular)?;
    let kinds = vec![BcKind::Cauchy; op.layout().block_count()];
    let ns = NormalSystem::new(&op, &kinds, NormalOptions::default())?;
    let mut blocks = vec![BlockCondition::Cauchy {
        value: rec.value,
        normal: rec.normal,
    }];
    for c in cauchy {
        blocks.push(BlockCondition::Cauchy {
            value: c.value,
            normal: c.normal,
        });
    }
    let rhs = op.rhs(&dh, false)?;
    let v = ns.solve(&rhs, &BoundaryConditionSet { blocks })?;
    let mut planted = dgamma.values().to_vec();
    for d in &du {
        planted.extend_from_slice(d.values());
    }
    let blockwise = |x: &[f64]| -> f64 {
        libm::sqrt(
            x.chunks(g.len())
                .map(|c| {
                    let y = weighted_l2(&g, c);
                    y * y
                })
                .sum(),
        )
    };
    let err: Vec<f64> = v.iter().zip(&planted).map(|(a, b)| a - b).collect();
    let ng = g.len();
    Ok(LinearTwinReport {
        n,
        relative_error: blockwise(&err) / blockwise(&planted),
        gamma_relative_error: weighted_l2(&g, &err[..ng]) / weighted_l2(&g, &planted[..ng]),
        dirichlet_trace_error,
        neumann_trace_error,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CatalogCase {
    Parallel2d,
    Orthogonal2d,
    Generic2d,
    Pair3d,
    Triple3d,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub case: CatalogCase,
    pub directions: Vec<Vec<f64>>,
    pub expected_elliptic: bool,
    pub elliptic: bool,
    /// `max_j |q_j|` at the reported witness, when one is reported.
    pub witness_residual: Option<f64>,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CatalogReport {
    pub seed: u64,
    pub entries: Vec<CatalogEntry>,
    pub all_pass: bool,
}

impl CatalogReport {
    pub fn failures(&self) -> impl Iterator<Item = &CatalogEntry> {
        self.entries.iter().filter(|e| !e.pass)
    }
}

/// Witness tolerance for non-elliptic verdicts.
pub const WITNESS_TOLERANCE: f64 = 1e-9;

fn unit2(t: f64) -> Vec<f64> {
    vec![libm::cos(t), libm::sin(t)]
}

fn random_unit3(rng: &mut ChaCha8Rng) -> [f64; 3] {
    loop {
        let v = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let n = libm::sqrt(dot(&v, &v));
        if n > 0.1 && n <= 1.0 {
            return [v[0] / n, v[1] / n, v[2] / n];
        }
    }
}

fn max_q(fam: &FormFamily, xi: &[f64]) -> f64 {
    let n = libm::sqrt(dot(xi, xi));
    let u: Vec<f64> = xi.iter().map(|x| x / n).collect();
    (0..fam.len()).fold(0.0, |m, j| m.max(libm::fabs(fam.q(j, &u))))
}

/// Checks pointwise ellipticity verdicts on analytic cases: 2D parallel,
/// orthogonal and generic pairs, random 3D pairs (never elliptic) and 3D
/// triples with `F̂₃ ∝ αF̂₁ + βF̂₂`, `αβ ≠ 0` (always elliptic).
pub fn family_catalog(seed: u64) -> CatalogReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let opts = EllipticityOptions::default();
    let mut cases: Vec<(CatalogCase, Vec<Vec<f64>>, bool)> = Vec::new();
    for _ in 0..10 {
        let t = rng.gen_range(0.0..2.0 * PI);
        let s = if rng.gen_bool(0.5) { 0.0 } else { PI };
        cases.push((CatalogCase::Parallel2d, vec![unit2(t), unit2(t + s)], false));
        let s = if rng.gen_bool(0.5) { 0.5 * PI } else { -0.5 * PI };
        cases.push((CatalogCase::Orthogonal2d, vec![unit2(t), unit2(t + s)], false));
        let d = rng.gen_range(0.1..0.5 * PI - 0.1) + if rng.gen_bool(0.5) { 0.0 } else { 0.5 * PI };
        cases.push((CatalogCase::Generic2d, vec![unit2(t), unit2(t + d)], true));
    }
    for _ in 0..100 {
        let a = random_unit3(&mut rng);
        let b = random_unit3(&mut rng);
        cases.push((CatalogCase::Pair3d, vec![a.to_vec(), b.to_vec()], false));
    }
    for _ in 0..20 {
        let a = random_unit3(&mut rng);
        let mut b = random_unit3(&mut rng);
        while libm::sqrt(dot(&cross(&a, &b), &cross(&a, &b))) < 0.2 {
            b = random_unit3(&mut rng);
        }
        let alpha = rng.gen_range(0.2..1.0) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        let beta = rng.gen_range(0.2..1.0) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        let c = normalized(&[0, 1, 2].map(|i| alpha * a[i] + beta * b[i]));
        cases.push((CatalogCase::Triple3d, vec![a.to_vec(), b.to_vec(), c.to_vec()], true));
    }
    let mut entries = Vec::new();
    for (case, dirs, expected) in cases {
        let fam = FormFamily::new(&dirs).expect("unit directions");
        let verdict = check_ellipticity_point(&fam, &opts);
        let mut witness_residual = verdict.witness.as_ref().map(|w| max_q(&fam, w));
        if case == CatalogCase::Pair3d {
            let f1 = [dirs[0][0], dirs[0][1], dirs[0][2]];
            let f2 = [dirs[1][0], dirs[1][1], dirs[1][2]];
            let w = pair_witness_3d(&f1, &f2);
            let r = max_q(&fam, &w);
            witness_residual = Some(witness_residual.map_or(r, |x: f64| x.min(r)));
        }
        let witness_ok = expected || witness_residual.is_some_and(|r| r <= WITNESS_TOLERANCE);
        let pass = verdict.elliptic == expected && witness_ok;
        entries.push(CatalogEntry {
            case,
            directions: dirs,
            expected_elliptic: expected,
            elliptic: verdict.elliptic,
            witness_residual,
            pass,
        });
    }
    let all_pass = entries.iter().all(|e| e.pass);
    CatalogReport { seed, entries, all_pass }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UcpEquivalenceReport {
    pub trials: usize,
    pub normals: usize,
    pub elliptic: usize,
    pub disagreements: Vec<String>,
}

/// Compares, on random 2D two-form families, "UCP holds at every sampled
/// normal" with the ellipticity verdict. Half the families take their
/// angles on a `π/16` lattice so that, when their null cones coincide, the
/// common null direction is among the `normals` sampled ones (`normals` must
/// be a multiple of 16).
pub fn ucp_equivalence_2d(seed: u64, trials: usize, normals: usize) -> Result<UcpEquivalenceReport> {
    if normals == 0 || normals % 16 != 0 {
        return Err(Error::InvalidInput("the number of normals must be a positive multiple of 16".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eopts = EllipticityOptions::default();
    let uopts = UcpOptions::default();
    let mut report = UcpEquivalenceReport {
        trials,
        normals,
        elliptic: 0,
        disagreements: Vec::new(),
    };
    for t in 0..trials {
        let (a, b) = if t % 2 == 0 {
            let step = PI / 16.0;
            (rng.gen_range(0..32) as f64 * step, rng.gen_range(0..32) as f64 * step)
        } else {
            (rng.gen_range(0.0..2.0 * PI), rng.gen_range(0.0..2.0 * PI))
        };
        let fam = FormFamily::new(&[unit2(a), unit2(b)])?;
        let elliptic = check_ellipticity_point(&fam, &eopts).elliptic;
        let mut all = true;
        for k in 0..normals {
            let th = k as f64 * PI / normals as f64;
            if !check_ucp_point(&fam, &unit2(th), &uopts)?.holds {
                all = false;
                break;
            }
        }
        report.elliptic += usize::from(elliptic);
        if all != elliptic {
            report
                .disagreements
                .push(alloc::format!("angles ({a:.6}, {b:.6}): ucp {all}, elliptic {elliptic}"));
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn catalog_matches_the_analytic_verdicts() {
        let r = family_catalog(7);
        let bad: Vec<_> = r.failures().collect();
        assert!(r.all_pass, "{bad:?}");
    }

    #[test]
    fn ucp_agrees_with_ellipticity() {
        let r = ucp_equivalence_2d(1, 60, 32).unwrap();
        assert!(r.disagreements.is_empty(), "{:?}", r.disagreements);
        assert!(r.elliptic > 0 && r.elliptic < 60);
    }

    #[test]
    fn zero_perturbation_gives_zero_response() {
        for family in [SweepFamily::Elliptic, SweepFamily::Orthogonal2d] {
            let mut spec = SweepSpec::new(family, vec![1, 2], vec![12]);
            spec.amplitude = 0.0;
            let t = stability_sweep(&spec).unwrap();
            assert!(t.rows.iter().all(|r| r.dgamma_l2 == 0.0 && r.amplification == 0.0));
        }
    }

    #[test]
    fn unresolved_frequencies_are_skipped() {
        let t = stability_sweep(&SweepSpec::new(SweepFamily::Elliptic, vec![2, 8], vec![12])).unwrap();
        assert_eq!(t.skipped, vec![(12, 8)]);
        assert_eq!(t.rows.len(), 1);
    }

    #[test]
    fn sweep_spec_rejects_unsorted_frequencies() {
        assert!(SweepSpec::new(SweepFamily::Elliptic, vec![4, 2], vec![12]).validate().is_err());
        assert!(SweepSpec::new(SweepFamily::Elliptic, vec![0], vec![12]).validate().is_err());
    }
}
