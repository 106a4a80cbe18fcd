//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails. Every tolerance is pinned below.

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use hybridpd_core::diff::{discrete_norms, weighted_l2};
use hybridpd_core::experiments::{
    family_catalog, linear_twin, stability_sweep, ucp_equivalence_2d, CatalogCase, SweepFamily, SweepSpec,
};
use hybridpd_core::forward::{solve_conductivity, synthesize_dataset, ConductivityProblem, SolverOptions};
use hybridpd_core::linearized::{assemble, BaseState, SystemKind};
use hybridpd_core::reconstruct::{fixed_point_reconstruct, modified_forward, Measurements, ReconstructionConfig, Verdict};
use hybridpd_core::symbol::{classify_roots, RootKind};
use hybridpd_core::{BoundaryData, Grid, ScalarField, TraceKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const FLOOR: f64 = 1e-3;

const FORWARD_RATIO: (f64, f64) = (3.5, 4.5);
const FORWARD_BUDGET: Duration = Duration::from_secs(10);

const ADJOINT_PAIRS: usize = 20;
const ADJOINT_TOL: f64 = 1e-12;

const TAYLOR_RATIO: (f64, f64) = (3.5, 4.5);
const TAYLOR_EPS0: f64 = 1e-2;

const CATALOG_WITNESS_TOL: f64 = 1e-9;
const CATALOG_PAIR3D_DRAWS: usize = 100;
const CATALOG_BUDGET: Duration = Duration::from_secs(5);

const UCP_TRIALS: usize = 200;
const UCP_NORMALS: usize = 32;

const ROOT_TRIPLES: usize = 1000;
const ROOT_DISC_TOL: f64 = 1e-9;

const LINEAR_TWIN_N: usize = 32;
const LINEAR_TWIN_TOL: f64 = 0.02;

const TWIN_N: usize = 32;
const TWIN_TOL: f64 = 0.01;
const TWIN_MAX_ITER: usize = 50;
const TWIN_BUDGET: Duration = Duration::from_secs(60);

const SWEEP_N: usize = 64;
const SWEEP_K: [usize; 4] = [2, 4, 8, 16];
/// Empirical spread ceiling for the elliptic family.
const SWEEP_ELLIPTIC_SPREAD: f64 = 3.0;
/// Empirical growth floor `a(16)/a(2)` for the orthogonal family.
const SWEEP_ORTHOGONAL_GROWTH: f64 = 3.0;

/// Smallest admissible `e(32)/e(64)` for the recovered normal derivative,
/// the second-order rate being 4.
const TRACE_RATIO_MIN: f64 = 3.0;
const DIRICHLET_TRACE_TOL: f64 = 1e-10;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn rel_l2(g: &Grid, a: &ScalarField, b: &ScalarField) -> f64 {
    let e = a.lin_comb(1.0, b, -1.0).unwrap();
    weighted_l2(g, e.values()) / weighted_l2(g, b.values())
}

fn bump(p: [f64; 3]) -> f64 {
    let r2 = (p[0] - 0.5).powi(2) + (p[1] - 0.5).powi(2);
    1.0 + 0.2 * (-50.0 * r2).exp()
}

fn elliptic_pair(g: &Grid) -> Vec<BoundaryData> {
    let fs: [fn([f64; 3]) -> f64; 2] = [|p| p[0], |p| (p[0] + p[1]) * FRAC_1_SQRT_2];
    fs.iter()
        .map(|f| BoundaryData::from_fn(*g, TraceKind::Dirichlet, |p, _| f(p)).unwrap())
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn forward_convergence() -> Outcome {
    let t = Instant::now();
    let err = |n: usize| {
        let g = Grid::unit_square(n).unwrap();
        let gamma = ScalarField::from_fn(g, |p| 1.0 + 0.5 * p[0]).unwrap();
        let src = ScalarField::from_fn(g, |p| {
            let (s, c, sy) = ((PI * p[0]).sin(), (PI * p[0]).cos(), (PI * p[1]).sin());
            (1.0 + 0.5 * p[0]) * 2.0 * PI * PI * s * sy - 0.5 * PI * c * sy
        })
        .unwrap();
        let prob = ConductivityProblem::new(gamma, BoundaryData::zeros(g, TraceKind::Dirichlet), Some(src)).unwrap();
        let u = solve_conductivity(&prob, SolverOptions::default()).unwrap();
        let exact = ScalarField::from_fn(g, |p| (PI * p[0]).sin() * (PI * p[1]).sin()).unwrap();
        discrete_norms(&u.lin_comb(1.0, &exact, -1.0).unwrap()).l2
    };
    let (e32, e64) = (err(32), err(64));
    let ratio = e32 / e64;
    let dt = t.elapsed();
    outcome(
        (FORWARD_RATIO.0..=FORWARD_RATIO.1).contains(&ratio) && dt < FORWARD_BUDGET,
        format!("e32={e32:.3e} e64={e64:.3e} ratio={ratio:.3} in [{}, {}], {dt:.2?} < {FORWARD_BUDGET:?}", FORWARD_RATIO.0, FORWARD_RATIO.1),
    )
}

fn base_state(n: usize) -> (BaseState, Vec<f64>) {
    let g = Grid::unit_square(n).unwrap();
    let gamma = ScalarField::from_fn(g, bump).unwrap();
    let set = elliptic_pair(&g);
    let ds = synthesize_dataset(&gamma, &set, FLOOR, SolverOptions::default()).unwrap();
    let base = BaseState::new(&gamma, &ds.u, FLOOR).unwrap();
    let mut v = gamma.values().to_vec();
    for u in &ds.u {
        v.extend_from_slice(u.values());
    }
    (base, v)
}

fn adjoint_identity() -> Outcome {
    let (base, _) = base_state(16);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    let mut kinds = Vec::new();
    for kind in [SystemKind::First, SystemKind::Eliminated, SystemKind::Eliminated2, SystemKind::Triangular] {
        let op = assemble(&base, kind).unwrap();
        for _ in 0..ADJOINT_PAIRS {
            let w: Vec<f64> = (0..op.ncols()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let y: Vec<f64> = (0..op.nrows()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let (aw, aty) = (op.apply(&w), op.apply_transpose(&y));
            let scale = norm(&aw) * norm(&y) + norm(&w) * norm(&aty);
            worst = worst.max((dot(&aw, &y) - dot(&w, &aty)).abs() / scale);
        }
        kinds.push(kind.name());
    }
    outcome(
        worst <= ADJOINT_TOL,
        format!("{} kinds x {ADJOINT_PAIRS} pairs, worst relative gap {worst:.2e} <= {ADJOINT_TOL:e}", kinds.len()),
    )
}

fn linearization_fidelity() -> Outcome {
    let (base, v0) = base_state(16);
    let g = *base.grid();
    let op = assemble(&base, SystemKind::Triangular).unwrap();
    // Smooth direction: a bump in γ and a different mode in each u_j.
    let mut w = Vec::with_capacity(v0.len());
    for b in 0..v0.len() / g.len() {
        let k = (b + 1) as f64;
        w.extend((0..g.len()).map(|i| {
            let p = g.coords(i);
            (PI * k * p[0]).sin() * (PI * p[1]).sin() + 0.3 * p[0] * p[1]
        }));
    }
    let aw = op.apply(&w);
    let m0 = modified_forward(&base, &v0, FLOOR).unwrap();
    let remainder = |eps: f64| {
        let v: Vec<f64> = v0.iter().zip(&w).map(|(a, b)| a + eps * b).collect();
        let m = modified_forward(&base, &v, FLOOR).unwrap();
        norm(&m.iter().zip(&m0).zip(&aw).map(|((a, b), c)| a - b - eps * c).collect::<Vec<_>>())
    };
    let rs: Vec<f64> = (0..4).map(|i| remainder(TAYLOR_EPS0 / f64::from(1 << i))).collect();
    let ratios: Vec<f64> = rs.windows(2).map(|p| p[0] / p[1]).collect();
    let pass = ratios.iter().all(|r| (TAYLOR_RATIO.0..=TAYLOR_RATIO.1).contains(r));
    outcome(
        pass,
        format!("remainder ratios {:.3?} in [{}, {}]", ratios, TAYLOR_RATIO.0, TAYLOR_RATIO.1),
    )
}

fn ellipticity_oracle() -> Outcome {
    let t = Instant::now();
    let cat = family_catalog(0);
    let dt = t.elapsed();
    let pairs = cat.entries.iter().filter(|e| e.case == CatalogCase::Pair3d).count();
    let worst = cat
        .entries
        .iter()
        .filter(|e| !e.expected_elliptic)
        .map(|e| e.witness_residual.unwrap_or(f64::INFINITY))
        .fold(0.0, f64::max);
    let pass = cat.all_pass && pairs == CATALOG_PAIR3D_DRAWS && worst <= CATALOG_WITNESS_TOL && dt < CATALOG_BUDGET;
    outcome(
        pass,
        format!(
            "{} cases, all verdicts match: {}, {pairs} 3D pairs, worst witness residual {worst:.1e} <= {CATALOG_WITNESS_TOL:e}, {dt:.2?} < {CATALOG_BUDGET:?}",
            cat.entries.len(),
            cat.all_pass
        ),
    )
}

fn ucp_equivalence() -> Outcome {
    let r = ucp_equivalence_2d(0, UCP_TRIALS, UCP_NORMALS).unwrap();
    outcome(
        r.trials == UCP_TRIALS && r.disagreements.is_empty(),
        format!(
            "{} families ({} elliptic), {} normals, {} disagreements",
            r.trials,
            r.elliptic,
            r.normals,
            r.disagreements.len()
        ),
    )
}

fn unit(rng: &mut ChaCha8Rng) -> [f64; 3] {
    loop {
        let v = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let n = norm(&v);
        if n > 0.1 && n <= 1.0 {
            return v.map(|x| x / n);
        }
    }
}

fn root_classifier() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut mismatches = 0;
    let mut degenerate = 0;
    for _ in 0..ROOT_TRIPLES {
        let f = unit(&mut rng);
        let n = unit(&mut rng);
        let r = unit(&mut rng);
        let d = dot(&r, &n);
        let xi: Vec<f64> = r.iter().zip(&n).map(|(a, b)| a - d * b).collect();
        let s = norm(&xi);
        let xi: Vec<f64> = xi.iter().map(|x| x / s).collect();
        let c = classify_roots(&f, &n, &xi, 1e-6).unwrap();
        let (fn_, fx) = (dot(&f, &n), dot(&f, &xi));
        let closed = -1.0 + 2.0 * (fn_ * fn_ + fx * fx);
        let agrees = match c.kind {
            RootKind::Degenerate => {
                degenerate += 1;
                (2.0 * fn_ * fn_ - 1.0).abs() <= ROOT_DISC_TOL
            }
            RootKind::ComplexPair => closed < ROOT_DISC_TOL,
            RootKind::DistinctReal => closed > -ROOT_DISC_TOL,
            RootKind::DoubleReal => closed.abs() <= ROOT_DISC_TOL,
        };
        if !agrees || (c.discriminant - closed).abs() > ROOT_DISC_TOL {
            mismatches += 1;
        }
    }
    outcome(
        mismatches == 0,
        format!("{ROOT_TRIPLES} triples, {mismatches} disagreements with the closed form ({degenerate} characteristic), tol {ROOT_DISC_TOL:e}"),
    )
}

fn linear_twin_recovery() -> Outcome {
    let r = linear_twin(LINEAR_TWIN_N).unwrap();
    outcome(
        r.relative_error < LINEAR_TWIN_TOL,
        format!(
            "{LINEAR_TWIN_N}^2: relative error {:.3e} (dgamma {:.3e}) < {LINEAR_TWIN_TOL}",
            r.relative_error, r.gamma_relative_error
        ),
    )
}

fn nonlinear_twin() -> Outcome {
    let t = Instant::now();
    let g = Grid::unit_square(TWIN_N).unwrap();
    let gt = ScalarField::from_fn(g, bump).unwrap();
    let set = elliptic_pair(&g);
    let ds = synthesize_dataset(&gt, &set, FLOOR, SolverOptions::default()).unwrap();
    let m = Measurements::from_dataset(&set, &ds);
    let cfg = ReconstructionConfig {
        max_iter: TWIN_MAX_ITER,
        ..Default::default()
    };
    let r = fixed_point_reconstruct(&m, &ScalarField::constant(g, 1.0), &cfg).unwrap();
    let dt = t.elapsed();
    let rel = rel_l2(&g, &r.gamma, &gt);
    let monotone = r.increments.windows(2).skip(1).all(|p| p[1] <= p[0]);
    let pass = r.verdict == Verdict::Converged
        && rel < TWIN_TOL
        && r.iterate_count <= TWIN_MAX_ITER
        && monotone
        && dt < TWIN_BUDGET;
    outcome(
        pass,
        format!(
            "{:?} after {} iterates, relative error {rel:.3e} < {TWIN_TOL}, increments monotone after 2: {monotone}, {dt:.2?} < {TWIN_BUDGET:?}",
            r.verdict, r.iterate_count
        ),
    )
}

fn stability_contrast() -> Outcome {
    let run = |family| {
        let t = stability_sweep(&SweepSpec::new(family, SWEEP_K.to_vec(), vec![SWEEP_N])).unwrap();
        SWEEP_K.map(|k| t.amplification(SWEEP_N, k).unwrap_or(f64::NAN))
    };
    let ell = run(SweepFamily::Elliptic);
    let orth = run(SweepFamily::Orthogonal2d);
    let spread = ell.iter().cloned().fold(f64::NEG_INFINITY, f64::max) / ell.iter().cloned().fold(f64::INFINITY, f64::min);
    let growth = orth[3] / orth[0];
    outcome(
        spread < SWEEP_ELLIPTIC_SPREAD && growth >= SWEEP_ORTHOGONAL_GROWTH,
        format!(
            "{SWEEP_N}^2, k={SWEEP_K:?}: elliptic {ell:.3?} spread {spread:.2} < {SWEEP_ELLIPTIC_SPREAD}; orthogonal {orth:.3?} a(16)/a(2) = {growth:.2} >= {SWEEP_ORTHOGONAL_GROWTH}"
        ),
    )
}

fn boundary_recovery() -> Outcome {
    let (a, b) = (linear_twin(32).unwrap(), linear_twin(64).unwrap());
    let ratio = a.neumann_trace_error / b.neumann_trace_error;
    let dir = a.dirichlet_trace_error.max(b.dirichlet_trace_error);
    outcome(
        ratio >= TRACE_RATIO_MIN && dir <= DIRICHLET_TRACE_TOL,
        format!(
            "Neumann trace error {:.3e} -> {:.3e}, ratio {ratio:.2} >= {TRACE_RATIO_MIN}; Dirichlet trace error {dir:.1e} <= {DIRICHLET_TRACE_TOL:e}",
            a.neumann_trace_error, b.neumann_trace_error
        ),
    )
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap())
        })
        .collect();
    out.sort();
    out
}

fn determinism() -> Outcome {
    let jobs = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("jobs");
    let noisy = jobs.join("twin_noisy.json");
    let tmp = tempfile::tempdir().unwrap();
    let mut runs = Vec::new();
    for pass in 0..2 {
        let base = tmp.path().join(pass.to_string());
        let cmds: [Vec<String>; 3] = [
            vec!["reconstruct".into(), "--job".into(), noisy.display().to_string()],
            ["sweep", "--n", "32", "--frequencies", "2,4,8", "--noise", "0.01", "--seed", "5"].map(String::from).to_vec(),
            ["catalog", "--seed", "3"].map(String::from).to_vec(),
        ];
        let mut outputs = Vec::new();
        for (i, args) in cmds.iter().enumerate() {
            let out = base.join(i.to_string());
            let o = Command::new(env!("CARGO_BIN_EXE_hybridpd"))
                .args(args)
                .arg("--out")
                .arg(&out)
                .env("HYBRIDPD_THREADS", if pass == 0 { "1" } else { "4" })
                .output()
                .unwrap();
            if !o.status.success() {
                return outcome(false, format!("{} failed: {}", args[0], String::from_utf8_lossy(&o.stderr)));
            }
            outputs.push((o.stdout, files(&out)));
        }
        runs.push(outputs);
    }
    let count: usize = runs[0].iter().map(|(_, f)| f.len()).sum();
    outcome(
        runs[0] == runs[1],
        format!("reconstruct, sweep and catalog run twice (1 and 4 threads): {count} artifacts and stdout byte-identical"),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("forward convergence", forward_convergence),
        ("adjoint identity", adjoint_identity),
        ("linearization fidelity", linearization_fidelity),
        ("ellipticity oracle", ellipticity_oracle),
        ("UCP/ellipticity equivalence", ucp_equivalence),
        ("root classifier", root_classifier),
        ("linear twin", linear_twin_recovery),
        ("nonlinear twin", nonlinear_twin),
        ("stability contrast", stability_contrast),
        ("boundary dgamma recovery", boundary_recovery),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let o = f();
        if !o.pass {
            failed += 1;
        }
        println!("{} criterion {:>2} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, i + 1, o.detail);
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
