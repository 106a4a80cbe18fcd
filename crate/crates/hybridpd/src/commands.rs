use std::fs;
use std::path::Path;

use hybridpd_core::diff::{discrete_norms, gradient, weighted_l2, Norms};
use hybridpd_core::experiments::{
    family_catalog, stability_sweep, ucp_equivalence_2d, CatalogReport, SweepFamily, SweepSpec, SweepTable,
    UcpEquivalenceReport,
};
use hybridpd_core::forward::{synthesize_dataset, SolverOptions, DEFAULT_GRADIENT_FLOOR};
use hybridpd_core::linearized::{
    assemble, BaseState, BcKind, BoundaryConditionSet, EquationTag, NormalOptions, NormalSystem, SystemKind,
};
use hybridpd_core::reconstruct::{fixed_point_reconstruct, Measurements, ReconstructionConfig, SystemVariant, Verdict};
use hybridpd_core::symbol::{
    check_ellipticity_field, check_ellipticity_point, check_global_ucp, check_lopatinskii_boundary, check_ucp_point,
    classify_roots, lopatinskii_point, EllipticityOptions, FieldFamily, FormFamily, GlobalUcpOptions, GlobalUcpVerdict,
    UcpOptions,
};
use hybridpd_core::{Grid, ScalarField};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::cli::{
    CatalogArgs, CheckArgs, CheckMode, Cli, Command, ForwardArgs, LinearizeArgs, ReconstructArgs, SweepArgs,
};
use crate::error::{CliError, CliResult, Family};
use crate::io;
use crate::job::{self, DataSpec, ProblemJob, ReconstructJob};

pub fn run(cli: Cli) -> CliResult<()> {
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::precondition("--threads must be at least 1"));
        }
        pool = pool.num_threads(n);
    }
    let pool = pool.build().map_err(|e| CliError::precondition(e.to_string()))?;
    pool.install(|| match cli.command {
        Command::Forward(a) => forward(&a),
        Command::Check(a) => check(&a),
        Command::Linearize(a) => linearize(&a),
        Command::Reconstruct(a) => reconstruct(&a),
        Command::Sweep(a) => sweep(&a),
        Command::Catalog(a) => catalog(&a),
    })
}

fn out_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::from(e).at(dir))
}

fn emit<T: Serialize>(report: &T, path: Option<&Path>) -> CliResult<()> {
    let text = io::to_json_string(report)?;
    if let Some(p) = path {
        fs::write(p, &text).map_err(|e| CliError::from(e).at(p))?;
    }
    print!("{text}");
    Ok(())
}

fn verdict_failure(what: &str) -> CliError {
    CliError::new(Family::Verdict, what)
}

#[derive(Serialize)]
struct FunctionalSummary {
    min_gradient: f64,
    h_norms: Norms,
}

#[derive(Serialize)]
struct ForwardReport {
    shape: Vec<usize>,
    functionals: usize,
    min_gradient: f64,
    per_functional: Vec<FunctionalSummary>,
}

fn forward(a: &ForwardArgs) -> CliResult<()> {
    let (job, base): (ProblemJob, _) = job::load(&a.job)?;
    let p = job.resolve(&base)?;
    let ds = p.dataset()?;
    out_dir(&a.out)?;
    io::write_field(&a.out.join("gamma.csv"), &p.gamma)?;
    let mut per = Vec::new();
    for j in 0..ds.u.len() {
        let k = j + 1;
        io::write_field(&a.out.join(format!("u_{k}.csv")), &ds.u[j])?;
        io::write_field(&a.out.join(format!("h_{k}.csv")), &ds.h[j])?;
        io::write_boundary(&a.out.join(format!("neumann_{k}.csv")), &ds.g[j])?;
        per.push(FunctionalSummary {
            min_gradient: gradient(&ds.u[j]).magnitude().min(),
            h_norms: discrete_norms(&ds.h[j]),
        });
    }
    let report = ForwardReport {
        shape: p.grid.shape().to_vec(),
        functionals: ds.u.len(),
        min_gradient: ds.min_gradient,
        per_functional: per,
    };
    emit(&report, Some(&a.out.join("forward.json")))
}

fn parse_vector(text: &str, what: &str) -> CliResult<Vec<f64>> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| CliError::parse(format!("--{what}: '{s}' is not a number")))
        })
        .collect()
}

fn parse_directions(text: &str) -> CliResult<Vec<Vec<f64>>> {
    text.split(';').map(|d| parse_vector(d, "directions")).collect()
}

fn unit(v: Vec<f64>, what: &str) -> CliResult<Vec<f64>> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(n > 0.0) {
        return Err(CliError::precondition(format!("--{what} must be nonzero")));
    }
    Ok(v.into_iter().map(|x| x / n).collect())
}

fn field_family(a: &CheckArgs) -> CliResult<Option<(FieldFamily, Grid)>> {
    let (gamma, set, floor, solver) = if let Some(path) = &a.job {
        let (job, base): (ProblemJob, _) = job::load(path)?;
        let p = job.resolve(&base)?;
        (p.gamma, p.boundary, p.gradient_floor, p.solver)
    } else if let Some(f) = a.family {
        let g = Grid::unit_square(a.n)?;
        (ScalarField::constant(g, 1.0), SweepFamily::from(f).boundary_set(&g), DEFAULT_GRADIENT_FLOOR, SolverOptions::default())
    } else {
        return Ok(None);
    };
    let grid = *gamma.grid();
    let ds = synthesize_dataset(&gamma, &set, floor, solver)?;
    let grads: Vec<_> = ds.u.iter().map(gradient).collect();
    Ok(Some((FieldFamily::from_gradients(&grads, floor)?, grid)))
}

fn need<'a>(v: &'a Option<String>, flag: &str) -> CliResult<&'a str> {
    v.as_deref()
        .ok_or_else(|| CliError::precondition(format!("this mode needs --{flag}")))
}

fn check(a: &CheckArgs) -> CliResult<()> {
    let mut eopts = EllipticityOptions::default();
    let mut uopts = UcpOptions::default();
    let mut gopts = GlobalUcpOptions::default();
    if let Some(t) = a.tolerance {
        eopts.tolerance = t;
        uopts.tolerance = t;
        gopts.tolerance = t;
        gopts.ellipticity.tolerance = t;
    }
    let out = a.out.as_deref();
    if a.mode == CheckMode::Roots {
        let dirs = parse_directions(need(&a.directions, "directions")?)?;
        if dirs.len() != 1 {
            return Err(CliError::precondition("roots takes exactly one direction"));
        }
        let f = unit(dirs[0].clone(), "directions")?;
        let n = unit(parse_vector(need(&a.normal, "normal")?, "normal")?, "normal")?;
        let x = unit(parse_vector(need(&a.xi_prime, "xi-prime")?, "xi-prime")?, "xi-prime")?;
        let r = classify_roots(&f, &n, &x, a.epsilon)?;
        return emit(&json!({ "mode": "roots", "classification": r }), out);
    }
    if let Some(d) = &a.directions {
        let fam = FormFamily::from_vectors(&parse_directions(d)?)?;
        let (report, ok): (Value, bool) = match a.mode {
            CheckMode::Ellipticity => {
                let v = check_ellipticity_point(&fam, &eopts);
                (json!({ "mode": "ellipticity", "verdict": v }), v.elliptic)
            }
            CheckMode::Lopatinskii => {
                let n = unit(parse_vector(need(&a.normal, "normal")?, "normal")?, "normal")?;
                let covered = lopatinskii_point(&fam, &n, eopts.tolerance);
                (json!({ "mode": "lopatinskii", "covered": covered }), covered)
            }
            CheckMode::Ucp => {
                let n = unit(parse_vector(need(&a.normal, "normal")?, "normal")?, "normal")?;
                let v = check_ucp_point(&fam, &n, &uopts)?;
                let holds = v.holds;
                (json!({ "mode": "ucp", "verdict": v }), holds)
            }
            CheckMode::GlobalUcp => {
                return Err(CliError::precondition("global-ucp needs a field family (--job or --family)"));
            }
            CheckMode::Roots => unreachable!("handled above"),
        };
        emit(&report, out)?;
        return if ok { Ok(()) } else { Err(verdict_failure("check verdict failed")) };
    }
    let (fam, grid) = field_family(a)?
        .ok_or_else(|| CliError::precondition("give one of --job, --family or --directions"))?;
    let (report, ok): (Value, bool) = match a.mode {
        CheckMode::Ellipticity => {
            let v = check_ellipticity_field(&fam, &eopts);
            let worst = check_ellipticity_point(&fam.at(v.worst_node), &eopts);
            let report = json!({
                "mode": "ellipticity",
                "elliptic": v.elliptic,
                "worst_node": v.worst_node,
                "worst_point": grid.coords(v.worst_node)[..grid.dim()].to_vec(),
                "min_margin": v.margin.min(),
                "non_elliptic_nodes": v.non_elliptic_nodes.len(),
                "witness": worst.witness,
            });
            (report, v.elliptic)
        }
        CheckMode::Lopatinskii => {
            let v = check_lopatinskii_boundary(&fam, eopts.tolerance);
            let min = v.margin.iter().flatten().fold(f64::INFINITY, |m, &x| m.min(x));
            let uncovered: Vec<Value> =
                v.uncovered.iter().map(|(f, n)| json!({ "face": f.name(), "node": n })).collect();
            (json!({ "mode": "lopatinskii", "covered": v.covered, "min_margin": min, "uncovered": uncovered }), v.covered)
        }
        CheckMode::Ucp => {
            let n = unit(parse_vector(need(&a.normal, "normal")?, "normal")?, "normal")?;
            let mut failing = Vec::new();
            let mut first = None;
            for node in 0..grid.len() {
                let v = check_ucp_point(&fam.at(node), &n, &uopts)?;
                if !v.holds {
                    failing.push(node);
                    first.get_or_insert((node, v));
                }
            }
            let ok = failing.is_empty();
            let witness = first.map(|(node, v)| json!({ "node": node, "verdict": v }));
            (json!({ "mode": "ucp", "holds": ok, "failing_nodes": failing, "first_failure": witness }), ok)
        }
        CheckMode::GlobalUcp => {
            let v = check_global_ucp(&fam, &gopts)?;
            let ok = v.verdict != GlobalUcpVerdict::Fails;
            (json!({ "mode": "global-ucp", "report": v }), ok)
        }
        CheckMode::Roots => unreachable!("handled above"),
    };
    emit(&report, out)?;
    if ok {
        Ok(())
    } else {
        Err(verdict_failure("check verdict failed"))
    }
}

#[derive(Serialize)]
struct BlockSummary {
    tag: EquationTag,
    rows: [usize; 2],
}

fn linearize(a: &LinearizeArgs) -> CliResult<()> {
    let (job, base_dir): (ProblemJob, _) = job::load(&a.job)?;
    let p = job.resolve(&base_dir)?;
    let ds = p.dataset()?;
    let base = BaseState::new(&p.gamma, &ds.u, p.gradient_floor)?;
    let kind = SystemKind::from(a.system);
    let op = assemble(&base, kind)?;
    let bc = BcKind::from(a.bc);
    let kinds = vec![bc; op.layout().block_count()];
    let ns = NormalSystem::new(
        &op,
        &kinds,
        NormalOptions {
            tikhonov: a.tikhonov,
            scale_rows: true,
        },
    )?;
    let (normal, _) = ns.square_form(&vec![0.0; op.nrows()], &BoundaryConditionSet::homogeneous(op.layout(), bc))?;
    out_dir(&a.out)?;
    io::write_triplets(&a.out.join("operator.csv"), op.matrix())?;
    io::write_triplets(&a.out.join("normal.csv"), &normal)?;
    let blocks: Vec<BlockSummary> = op
        .blocks()
        .iter()
        .map(|b| BlockSummary {
            tag: b.tag,
            rows: [b.rows.start, b.rows.end],
        })
        .collect();
    io::write_json(&a.out.join("blocks.json"), &blocks)?;
    let eigen = if a.eigen { Some(ns.smallest_eigenpair(200).0) } else { None };
    let report = json!({
        "system": kind,
        "bc": bc,
        "rows": op.nrows(),
        "cols": op.ncols(),
        "nnz": op.matrix().nnz(),
        "reduced_unknowns": ns.reduced_len(),
        "normal_nnz": normal.nnz(),
        "tikhonov": a.tikhonov,
        "smallest_eigenvalue": eigen,
    });
    emit(&report, Some(&a.out.join("linearize.json")))
}

#[derive(Serialize)]
struct IterateRow {
    iterate: usize,
    increment: f64,
    residual: f64,
    data_misfit: f64,
    boundary_misfit: f64,
}

#[derive(Serialize)]
struct ReconstructSummary {
    system: SystemVariant,
    verdict: Verdict,
    iterate_count: usize,
    increments: Vec<f64>,
    residuals: Vec<f64>,
    c1: f64,
    c2: f64,
    gamma_min: f64,
    gamma_max: f64,
    /// Relative l² error against the synthetic truth.
    gamma_relative_error: Option<f64>,
    config: ReconstructionConfig,
}

fn reconstruct(a: &ReconstructArgs) -> CliResult<()> {
    let (job, base): (ReconstructJob, _) = job::load(&a.job)?;
    let grid = job.grid()?;
    let set = job.boundary_set(&grid, &base)?;
    let guess = job.gamma_guess.field(&grid, &base)?;
    let mut cfg = job.config;
    cfg.functionals = set.len();
    let (m, truth) = match &job.data {
        DataSpec::Synthetic(s) => {
            let gt = s.gamma_true.field(&grid, &base)?;
            let mut ds = synthesize_dataset(&gt, &set, cfg.gradient_floor, cfg.solver)?;
            if s.noise > 0.0 {
                let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
                for h in &mut ds.h {
                    for v in h.values_mut() {
                        *v *= 1.0 + s.noise * rng.gen_range(-1.0..1.0);
                    }
                }
            }
            (Measurements::from_dataset(&set, &ds), Some(gt))
        }
        DataSpec::Files(f) => {
            if f.h.len() != set.len() || f.neumann.len() != set.len() {
                return Err(CliError::precondition("one h and one neumann file per boundary condition"));
            }
            let mut h = Vec::new();
            let mut neumann = Vec::new();
            for (hp, np) in f.h.iter().zip(&f.neumann) {
                let hf = io::read_field(&base.join(hp))?;
                let nf = io::read_boundary(&base.join(np))?;
                if hf.grid() != &grid || nf.grid() != &grid {
                    return Err(CliError::precondition("data files must live on the job grid"));
                }
                h.push(hf);
                neumann.push(nf);
            }
            (
                Measurements {
                    dirichlet: set,
                    h,
                    neumann,
                },
                None,
            )
        }
    };
    let r = fixed_point_reconstruct(&m, &guess, &cfg)?;
    out_dir(&a.out)?;
    io::write_field(&a.out.join("gamma.csv"), &r.gamma)?;
    for (j, u) in r.u.iter().enumerate() {
        io::write_field(&a.out.join(format!("u_{}.csv", j + 1)), u)?;
    }
    let rows: Vec<IterateRow> = (0..r.iterate_count)
        .map(|k| IterateRow {
            iterate: k + 1,
            increment: r.increments[k],
            residual: r.residuals[k],
            data_misfit: r.data_misfits[k],
            boundary_misfit: r.boundary_misfits[k],
        })
        .collect();
    io::write_table(&a.out.join("iterations.csv"), &rows)?;
    let rel = truth.map(|gt| {
        let e = r.gamma.lin_comb(1.0, &gt, -1.0).expect("same grid");
        weighted_l2(&grid, e.values()) / weighted_l2(&grid, gt.values())
    });
    let summary = ReconstructSummary {
        system: r.system,
        verdict: r.verdict,
        iterate_count: r.iterate_count,
        increments: r.increments.clone(),
        residuals: r.residuals.clone(),
        c1: r.c1,
        c2: r.c2,
        gamma_min: r.gamma.min(),
        gamma_max: r.gamma.max(),
        gamma_relative_error: rel,
        config: cfg,
    };
    emit(&summary, Some(&a.out.join("report.json")))?;
    match r.verdict {
        Verdict::Converged => Ok(()),
        v => Err(CliError::new(Family::Solver, format!("reconstruction ended with verdict {v:?}"))),
    }
}

#[derive(Serialize)]
struct SweepCsvRow {
    family: &'static str,
    n: usize,
    k: usize,
    dgamma_l2: f64,
    dh_l2: f64,
    amplification: f64,
}

#[derive(Serialize)]
struct Contrast {
    family: SweepFamily,
    n: usize,
    /// `max_k a(k) / min_k a(k)`.
    spread: f64,
    /// `a(k_max) / a(k_min)`.
    growth: f64,
}

fn contrast(t: &SweepTable, n: usize) -> Option<Contrast> {
    let a: Vec<f64> = t.rows.iter().filter(|r| r.n == n).map(|r| r.amplification).collect();
    if a.is_empty() {
        return None;
    }
    let max = a.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = a.iter().cloned().fold(f64::INFINITY, f64::min);
    Some(Contrast {
        family: t.family,
        n,
        spread: max / min,
        growth: a[a.len() - 1] / a[0],
    })
}

fn sweep(a: &SweepArgs) -> CliResult<()> {
    let mut specs = Vec::new();
    for &f in &a.family {
        for &n in &a.n {
            let mut s = SweepSpec::new(f.into(), a.frequencies.clone(), vec![n]);
            s.amplitude = a.amplitude;
            s.noise = a.noise;
            s.seed = a.seed;
            s.tikhonov = a.tikhonov;
            specs.push(s);
        }
    }
    let tables: Vec<SweepTable> = specs
        .par_iter()
        .map(stability_sweep)
        .collect::<Result<_, _>>()?;
    out_dir(&a.out)?;
    let rows: Vec<SweepCsvRow> = tables
        .iter()
        .flat_map(|t| {
            t.rows.iter().map(|r| SweepCsvRow {
                family: t.family.name(),
                n: r.n,
                k: r.k,
                dgamma_l2: r.dgamma_l2,
                dh_l2: r.dh_l2,
                amplification: r.amplification,
            })
        })
        .collect();
    io::write_table(&a.out.join("sweep.csv"), &rows)?;
    let contrasts: Vec<Contrast> = tables.iter().zip(&specs).filter_map(|(t, s)| contrast(t, s.grid_sizes[0])).collect();
    emit(&json!({ "tables": tables, "contrast": contrasts }), Some(&a.out.join("sweep.json")))
}

#[derive(Serialize)]
struct CatalogCsvRow {
    case: String,
    expected_elliptic: bool,
    elliptic: bool,
    witness_residual: Option<f64>,
    pass: bool,
}

#[derive(Serialize)]
struct CatalogOutput {
    catalog: CatalogReport,
    ucp_equivalence: Option<UcpEquivalenceReport>,
}

fn catalog(a: &CatalogArgs) -> CliResult<()> {
    let (cat, ucp) = rayon::join(
        || family_catalog(a.seed),
        || (a.ucp_trials > 0).then(|| ucp_equivalence_2d(a.seed, a.ucp_trials, a.normals)).transpose(),
    );
    let ucp = ucp?;
    out_dir(&a.out)?;
    let rows: Vec<CatalogCsvRow> = cat
        .entries
        .iter()
        .map(|e| CatalogCsvRow {
            case: serde_json::to_value(e.case).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default(),
            expected_elliptic: e.expected_elliptic,
            elliptic: e.elliptic,
            witness_residual: e.witness_residual,
            pass: e.pass,
        })
        .collect();
    io::write_table(&a.out.join("catalog.csv"), &rows)?;
    let ok = cat.all_pass && ucp.as_ref().is_none_or(|u| u.disagreements.is_empty());
    emit(
        &CatalogOutput {
            catalog: cat,
            ucp_equivalence: ucp,
        },
        Some(&a.out.join("catalog.json")),
    )?;
    if ok {
        Ok(())
    } else {
        Err(verdict_failure("catalog verdicts disagree with the analytic cases"))
    }
}
