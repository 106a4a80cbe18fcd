//! Pointwise algebra of the quadratic forms `q_j(ξ) = 2(F̂_j·ξ)² − |ξ|²`:
//! collective ellipticity, boundary covering, tangential unique continuation
//! and root classification of `τ ↦ q_j(ξ′ + τN)`.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{ScalarField, VectorField};
use crate::grid::{Face, Grid};
use crate::vecmath::{cross, dot, norm, normalized, orthogonal_unit, to3};

/// Default threshold below which `max_j |q_j|` counts as zero.
pub const DEFAULT_TOLERANCE: f64 = 1e-6;
/// Default root separation threshold.
pub const DEFAULT_EPSILON: f64 = 1e-3;
/// Allowed deviation of a direction from unit length.
pub const UNIT_TOLERANCE: f64 = 1e-12;
/// Discriminant band treated as a double root.
pub const DISCRIMINANT_TOLERANCE: f64 = 1e-9;

fn check_unit(v: &[f64]) -> Result<()> {
    let n = norm(v);
    if (n - 1.0).abs() > UNIT_TOLERANCE {
        return Err(Error::NonUnitDirection { norm: n });
    }
    Ok(())
}

/// `2(f̂·ξ)² − |ξ|²`.
pub fn q_eval(fhat: &[f64], xi: &[f64]) -> Result<f64> {
    check_unit(fhat)?;
    if fhat.len() != xi.len() {
        return Err(Error::InvalidInput("direction and covector differ in dimension".into()));
    }
    Ok(q(&to3(fhat), &to3(xi)))
}

#[inline]
fn q(f: &[f64; 3], xi: &[f64; 3]) -> f64 {
    let s = dot(f, xi);
    2.0 * s * s - dot(xi, xi)
}

/// The forms carried by unit directions `F̂_1, …, F̂_J` at one point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FormFamily {
    dim: usize,
    dirs: Vec<[f64; 3]>,
}

impl FormFamily {
    /// Family from unit vectors (each of length `dim`).
    pub fn new(dirs: &[Vec<f64>]) -> Result<Self> {
        let dim = dirs.first().map(|d| d.len()).ok_or_else(|| {
            Error::InvalidInput("a form family needs at least one direction".into())
        })?;
        if !(2..=3).contains(&dim) || dirs.iter().any(|d| d.len() != dim) {
            return Err(Error::InvalidInput("directions must all be 2D or all 3D".into()));
        }
        for d in dirs {
            check_unit(d)?;
        }
        Ok(FormFamily {
            dim,
            dirs: dirs.iter().map(|d| to3(d)).collect(),
        })
    }

    /// Family from nonzero vectors, normalizing each.
    pub fn from_vectors(vs: &[Vec<f64>]) -> Result<Self> {
        let mut dirs = Vec::with_capacity(vs.len());
        for v in vs {
            let n = norm(v);
            if !(n > 0.0) {
                return Err(Error::NonUnitDirection { norm: n });
            }
            dirs.push(v.iter().map(|x| x / n).collect());
        }
        Self::new(&dirs)
    }

    pub(crate) fn from_raw(dim: usize, dirs: Vec<[f64; 3]>) -> Self {
        FormFamily { dim, dirs }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.dirs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dirs.is_empty()
    }

    pub fn direction(&self, j: usize) -> &[f64] {
        &self.dirs[j][..self.dim]
    }

    /// `q_j(ξ)`.
    pub fn q(&self, j: usize, xi: &[f64]) -> f64 {
        q(&self.dirs[j], &to3(xi))
    }

    fn max_abs(&self, xi: &[f64; 3]) -> f64 {
        self.dirs.iter().fold(0.0, |m, f| m.max(q(f, xi).abs()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EllipticityOptions {
    pub samples_2d: usize,
    pub samples_3d: usize,
    /// Candidates taken from the sampled minima into local refinement.
    pub refine: usize,
    pub tolerance: f64,
}

impl Default for EllipticityOptions {
    fn default() -> Self {
        EllipticityOptions {
            samples_2d: 720,
            samples_3d: 10_000,
            refine: 20,
            tolerance: DEFAULT_TOLERANCE,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EllipticityVerdict {
    pub elliptic: bool,
    /// Unit covector on which every form nearly vanishes, when not elliptic.
    pub witness: Option<Vec<f64>>,
    /// Smallest `max_j |q_j(ξ)|` found over unit `ξ`.
    pub margin: f64,
}

/// Points of the unit sphere by the Fibonacci spiral.
pub fn fibonacci_sphere(n: usize) -> Vec<[f64; 3]> {
    let golden = PI * (3.0 - libm::sqrt(5.0));
    (0..n)
        .map(|i| {
            let z = 1.0 - (2.0 * i as f64 + 1.0) / n as f64;
            let r = libm::sqrt((1.0 - z * z).max(0.0));
            let phi = golden * i as f64;
            [r * libm::cos(phi), r * libm::sin(phi), z]
        })
        .collect()
}

/// Null vectors of a single form: `(F̂ ± P)/√2` for several `P ⊥ F̂`.
fn null_anchors(f: &[f64; 3], dim: usize) -> Vec<[f64; 3]> {
    let s = core::f64::consts::FRAC_1_SQRT_2;
    if dim == 2 {
        let p = [-f[1], f[0], 0.0];
        return vec![
            [s * (f[0] + p[0]), s * (f[1] + p[1]), 0.0],
            [s * (f[0] - p[0]), s * (f[1] - p[1]), 0.0],
        ];
    }
    let p = orthogonal_unit(f);
    let r = cross(f, &p);
    (0..4)
        .map(|k| {
            let a = k as f64 * PI / 2.0;
            let t = [0, 1, 2].map(|i| libm::cos(a) * p[i] + libm::sin(a) * r[i]);
            [0, 1, 2].map(|i| s * (f[i] + t[i]))
        })
        .collect()
}

/// Common null vector of two 3D forms: `F̂₁ + F̂₂ + λF₃` with
/// `λ² = 2F̂₁·F̂₂ + 2(F̂₁·F̂₂)²` and `F₃` orthogonal to both.
pub fn pair_witness_3d(f1: &[f64; 3], f2: &[f64; 3]) -> [f64; 3] {
    let mut g = *f2;
    if dot(f1, &g) < 0.0 {
        g = [-g[0], -g[1], -g[2]];
    }
    let d = dot(f1, &g).min(1.0);
    let c = cross(f1, &g);
    let e = if norm(&c) > 1e-12 {
        normalized(&c)
    } else {
        orthogonal_unit(f1)
    };
    let lambda = libm::sqrt(2.0 * d + 2.0 * d * d);
    normalized(&[0, 1, 2].map(|i| f1[i] + g[i] + lambda * e[i]))
}

fn golden_min(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, iters: usize) -> (f64, f64) {
    let r = 0.5 * (libm::sqrt(5.0) - 1.0);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..iters {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    if fc < fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// Levenberg–Marquardt on `Σ_j q_j(ξ)²` over the unit sphere.
fn refine_sphere(fam: &FormFamily, start: [f64; 3]) -> [f64; 3] {
    let mut xi = start;
    let cost = |x: &[f64; 3]| fam.dirs.iter().map(|f| { let v = q(f, x); v * v }).sum::<f64>();
    let mut c = cost(&xi);
    let mut mu = 1e-3;
    for _ in 0..40 {
        let t1 = orthogonal_unit(&xi);
        let t2 = cross(&xi, &t1);
        let (mut a11, mut a12, mut a22, mut g1, mut g2) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for f in &fam.dirs {
            let r = q(f, &xi);
            let s = dot(f, &xi);
            let j1 = 4.0 * s * dot(f, &t1);
            let j2 = 4.0 * s * dot(f, &t2);
            a11 += j1 * j1;
            a12 += j1 * j2;
            a22 += j2 * j2;
            g1 += j1 * r;
            g2 += j2 * r;
        }
        let mut improved = false;
        for _ in 0..8 {
            let (b11, b22) = (a11 + mu, a22 + mu);
            let det = b11 * b22 - a12 * a12;
            if det == 0.0 {
                break;
            }
            let d1 = -(b22 * g1 - a12 * g2) / det;
            let d2 = -(b11 * g2 - a12 * g1) / det;
            let cand = normalized(&[0, 1, 2].map(|i| xi[i] + d1 * t1[i] + d2 * t2[i]));
            let cc = cost(&cand);
            if cc < c {
                xi = cand;
                c = cc;
                mu = (mu * 0.3).max(1e-12);
                improved = true;
                break;
            }
            mu *= 10.0;
        }
        if !improved || c < 1e-30 {
            break;
        }
    }
    xi
}

/// Collective ellipticity at one point: no unit `ξ` annihilates every `q_j`.
pub fn check_ellipticity_point(fam: &FormFamily, opts: &EllipticityOptions) -> EllipticityVerdict {
    let dim = fam.dim;
    let mut best = (f64::INFINITY, [0.0; 3]);
    let consider = |xi: [f64; 3], best: &mut (f64, [f64; 3])| {
        let v = fam.max_abs(&xi);
        if v < best.0 {
            *best = (v, xi);
        }
    };
    let mut anchors: Vec<[f64; 3]> = Vec::new();
    for f in &fam.dirs {
        anchors.extend(null_anchors(f, dim));
    }
    if dim == 3 {
        for a in 0..fam.len() {
            for b in a + 1..fam.len() {
                anchors.push(pair_witness_3d(&fam.dirs[a], &fam.dirs[b]));
            }
        }
    }
    for &a in &anchors {
        consider(a, &mut best);
    }
    if dim == 2 {
        let n = opts.samples_2d.max(8);
        let step = PI / n as f64;
        // ξ and −ξ give equal values; half the circle suffices.
        let mut vals: Vec<(f64, f64)> = (0..n)
            .map(|k| {
                let t = k as f64 * step;
                (fam.max_abs(&[libm::cos(t), libm::sin(t), 0.0]), t)
            })
            .collect();
        vals.sort_by(|a, b| a.0.total_cmp(&b.0));
        for &(_, t) in &vals {
            consider([libm::cos(t), libm::sin(t), 0.0], &mut best);
        }
        for &(_, t0) in vals.iter().take(opts.refine) {
            let (t, _) = golden_min(
                |t| fam.max_abs(&[libm::cos(t), libm::sin(t), 0.0]),
                t0 - step,
                t0 + step,
                80,
            );
            consider([libm::cos(t), libm::sin(t), 0.0], &mut best);
        }
    } else {
        let pts = fibonacci_sphere(opts.samples_3d.max(16));
        let mut vals: Vec<(f64, usize)> = pts
            .iter()
            .enumerate()
            .map(|(i, p)| (fam.max_abs(p), i))
            .collect();
        let k = opts.refine.min(vals.len());
        if k > 0 {
            vals.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0));
        }
        for &(_, i) in vals.iter().take(k) {
            consider(pts[i], &mut best);
            consider(refine_sphere(fam, pts[i]), &mut best);
        }
        // Common zeros lie on the first form's null cone.
        let f = fam.dirs[0];
        let p = orthogonal_unit(&f);
        let r = cross(&f, &p);
        let s = core::f64::consts::FRAC_1_SQRT_2;
        let on_cone = |phi: f64| {
            let (c, sn) = (libm::cos(phi), libm::sin(phi));
            [0, 1, 2].map(|i| s * (f[i] + c * p[i] + sn * r[i]))
        };
        let m = 720;
        let step = 2.0 * PI / m as f64;
        let mut cone: Vec<(f64, f64)> = (0..m)
            .map(|k| {
                let phi = k as f64 * step;
                (fam.max_abs(&on_cone(phi)), phi)
            })
            .collect();
        cone.sort_by(|a, b| a.0.total_cmp(&b.0));
        for &(_, phi0) in cone.iter().take(8) {
            let (phi, _) = golden_min(|t| fam.max_abs(&on_cone(t)), phi0 - step, phi0 + step, 80);
            consider(on_cone(phi), &mut best);
            consider(refine_sphere(fam, on_cone(phi)), &mut best);
        }
    }
    let elliptic = best.0 > opts.tolerance;
    EllipticityVerdict {
        elliptic,
        witness: (!elliptic).then(|| best.1[..dim].to_vec()),
        margin: best.0,
    }
}

/// Unit fields `F̂_j = F_j/|F_j|` on a grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldFamily {
    fields: Vec<VectorField>,
}

impl FieldFamily {
    /// Normalizes gradient fields, failing where `|F_j| < floor`.
    pub fn from_gradients(grads: &[VectorField], floor: f64) -> Result<Self> {
        let grid = *grads
            .first()
            .ok_or_else(|| Error::InvalidInput("a form family needs at least one field".into()))?
            .grid();
        let mut fields = Vec::with_capacity(grads.len());
        for (j, g) in grads.iter().enumerate() {
            if *g.grid() != grid {
                return Err(Error::GridMismatch);
            }
            fields.push(g.normalized(floor, j)?);
        }
        Ok(FieldFamily { fields })
    }

    pub fn grid(&self) -> &Grid {
        self.fields[0].grid()
    }

    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }

    pub fn at(&self, node: usize) -> FormFamily {
        FormFamily::from_raw(
            self.grid().dim(),
            self.fields.iter().map(|f| f.get(node)).collect(),
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldEllipticity {
    pub elliptic: bool,
    pub margin: ScalarField,
    /// Node with the smallest margin.
    pub worst_node: usize,
    pub non_elliptic_nodes: Vec<usize>,
}

pub fn check_ellipticity_field(fam: &FieldFamily, opts: &EllipticityOptions) -> FieldEllipticity {
    let grid = *fam.grid();
    let mut margins = Vec::with_capacity(grid.len());
    let mut bad = Vec::new();
    for node in 0..grid.len() {
        let v = check_ellipticity_point(&fam.at(node), opts);
        if !v.elliptic {
            bad.push(node);
        }
        margins.push(v.margin);
    }
    let worst_node = margins
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map_or(0, |(i, _)| i);
    FieldEllipticity {
        elliptic: bad.is_empty(),
        margin: ScalarField::from_vec(grid, margins),
        worst_node,
        non_elliptic_nodes: bad,
    }
}

/// `true` iff some `q_j(ν) ≠ 0`.
pub fn lopatinskii_point(fam: &FormFamily, nu: &[f64], tolerance: f64) -> bool {
    fam.max_abs(&to3(nu)) > tolerance
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LopatinskiiReport {
    pub covered: bool,
    /// `max_j |q_j(x, ν)|` per face, in face-node order.
    pub margin: Vec<Vec<f64>>,
    pub uncovered: Vec<(Face, usize)>,
}

/// Reduced covering check at every boundary node with its outward normal.
pub fn check_lopatinskii_boundary(fam: &FieldFamily, tolerance: f64) -> LopatinskiiReport {
    let grid = *fam.grid();
    let mut margin = Vec::new();
    let mut uncovered = Vec::new();
    for face in grid.faces() {
        let nu = face.normal(grid.dim());
        let mut m = Vec::new();
        for n in grid.face_nodes(face) {
            let v = fam.at(n).max_abs(&nu);
            if !(v > tolerance) {
                uncovered.push((face, n));
            }
            m.push(v);
        }
        margin.push(m);
    }
    LopatinskiiReport {
        covered: uncovered.is_empty(),
        margin,
        uncovered,
    }
}

/// `Δ′ = −1 + 2((F̂·N)² + (F̂·ξ′)²)`.
pub fn delta_prime(fhat: &[f64], n: &[f64], xi_prime: &[f64]) -> f64 {
    let a = dot(fhat, n);
    let b = dot(fhat, xi_prime);
    -1.0 + 2.0 * (a * a + b * b)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UcpDiagnostic {
    /// Every `q_j(N)` vanishes: `N` is characteristic for the whole family.
    EmptyActiveSet,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UcpVerdict {
    pub holds: bool,
    pub witness_xi_prime: Option<Vec<f64>>,
    pub active_set: Vec<usize>,
    /// `Δ′_j` at the witness (or at the worst tangential direction found).
    pub deltas: Vec<f64>,
    /// Smallest `max_{j active} |Δ′_j(ξ′)|` over unit `ξ′ ⊥ N`.
    pub margin: f64,
    pub diagnostic: Option<UcpDiagnostic>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UcpOptions {
    pub tangential_samples: usize,
    pub tolerance: f64,
}

impl Default for UcpOptions {
    fn default() -> Self {
        UcpOptions {
            tangential_samples: 360,
            tolerance: DEFAULT_TOLERANCE,
        }
    }
}

/// Tangential unique-continuation criterion at `(x, N)`: no unit `ξ′ ⊥ N`
/// annihilates `2(F̂_j·ξ′)² − (1 − 2(F̂_j·N)²)|ξ′|²` for all `j` with
/// `q_j(N) ≠ 0`.
pub fn check_ucp_point(fam: &FormFamily, n: &[f64], opts: &UcpOptions) -> Result<UcpVerdict> {
    check_unit(n)?;
    if n.len() != fam.dim {
        return Err(Error::InvalidInput("normal dimension differs from the family".into()));
    }
    let n3 = to3(n);
    let active: Vec<usize> = (0..fam.len())
        .filter(|&j| q(&fam.dirs[j], &n3).abs() > opts.tolerance)
        .collect();
    let t1 = if fam.dim == 2 {
        [-n3[1], n3[0], 0.0]
    } else {
        orthogonal_unit(&n3)
    };
    let t2 = cross(&n3, &t1);
    let deltas_at = |xi: &[f64; 3]| -> Vec<f64> {
        fam.dirs.iter().map(|f| delta_prime(f, &n3, xi)).collect()
    };
    if active.is_empty() {
        return Ok(UcpVerdict {
            holds: false,
            witness_xi_prime: Some(t1[..fam.dim].to_vec()),
            deltas: deltas_at(&t1),
            active_set: active,
            margin: 0.0,
            diagnostic: Some(UcpDiagnostic::EmptyActiveSet),
        });
    }
    let worst = |xi: &[f64; 3]| {
        active
            .iter()
            .fold(0.0f64, |m, &j| m.max(delta_prime(&fam.dirs[j], &n3, xi).abs()))
    };
    let mut best = (worst(&t1), t1);
    if fam.dim == 3 {
        let at = |phi: f64| [0, 1, 2].map(|i| libm::cos(phi) * t1[i] + libm::sin(phi) * t2[i]);
        let mut consider = |phi: f64| {
            let xi = at(phi);
            let v = worst(&xi);
            if v < best.0 {
                best = (v, xi);
            }
        };
        // Exact zeros of each active Δ′_j on the tangent circle.
        for &j in &active {
            let f = &fam.dirs[j];
            let (a, b) = (dot(f, &t1), dot(f, &t2));
            let nj = dot(f, &n3);
            let kappa = 0.5 - nj * nj;
            let r = libm::sqrt(a * a + b * b);
            if kappa < 0.0 || r == 0.0 || kappa > r * r {
                continue;
            }
            let psi = libm::atan2(b, a);
            let c = (libm::sqrt(kappa) / r).min(1.0);
            for acos in [libm::acos(c), libm::acos(-c)] {
                consider(psi + acos);
                consider(psi - acos);
            }
        }
        let m = opts.tangential_samples.max(8);
        let step = PI / m as f64;
        let mut vals: Vec<(f64, f64)> = (0..m)
            .map(|k| {
                let phi = k as f64 * step;
                (worst(&at(phi)), phi)
            })
            .collect();
        vals.sort_by(|a, b| a.0.total_cmp(&b.0));
        for &(_, phi0) in vals.iter().take(8) {
            consider(phi0);
            let (phi, _) = golden_min(|t| worst(&at(t)), phi0 - step, phi0 + step, 80);
            consider(phi);
        }
    }
    let holds = best.0 > opts.tolerance;
    Ok(UcpVerdict {
        holds,
        witness_xi_prime: (!holds).then(|| best.1[..fam.dim].to_vec()),
        deltas: deltas_at(&best.1),
        active_set: active,
        margin: best.0,
        diagnostic: None,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GlobalUcpVerdict {
    Holds,
    Fails,
    /// The recombination search found no certificate; this does not refute
    /// the property.
    Undetermined,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlobalUcpReport {
    pub verdict: GlobalUcpVerdict,
    /// Nodes where a necessary condition fails (2D: `F₁·F₂ = 0`).
    pub failing_nodes: Vec<usize>,
    /// `(node, N)` pairs where the 3D search found no certificate.
    pub undetermined: Vec<(usize, Vec<f64>)>,
    /// Smallest `|F̂₁·F̂₂|` (2D) over the checked nodes.
    pub min_abs_dot: f64,
    pub checked: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GlobalUcpOptions {
    pub tolerance: f64,
    /// Normals tried at each node in 3D.
    pub normals: Vec<[f64; 3]>,
    /// Check every `node_stride`-th node.
    pub node_stride: usize,
    /// Points of the recombination grid for `c` in (−1, 1).
    pub c_grid: usize,
    pub ellipticity: EllipticityOptions,
}

impl Default for GlobalUcpOptions {
    fn default() -> Self {
        let mut normals = Vec::new();
        for x in -1i32..=1 {
            for y in -1i32..=1 {
                for z in -1i32..=1 {
                    if (x, y, z) > (0, 0, 0) {
                        normals.push(normalized(&[x as f64, y as f64, z as f64]));
                    }
                }
            }
        }
        normals.extend(fibonacci_sphere(24).into_iter().filter(|p| p[2] >= 0.0));
        GlobalUcpOptions {
            tolerance: DEFAULT_TOLERANCE,
            normals,
            node_stride: 1,
            c_grid: 64,
            ellipticity: EllipticityOptions {
                samples_3d: 2000,
                refine: 12,
                ..EllipticityOptions::default()
            },
        }
    }
}

/// Global unique continuation: in 2D the conditions `rank(F₁, F₂) = 2` and
/// `F₁·F₂ ≠ 0` at every node; in 3D a search over recombined directions
/// `F_c = c e₁ + √(1−c²) e₂` in the plane of `F₁, F₂` for three forms that
/// are elliptic and non-characteristic at each sampled `N`.
pub fn check_global_ucp(fam: &FieldFamily, opts: &GlobalUcpOptions) -> Result<GlobalUcpReport> {
    if fam.len() < 2 {
        return Err(Error::NeedAtLeastTwoFunctionals);
    }
    let grid = *fam.grid();
    let dim = grid.dim();
    let mut report = GlobalUcpReport {
        verdict: GlobalUcpVerdict::Holds,
        failing_nodes: Vec::new(),
        undetermined: Vec::new(),
        min_abs_dot: f64::INFINITY,
        checked: 0,
    };
    for node in (0..grid.len()).step_by(opts.node_stride.max(1)) {
        let f = fam.at(node);
        let (f1, f2) = (f.dirs[0], f.dirs[1]);
        if norm(&cross(&f1, &f2)) <= opts.tolerance {
            return Err(Error::RankDeficiency { node });
        }
        report.checked += 1;
        let d = dot(&f1, &f2).abs();
        report.min_abs_dot = report.min_abs_dot.min(d);
        if dim == 2 {
            if d <= opts.tolerance {
                report.failing_nodes.push(node);
            }
            continue;
        }
        for nrm in &opts.normals {
            if !recombination_certificate(&f, nrm, opts) {
                report.undetermined.push((node, nrm.to_vec()));
            }
        }
    }
    report.verdict = if !report.failing_nodes.is_empty() {
        GlobalUcpVerdict::Fails
    } else if !report.undetermined.is_empty() {
        GlobalUcpVerdict::Undetermined
    } else {
        GlobalUcpVerdict::Holds
    };
    Ok(report)
}

/// Whether the forms of `f` span every in-plane form `q_c`, i.e. the squares
/// of three of its directions are independent binary quadratics.
fn spans_plane_forms(f: &FormFamily, e1: &[f64; 3], e2: &[f64; 3], tol: f64) -> bool {
    let mut rows: Vec<[f64; 3]> = Vec::new();
    for d in &f.dirs {
        let (a, b) = (dot(d, e1), dot(d, e2));
        let off = [0, 1, 2].map(|i| d[i] - a * e1[i] - b * e2[i]);
        if norm(&off) > tol {
            continue;
        }
        rows.push([a * a, 2.0 * a * b, b * b]);
    }
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            for k in j + 1..rows.len() {
                let (r, s, t) = (rows[i], rows[j], rows[k]);
                let det = r[0] * (s[1] * t[2] - s[2] * t[1]) - r[1] * (s[0] * t[2] - s[2] * t[0])
                    + r[2] * (s[0] * t[1] - s[1] * t[0]);
                if det.abs() > tol {
                    return true;
                }
            }
        }
    }
    false
}

fn recombination_certificate(f: &FormFamily, nrm: &[f64; 3], opts: &GlobalUcpOptions) -> bool {
    let e1 = f.dirs[0];
    let e2 = {
        let d = dot(&f.dirs[1], &e1);
        normalized(&[0, 1, 2].map(|i| f.dirs[1][i] - d * e1[i]))
    };
    if !spans_plane_forms(f, &e1, &e2, opts.tolerance) {
        return false;
    }
    let m = opts.c_grid.max(3);
    let dir = |c: f64| {
        let s = libm::sqrt(1.0 - c * c);
        [0, 1, 2].map(|i| c * e1[i] + s * e2[i])
    };
    let mut cands: Vec<(f64, f64)> = (0..m)
        .map(|i| {
            let c = -1.0 + (2 * i + 1) as f64 / m as f64;
            (q(&dir(c), nrm).abs(), c)
        })
        .filter(|p| p.0 > 1e3 * opts.tolerance)
        .collect();
    cands.sort_by(|a, b| b.0.total_cmp(&a.0));
    let min_gap = 4.0 / m as f64;
    let ucp = UcpOptions {
        tolerance: opts.tolerance,
        ..UcpOptions::default()
    };
    let mut tries = 0;
    for a in 0..cands.len() {
        for b in a + 1..cands.len() {
            for c in b + 1..cands.len() {
                let cs = [cands[a].1, cands[b].1, cands[c].1];
                if (cs[0] - cs[1]).abs() < min_gap
                    || (cs[0] - cs[2]).abs() < min_gap
                    || (cs[1] - cs[2]).abs() < min_gap
                {
                    continue;
                }
                tries += 1;
                if tries > 12 {
                    return false;
                }
                let fam = FormFamily::from_raw(3, cs.iter().map(|&c| dir(c)).collect());
                if !check_ellipticity_point(&fam, &opts.ellipticity).elliptic {
                    continue;
                }
                match check_ucp_point(&fam, nrm, &ucp) {
                    Ok(v) if v.holds && v.active_set.len() == 3 => return true,
                    _ => continue,
                }
            }
        }
    }
    false
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Complex {
    pub re: f64,
    pub im: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RootKind {
    DistinctReal,
    DoubleReal,
    ComplexPair,
    /// Leading coefficient vanishes (`N` characteristic).
    Degenerate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RootClassification {
    /// Coefficients `(a, b, c)` of `aτ² + bτ + c`.
    pub coefficients: [f64; 3],
    pub roots: Vec<Complex>,
    pub kind: RootKind,
    /// `(b² − 4ac)/4`.
    pub discriminant: f64,
    pub degenerate: bool,
    pub satisfies_i: bool,
    pub satisfies_ii: bool,
    pub satisfies_iii: bool,
    pub satisfies_iv: bool,
    pub epsilon: f64,
}

/// Roots of `τ ↦ q(ξ′ + τN) = (2(F̂·N)²−1)τ² + 4(F̂·N)(F̂·ξ′)τ + 2(F̂·ξ′)²−1`
/// and the root conditions: (i) no double real root; (ii) distinct roots at
/// least `ε` apart; (iii) non-real roots with `|Im τ| ≥ ε`; (iv) only simple
/// roots, all with `|Im τ| ≥ ε`.
pub fn classify_roots(fhat: &[f64], n: &[f64], xi_prime: &[f64], epsilon: f64) -> Result<RootClassification> {
    check_unit(fhat)?;
    check_unit(n)?;
    check_unit(xi_prime)?;
    let d = dot(n, xi_prime);
    if d.abs() > UNIT_TOLERANCE {
        return Err(Error::NonOrthogonalPair { dot: d });
    }
    let fn_ = dot(fhat, n);
    let fx = dot(fhat, xi_prime);
    let a = 2.0 * fn_ * fn_ - 1.0;
    let b = 4.0 * fn_ * fx;
    let c = 2.0 * fx * fx - 1.0;
    let disc = 0.25 * b * b - a * c;
    let mut out = RootClassification {
        coefficients: [a, b, c],
        roots: Vec::new(),
        kind: RootKind::Degenerate,
        discriminant: disc,
        degenerate: false,
        satisfies_i: true,
        satisfies_ii: true,
        satisfies_iii: true,
        satisfies_iv: false,
        epsilon,
    };
    if a.abs() <= UNIT_TOLERANCE {
        out.degenerate = true;
        if b.abs() > UNIT_TOLERANCE {
            out.roots.push(Complex { re: -c / b, im: 0.0 });
        }
        return Ok(out);
    }
    if disc.abs() <= DISCRIMINANT_TOLERANCE {
        let r = -b / (2.0 * a);
        out.kind = RootKind::DoubleReal;
        out.roots = vec![Complex { re: r, im: 0.0 }; 2];
        out.satisfies_i = false;
    } else if disc > 0.0 {
        let s = libm::sqrt(disc);
        // Numerically stable pair.
        let qq = -(0.5 * b + s.copysign(b));
        let (r1, r2) = if qq != 0.0 { (qq / a, c / qq) } else { (s / a, -s / a) };
        out.kind = RootKind::DistinctReal;
        out.roots = vec![Complex { re: r1.min(r2), im: 0.0 }, Complex { re: r1.max(r2), im: 0.0 }];
        out.satisfies_ii = (r1 - r2).abs() >= epsilon;
    } else {
        let re = -b / (2.0 * a);
        let im = (libm::sqrt(-disc) / a).abs();
        out.kind = RootKind::ComplexPair;
        out.roots = vec![Complex { re, im: -im }, Complex { re, im }];
        out.satisfies_ii = 2.0 * im >= epsilon;
        out.satisfies_iii = im >= epsilon;
        out.satisfies_iv = im >= epsilon;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use core::f64::consts::FRAC_1_SQRT_2 as S;

    fn fam(d: &[&[f64]]) -> FormFamily {
        FormFamily::new(&d.iter().map(|v| v.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn q_examples() {
        assert_eq!(q_eval(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(q_eval(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), -1.0);
        assert!(q_eval(&[1.0, 0.0], &[S, S]).unwrap().abs() < 1e-15);
        assert!(matches!(q_eval(&[1.0, 1.0], &[1.0, 0.0]), Err(Error::NonUnitDirection { .. })));
    }

    #[test]
    fn planar_pairs() {
        let o = EllipticityOptions::default();
        assert!(check_ellipticity_point(&fam(&[&[1.0, 0.0], &[S, S]]), &o).elliptic);
        let v = check_ellipticity_point(&fam(&[&[1.0, 0.0], &[0.0, 1.0]]), &o);
        assert!(!v.elliptic);
        let w = v.witness.unwrap();
        assert!((w[0].abs() - S).abs() < 1e-9 && (w[1].abs() - S).abs() < 1e-9);
        assert!(!check_ellipticity_point(&fam(&[&[1.0, 0.0], &[-1.0, 0.0]]), &o).elliptic);
    }

    #[test]
    fn spatial_pair_and_triple() {
        let o = EllipticityOptions::default();
        let f = fam(&[&[1.0, 0.0, 0.0], &[0.6, 0.8, 0.0]]);
        let v = check_ellipticity_point(&f, &o);
        assert!(!v.elliptic);
        let w = v.witness.unwrap();
        assert!(f.q(0, &w).abs() <= 1e-9 && f.q(1, &w).abs() <= 1e-9);
        let t = FormFamily::from_vectors(&[vec![1.0, 0.0, 0.0], vec![0.6, 0.8, 0.0], vec![1.6, 0.8, 0.0]]).unwrap();
        assert!(check_ellipticity_point(&t, &o).elliptic);
    }

    #[test]
    fn ucp_examples() {
        let o = UcpOptions::default();
        let pair = fam(&[&[1.0, 0.0], &[S, S]]);
        for k in 0..32 {
            let t = k as f64 * PI / 16.0;
            assert!(check_ucp_point(&pair, &[libm::cos(t), libm::sin(t)], &o).unwrap().holds);
        }
        let single = fam(&[&[0.0, 0.0, 1.0]]);
        assert!(check_ucp_point(&single, &[0.0, 0.0, 1.0], &o).unwrap().holds);
        let x = fam(&[&[1.0, 0.0, 0.0]]);
        let v = check_ucp_point(&x, &[0.0, 0.0, 1.0], &o).unwrap();
        assert!(!v.holds);
        let w = v.witness_xi_prime.unwrap();
        assert!(w[2].abs() < 1e-12 && (w[0].abs() - S).abs() < 1e-6);
        let orth = fam(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let v = check_ucp_point(&orth, &[S, S], &o).unwrap();
        assert!(!v.holds && v.diagnostic == Some(UcpDiagnostic::EmptyActiveSet));
    }

    #[test]
    fn root_examples() {
        let r = classify_roots(&[0.0, 0.0, 1.0], &[0.0, 0.0, 1.0], &[1.0, 0.0, 0.0], 1e-3).unwrap();
        assert_eq!(r.kind, RootKind::DistinctReal);
        assert!(r.satisfies_i && r.satisfies_ii && r.satisfies_iii && !r.satisfies_iv);
        let r = classify_roots(&[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0], &[1.0, 0.0, 0.0], 1e-3).unwrap();
        assert_eq!(r.kind, RootKind::ComplexPair);
        assert!((r.roots[1].im - 1.0).abs() < 1e-15 && r.satisfies_iv);
        let r = classify_roots(&[0.5, S, 0.5], &[0.0, 0.0, 1.0], &[1.0, 0.0, 0.0], 1e-3).unwrap();
        assert_eq!(r.kind, RootKind::DoubleReal);
        assert!(!r.satisfies_i && (r.roots[0].re - 1.0).abs() < 1e-12);
        assert!(matches!(
            classify_roots(&[1.0, 0.0, 0.0], &[0.0, 0.0, 1.0], &[0.0, S, S], 1e-3),
            Err(Error::NonOrthogonalPair { .. })
        ));
    }

    #[test]
    fn pair_witness_vanishes() {
        let f1 = normalized(&[1.0, 2.0, -0.5]);
        let f2 = normalized(&[-0.3, 0.1, 0.9]);
        let w = pair_witness_3d(&f1, &f2);
        assert!(q(&f1, &w).abs() < 1e-14 && q(&f2, &w).abs() < 1e-14);
    }
}
