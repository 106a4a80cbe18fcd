use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use hybridpd_core::experiments::SweepFamily;
use hybridpd_core::linearized::{BcKind, SystemKind};

/// Power-density inversion toolkit: forward synthesis, symbol checks,
/// linearized systems, fixed-point reconstruction and experiments.
///
/// Exit status: 0 success, 2 parse error, 3 failed precondition, 4 solver
/// failure or non-converged reconstruction, 5 failed verdict. Errors are
/// also written to stderr as one JSON object.
#[derive(Debug, Parser)]
#[command(name = "hybridpd", version)]
pub struct Cli {
    /// Worker threads for parallel experiment runs.
    #[arg(long, global = true, env = "HYBRIDPD_THREADS")]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve the conductivity equation for every boundary condition and write
    /// u_j, H_j and the Neumann traces.
    Forward(ForwardArgs),
    /// Pointwise or field-wide ellipticity, boundary covering, UCP and root
    /// checks.
    Check(CheckArgs),
    /// Assemble a linearized system and its constrained normal form and
    /// export them as triplets.
    Linearize(LinearizeArgs),
    /// Run the fixed-point reconstruction described by a job file.
    Reconstruct(ReconstructArgs),
    /// Amplification of oscillatory data perturbations per family and
    /// frequency.
    Sweep(SweepArgs),
    /// Reproduce the analytic ellipticity verdicts and the 2D UCP
    /// equivalence on seeded random families.
    Catalog(CatalogArgs),
}

#[derive(Debug, Args)]
pub struct ForwardArgs {
    /// Job file with grid, gamma and boundary conditions.
    #[arg(long)]
    pub job: PathBuf,
    /// Output directory (created if missing).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum CheckMode {
    /// Collective ellipticity of the forms q_j.
    Ellipticity,
    /// Reduced covering condition: some q_j(nu) != 0.
    Lopatinskii,
    /// Tangential UCP criterion at a given normal.
    Ucp,
    /// Global UCP conditions over a field family.
    GlobalUcp,
    /// Roots of tau -> q(xi' + tau N) and root conditions (i)-(iv).
    Roots,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum FamilyArg {
    Elliptic,
    #[value(name = "orthogonal-2d")]
    Orthogonal2d,
    SingleJ1,
}

impl From<FamilyArg> for SweepFamily {
    fn from(f: FamilyArg) -> Self {
        match f {
            FamilyArg::Elliptic => SweepFamily::Elliptic,
            FamilyArg::Orthogonal2d => SweepFamily::Orthogonal2d,
            FamilyArg::SingleJ1 => SweepFamily::SingleJ1,
        }
    }
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    #[arg(long, value_enum)]
    pub mode: CheckMode,
    /// Field family from the forward solutions of a job file.
    #[arg(long, conflicts_with_all = ["family", "directions"])]
    pub job: Option<PathBuf>,
    /// Field family from a named boundary set at gamma = 1 on the unit square.
    #[arg(long, value_enum, conflicts_with = "directions")]
    pub family: Option<FamilyArg>,
    /// Nodes per axis for --family.
    #[arg(long, default_value_t = 17)]
    pub n: usize,
    /// Pointwise family: directions separated by ';', components by ','.
    #[arg(long, allow_hyphen_values = true)]
    pub directions: Option<String>,
    /// Normal N (or nu) for ucp, lopatinskii and roots, components by ','.
    #[arg(long, allow_hyphen_values = true)]
    pub normal: Option<String>,
    /// Tangential covector xi' for roots.
    #[arg(long, allow_hyphen_values = true)]
    pub xi_prime: Option<String>,
    /// Root separation for roots.
    #[arg(long, default_value_t = 1e-6)]
    pub epsilon: f64,
    /// Zero tolerance on |q_j|.
    #[arg(long)]
    pub tolerance: Option<f64>,
    /// Write the JSON report here as well as to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SystemArg {
    First,
    Eliminated,
    Eliminated2,
    Triangular,
}

impl From<SystemArg> for SystemKind {
    fn from(s: SystemArg) -> Self {
        match s {
            SystemArg::First => SystemKind::First,
            SystemArg::Eliminated => SystemKind::Eliminated,
            SystemArg::Eliminated2 => SystemKind::Eliminated2,
            SystemArg::Triangular => SystemKind::Triangular,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum BcArg {
    None,
    Dirichlet,
    Cauchy,
}

impl From<BcArg> for BcKind {
    fn from(b: BcArg) -> Self {
        match b {
            BcArg::None => BcKind::None,
            BcArg::Dirichlet => BcKind::Dirichlet,
            BcArg::Cauchy => BcKind::Cauchy,
        }
    }
}

#[derive(Debug, Args)]
pub struct LinearizeArgs {
    #[arg(long)]
    pub job: PathBuf,
    #[arg(long, value_enum, default_value = "triangular")]
    pub system: SystemArg,
    /// Boundary conditions imposed on every unknown block of the normal form.
    #[arg(long, value_enum, default_value = "cauchy")]
    pub bc: BcArg,
    #[arg(long, default_value_t = 0.0)]
    pub tikhonov: f64,
    /// Also estimate the smallest eigenvalue of the normal matrix.
    #[arg(long)]
    pub eigen: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReconstructArgs {
    /// Job file with grid, boundary conditions, guess, data and config.
    #[arg(long)]
    pub job: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Boundary-condition families; repeat or separate by ','.
    #[arg(long, value_enum, value_delimiter = ',', default_value = "elliptic,orthogonal-2d")]
    pub family: Vec<FamilyArg>,
    #[arg(long, value_delimiter = ',', default_value = "2,4,8,16")]
    pub frequencies: Vec<usize>,
    /// Nodes per axis of each grid.
    #[arg(long, value_delimiter = ',', default_value = "64")]
    pub n: Vec<usize>,
    #[arg(long, default_value_t = 1e-2)]
    pub amplitude: f64,
    /// Relative uniform noise added to each perturbation.
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.0)]
    pub tikhonov: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CatalogArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Random 2D families for the UCP equivalence; zero skips it.
    #[arg(long, default_value_t = 200)]
    pub ucp_trials: usize,
    /// Sampled normals per family (a multiple of 16).
    #[arg(long, default_value_t = 32)]
    pub normals: usize,
    #[arg(long)]
    pub out: PathBuf,
}
