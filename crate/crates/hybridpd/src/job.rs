//! Job files: JSON descriptions of a grid, coefficients, boundary data and
//! command settings. Relative file paths resolve against the job file's
//! directory.

use std::path::{Path, PathBuf};

use hybridpd_core::forward::{synthesize_dataset, Dataset, SolverOptions, DEFAULT_GRADIENT_FLOOR};
use hybridpd_core::reconstruct::ReconstructionConfig;
use hybridpd_core::{BoundaryData, Error as CoreError, Grid, ScalarField, TraceKind};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::expr::Expr;
use crate::io;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    /// Nodes per axis, two or three entries.
    pub shape: Vec<usize>,
    /// Lower corner of the box, zero by default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lower: Option<Vec<f64>>,
    /// Upper corner of the box, one by default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upper: Option<Vec<f64>>,
}

impl GridSpec {
    pub fn square(n: usize) -> Self {
        GridSpec {
            shape: vec![n, n],
            lower: None,
            upper: None,
        }
    }

    pub fn grid(&self) -> CliResult<Grid> {
        let dim = self.shape.len();
        let lower = self.lower.clone().unwrap_or_else(|| vec![0.0; dim]);
        let upper = self.upper.clone().unwrap_or_else(|| vec![1.0; dim]);
        if lower.len() != dim || upper.len() != dim {
            return Err(CliError::precondition("grid lower/upper must have one entry per axis"));
        }
        let spacing: Vec<f64> = (0..dim)
            .map(|d| (upper[d] - lower[d]) / (self.shape[d].max(2) - 1) as f64)
            .collect();
        Ok(Grid::with_origin(&self.shape, &spacing, &lower)?)
    }
}

/// An expression in `x, y, z` or a CSV file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Source {
    Expr(String),
    File { file: PathBuf },
}

impl Source {
    fn expr(text: &str) -> CliResult<Expr> {
        Expr::parse(text).map_err(|e| CliError::expression(e, text))
    }

    pub fn field(&self, grid: &Grid, base: &Path) -> CliResult<ScalarField> {
        match self {
            Source::Expr(t) => {
                let e = Self::expr(t)?;
                Ok(ScalarField::from_fn(*grid, |p| e.eval(p))?)
            }
            Source::File { file } => {
                let path = base.join(file);
                let f = io::read_field(&path)?;
                if f.grid() != grid {
                    return Err(CliError::from(CoreError::GridMismatch).at(&path));
                }
                Ok(f)
            }
        }
    }

    pub fn boundary(&self, grid: &Grid, kind: TraceKind, base: &Path) -> CliResult<BoundaryData> {
        match self {
            Source::Expr(t) => {
                let e = Self::expr(t)?;
                Ok(BoundaryData::from_fn(*grid, kind, |p, _| e.eval(p))?)
            }
            Source::File { file } => {
                let path = base.join(file);
                let b = io::read_boundary(&path)?;
                if b.grid() != grid {
                    return Err(CliError::from(CoreError::GridMismatch).at(&path));
                }
                if b.kind() != kind {
                    return Err(CliError::precondition(format!("expected a {kind:?} trace")).at(&path));
                }
                Ok(b)
            }
        }
    }
}

fn default_gamma() -> Source {
    Source::Expr("1".into())
}

fn default_floor() -> f64 {
    DEFAULT_GRADIENT_FLOOR
}

/// Conductivity and Dirichlet conditions; the input of `forward`, `check`
/// and `linearize`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemJob {
    pub grid: GridSpec,
    #[serde(default = "default_gamma")]
    pub gamma: Source,
    pub boundary: Vec<Source>,
    #[serde(default = "default_floor")]
    pub gradient_floor: f64,
    #[serde(default)]
    pub solver: SolverOptions,
}

/// A job resolved to fields on its grid.
pub struct Problem {
    pub grid: Grid,
    pub gamma: ScalarField,
    pub boundary: Vec<BoundaryData>,
    pub gradient_floor: f64,
    pub solver: SolverOptions,
}

impl Problem {
    pub fn dataset(&self) -> CliResult<Dataset> {
        Ok(synthesize_dataset(&self.gamma, &self.boundary, self.gradient_floor, self.solver)?)
    }
}

fn boundary_set(sources: &[Source], grid: &Grid, base: &Path) -> CliResult<Vec<BoundaryData>> {
    if sources.is_empty() {
        return Err(CliError::precondition("at least one boundary condition is required"));
    }
    sources.iter().map(|s| s.boundary(grid, TraceKind::Dirichlet, base)).collect()
}

impl ProblemJob {
    pub fn resolve(&self, base: &Path) -> CliResult<Problem> {
        let grid = self.grid.grid()?;
        Ok(Problem {
            grid,
            gamma: self.gamma.field(&grid, base)?,
            boundary: boundary_set(&self.boundary, &grid, base)?,
            gradient_floor: self.gradient_floor,
            solver: self.solver,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticData {
    pub gamma_true: Source,
    /// Relative amplitude of uniform noise multiplying each `H_j`.
    #[serde(default)]
    pub noise: f64,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasuredData {
    /// One field file per functional.
    pub h: Vec<PathBuf>,
    /// One Neumann boundary file per functional.
    pub neumann: Vec<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSpec {
    Synthetic(SyntheticData),
    Files(MeasuredData),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReconstructJob {
    pub grid: GridSpec,
    pub boundary: Vec<Source>,
    #[serde(default = "default_gamma")]
    pub gamma_guess: Source,
    pub data: DataSpec,
    #[serde(default)]
    pub config: ReconstructionConfig,
}

impl ReconstructJob {
    pub fn grid(&self) -> CliResult<Grid> {
        self.grid.grid()
    }

    pub fn boundary_set(&self, grid: &Grid, base: &Path) -> CliResult<Vec<BoundaryData>> {
        boundary_set(&self.boundary, grid, base)
    }
}

/// Reads a job file and returns it with the directory relative paths resolve
/// against.
pub fn load<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<(T, PathBuf)> {
    let job = io::read_json(path)?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((job, base))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn problem_job_defaults() {
        let job: ProblemJob = serde_json::from_str(r#"{"grid": {"shape": [9, 9]}, "boundary": ["x", "x+y"]}"#).unwrap();
        let p = job.resolve(Path::new(".")).unwrap();
        assert_eq!(p.gamma.values(), &[1.0; 81][..]);
        assert_eq!(p.boundary.len(), 2);
        assert_eq!(p.gradient_floor, DEFAULT_GRADIENT_FLOOR);
        assert_eq!(p.grid.h(0), 0.125);
    }

    #[test]
    fn unknown_fields_and_bad_expressions_are_rejected() {
        assert!(serde_json::from_str::<ProblemJob>(r#"{"grid": {"shape": [9, 9]}, "boundary": [], "gama": "1"}"#).is_err());
        let job: ProblemJob = serde_json::from_str(r#"{"grid": {"shape": [9, 9]}, "boundary": ["x +"]}"#).unwrap();
        let e = job.resolve(Path::new(".")).err().unwrap();
        assert_eq!((e.exit_code(), e.offset), (2, Some(3)));
    }

    #[test]
    fn reconstruct_job_parses() {
        let job: ReconstructJob = serde_json::from_str(
            r#"{"grid": {"shape": [16, 16]}, "boundary": ["x", "y"],
                "data": {"synthetic": {"gamma_true": "1 + x", "noise": 0.01, "seed": 3}},
                "config": {"max_iter": 5}}"#,
        )
        .unwrap();
        assert_eq!(job.config.max_iter, 5);
        assert_eq!(job.config.functionals, 2);
        assert!(matches!(job.data, DataSpec::Synthetic(SyntheticData { seed: 3, .. })));
    }
}
