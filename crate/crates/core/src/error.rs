use alloc::string::String;
use alloc::vec::Vec;

use crate::grid::Face;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("fields live on different grids")]
    GridMismatch,
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },
    #[error("conductivity {value} at node {node} is not above the floor {floor}")]
    NonPositiveConductivity { node: usize, value: f64, floor: f64 },
    #[error("linear solve did not reach tolerance: relative residual {residual:e} > {tolerance:e}")]
    SolverFailure { residual: f64, tolerance: f64 },
    #[error("linear solve failed: {0}")]
    LinearSolveFailure(String),
    #[error("|F_{functional}| = {magnitude:e} at node {node} is below the floor {floor:e}")]
    GradientFloorViolation {
        functional: usize,
        node: usize,
        magnitude: f64,
        floor: f64,
    },
    #[error("direction is not a unit vector (norm {norm})")]
    NonUnitDirection { norm: f64 },
    #[error("normal and tangential vectors are not orthogonal (dot {dot:e})")]
    NonOrthogonalPair { dot: f64 },
    #[error("rank(F_1, F_2) < 2 at node {node}")]
    RankDeficiency { node: usize },
    #[error("eliminated systems need at least two functionals")]
    NeedAtLeastTwoFunctionals,
    #[error("unknown block {block} has no Cauchy data")]
    MissingCauchyData { block: usize },
    #[error("boundary normal is characteristic for P_1 at {} node(s)", nodes.len())]
    CharacteristicBoundaryNormal { nodes: Vec<(Face, usize)> },
}
