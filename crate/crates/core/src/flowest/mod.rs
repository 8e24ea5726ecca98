//! Path-flow estimation: the path-only QP, its ADMM solver, flow recovery
//! and integer rounding.

mod admm;
mod ldl;
mod problem;
mod solution;

pub use admm::{solve as solve_qp, unscaled_residuals, AdmmError, AdmmSettings, QpProblem, QpSolution, SolveStatus};
pub use ldl::{LdlError, LdlFactor};
pub use problem::{AssembledQp, FlowProblem, DEFAULT_GAMMA, DEFAULT_RHO};
pub use solution::{
    estimate_all_tods, recover_flows, restore_feasibility, round_path_flows, solve_flow, tod_report, write_link_flows, write_od_flows,
    write_path_flows, FlowSolution, RoundedFlows, TodReport,
};

#[derive(Debug, thiserror::Error)]
pub enum FlowError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid flow problem: {0}")]
    InvalidProblem(String),
    #[error(transparent)]
    Solver(#[from] AdmmError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}
