//! Discrete pressure-Poisson operator, BiCGSTAB and geometric multigrid.

mod bicgstab;
mod multigrid;
mod operator;
mod report;

pub use bicgstab::bicgstab;
pub use multigrid::{mg_solve, mg_vcycle, MgConfig};
pub use operator::{HelmholtzOperator, LaplaceOperator, LinearOp};
pub use report::SolverReport;
