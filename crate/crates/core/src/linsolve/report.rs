use serde::{Deserialize, Serialize};

/// Convergence record of one linear solve. Residuals are relative:
/// `r_k = ‖A p − b‖₂ / ‖b‖₂` (absolute when `‖b‖ = 0`).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolverReport {
    /// Iterations (BiCGSTAB steps or V-cycles) actually performed.
    pub iterations: usize,
    /// One entry per iteration, starting with the initial residual; the last
    /// entry is always recomputed from `A x − b` rather than the recursion.
    pub residual_history: Vec<f64>,
    pub converged: bool,
    pub tolerance: f64,
    /// Breakdown or divergence reason, when the solve was aborted.
    pub failure: Option<String>,
}

impl SolverReport {
    pub fn new(tolerance: f64) -> SolverReport {
        SolverReport {
            iterations: 0,
            residual_history: Vec::new(),
            converged: false,
            tolerance,
            failure: None,
        }
    }

    pub fn final_residual(&self) -> f64 {
        *self.residual_history.last().unwrap_or(&f64::NAN)
    }

    /// RFC-4180 CSV of (iteration, residual) rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,residual\r\n");
        for (i, r) in self.residual_history.iter().enumerate() {
            out.push_str(&format!("{},{}\r\n", i, crate::container::fmt_g17(*r)));
        }
        out
    }
}
