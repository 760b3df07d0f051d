//! Classical geometric multigrid: weighted Jacobi smoothing, full-weighting
//! restriction, bi/trilinear prolongation, V-cycles.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::Field;
use crate::grid::Grid;
use crate::linsolve::{LaplaceOperator, LinearOp, SolverReport};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MgConfig {
    pub levels: usize,
    pub pre_sweeps: usize,
    pub post_sweeps: usize,
    pub jacobi_weight: f64,
    /// Weighted-Jacobi sweeps used as the coarsest-level solve.
    pub coarse_sweeps: usize,
    pub max_cycles: usize,
}

impl MgConfig {
    /// As many levels as the grid allows with a coarsest level of at least
    /// 4 points per axis.
    pub fn for_grid(grid: &Grid) -> MgConfig {
        let mut levels = 1;
        let mut n = grid.shape().to_vec();
        while n.iter().all(|&v| v % 2 == 0 && v / 2 >= 4) {
            for v in n.iter_mut() {
                *v /= 2;
            }
            levels += 1;
        }
        MgConfig {
            levels,
            pre_sweeps: 2,
            post_sweeps: 2,
            jacobi_weight: 2.0 / 3.0,
            coarse_sweeps: 50,
            max_cycles: 500,
        }
    }

    pub fn validate(&self, grid: &Grid) -> Result<()> {
        if self.levels < 2 {
            return Err(Error::Usage("multigrid needs at least 2 levels".into()));
        }
        if !grid.all_periodic() {
            return Err(Error::Usage("multigrid here supports all-periodic grids".into()));
        }
        let factor = 1usize << (self.levels - 1);
        for a in 0..grid.dim() {
            if grid.n(a) % factor != 0 {
                return Err(Error::Usage(format!(
                    "axis {a} size {} not divisible by 2^{}",
                    grid.n(a),
                    self.levels - 1
                )));
            }
            if grid.n(a) / factor < 4 {
                return Err(Error::Usage(format!(
                    "coarsest level would drop below 4 points on axis {a}"
                )));
            }
        }
        Ok(())
    }
}

struct Hierarchy {
    grids: Vec<Grid>,
    ops: Vec<LaplaceOperator>,
}

impl Hierarchy {
    fn build(grid: &Grid, levels: usize) -> Result<Hierarchy> {
        let mut grids = vec![grid.clone()];
        for _ in 1..levels {
            grids.push(grids.last().unwrap().coarsen()?);
        }
        let ops = grids.iter().map(LaplaceOperator::new).collect();
        Ok(Hierarchy { grids, ops })
    }
}

fn jacobi_sweeps(grid: &Grid, op: &LaplaceOperator, b: &[f64], x: &mut [f64], sweeps: usize, omega: f64) {
    let diag: f64 = -(0..grid.dim())
        .map(|a| {
            let h = grid.spacing(a);
            2.0 / (h * h)
        })
        .sum::<f64>();
    let mut ax = vec![0.0; x.len()];
    for _ in 0..sweeps {
        op.apply_slice(x, &mut ax);
        for i in 0..x.len() {
            x[i] += omega * (b[i] - ax[i]) / diag;
        }
    }
}

/// Full-weighting restriction: tensor product of (1/4, 1/2, 1/4) per axis,
/// centered over even fine points, periodic wrap.
pub(crate) fn restrict_full_weighting(fine: &Grid, coarse: &Grid, src: &[f64], dst: &mut [f64]) {
    let dim = fine.dim();
    let w1 = [0.25, 0.5, 0.25];
    let mut cidx = [0usize; 3];
    for (cflat, out) in dst.iter_mut().enumerate() {
        coarse.unflatten(cflat, &mut cidx);
        let mut acc = 0.0;
        let offsets = 3usize.pow(dim as u32);
        for combo in 0..offsets {
            let mut rem = combo;
            let mut w = 1.0;
            let mut fidx = [0usize; 3];
            for a in 0..dim {
                let o = rem % 3;
                rem /= 3;
                w *= w1[o];
                let n = fine.n(a);
                fidx[a] = (2 * cidx[a] + n + o - 1) % n;
            }
            acc += w * src[fine.flat(&fidx[..dim])];
        }
        *out = acc;
    }
}

/// Bi/trilinear prolongation; adds into `dst`.
pub(crate) fn prolong_linear(coarse: &Grid, fine: &Grid, src: &[f64], dst: &mut [f64]) {
    let dim = fine.dim();
    let mut fidx = [0usize; 3];
    for (fflat, out) in dst.iter_mut().enumerate() {
        fine.unflatten(fflat, &mut fidx);
        // per-axis (coarse index, weight) pairs
        let mut acc = 0.0;
        let combos = 1usize << dim;
        for combo in 0..combos {
            let mut w = 1.0;
            let mut cidx = [0usize; 3];
            let mut skip = false;
            for a in 0..dim {
                let nc = coarse.n(a);
                let i = fidx[a];
                if i % 2 == 0 {
                    if combo & (1 << a) != 0 {
                        skip = true;
                        break;
                    }
                    cidx[a] = i / 2;
                } else {
                    w *= 0.5;
                    cidx[a] = if combo & (1 << a) == 0 { i / 2 } else { (i / 2 + 1) % nc };
                }
            }
            if !skip {
                acc += w * src[coarse.flat(&cidx[..dim])];
            }
        }
        *out += acc;
    }
}

fn vcycle_level(h: &Hierarchy, level: usize, b: &[f64], x: &mut [f64], config: &MgConfig) {
    let grid = &h.grids[level];
    let op = &h.ops[level];
    if level == h.grids.len() - 1 {
        jacobi_sweeps(grid, op, b, x, config.coarse_sweeps, config.jacobi_weight);
        return;
    }
    jacobi_sweeps(grid, op, b, x, config.pre_sweeps, config.jacobi_weight);

    let mut r = vec![0.0; x.len()];
    op.apply_slice(x, &mut r);
    for i in 0..r.len() {
        r[i] = b[i] - r[i];
    }
    let coarse = &h.grids[level + 1];
    let mut rc = vec![0.0; coarse.points()];
    restrict_full_weighting(grid, coarse, &r, &mut rc);
    let mut xc = vec![0.0; coarse.points()];
    vcycle_level(h, level + 1, &rc, &mut xc, config);
    prolong_linear(coarse, grid, &xc, x);

    jacobi_sweeps(grid, op, b, x, config.post_sweeps, config.jacobi_weight);
}

fn relative_residual(op: &LaplaceOperator, b: &[f64], x: &[f64], denom: f64) -> f64 {
    let mut ax = vec![0.0; x.len()];
    op.apply_slice(x, &mut ax);
    let rr: f64 = ax.iter().zip(b).map(|(a, bi)| (bi - a) * (bi - a)).sum();
    rr.sqrt() / denom
}

fn check_inputs(op: &LaplaceOperator, b: &Field, x0: &Field, config: &MgConfig) -> Result<()> {
    if !b.is_scalar() || !x0.is_scalar() {
        return Err(Error::Shape("multigrid operates on scalar fields".into()));
    }
    if b.grid() != op.grid() || x0.grid() != op.grid() {
        return Err(Error::Shape("rhs/initial guess grid does not match operator".into()));
    }
    config.validate(op.grid())
}

/// One V-cycle. The report carries the residual before and after the cycle.
pub fn mg_vcycle(
    op: &LaplaceOperator,
    b: &Field,
    x0: &Field,
    config: &MgConfig,
) -> Result<(Field, SolverReport)> {
    check_inputs(op, b, x0, config)?;
    let h = Hierarchy::build(op.grid(), config.levels)?;
    let denom = {
        let n = b.norm_l2();
        if n > 0.0 {
            n
        } else {
            1.0
        }
    };
    let mut x = x0.data().to_vec();
    let mut report = SolverReport::new(0.0);
    report.residual_history.push(relative_residual(&h.ops[0], b.data(), &x, denom));
    vcycle_level(&h, 0, b.data(), &mut x, config);
    if op.has_nullspace() {
        let m = x.iter().sum::<f64>() / x.len() as f64;
        for v in &mut x {
            *v -= m;
        }
    }
    report.residual_history.push(relative_residual(&h.ops[0], b.data(), &x, denom));
    report.iterations = 1;
    let mut out = Field::zeros(op.grid(), 1);
    out.data_mut().copy_from_slice(&x);
    Ok((out, report))
}

/// Repeat V-cycles until the relative residual drops below `tol`.
///
/// Divergence (residual above 10× the initial one) aborts with a report.
pub fn mg_solve(
    op: &LaplaceOperator,
    b: &Field,
    x0: &Field,
    config: &MgConfig,
    tol: f64,
) -> Result<(Field, SolverReport)> {
    check_inputs(op, b, x0, config)?;
    if !(tol > 0.0) {
        return Err(Error::Usage("tolerance must be positive".into()));
    }
    let h = Hierarchy::build(op.grid(), config.levels)?;
    let b_norm = b.norm_l2();
    if op.has_nullspace() && b_norm > 0.0 {
        let mean = b.data().iter().sum::<f64>() / b.data().len() as f64;
        if mean.abs() > 1e-8 * b_norm / (b.data().len() as f64).sqrt() {
            return Err(Error::Numerical(format!(
                "incompatible rhs: mean {mean:e} on a periodic Poisson operator"
            )));
        }
    }
    let denom = if b_norm > 0.0 { b_norm } else { 1.0 };
    let mut x = x0.data().to_vec();
    if op.has_nullspace() {
        let m = x.iter().sum::<f64>() / x.len() as f64;
        for v in &mut x {
            *v -= m;
        }
    }
    let mut report = SolverReport::new(tol);
    let r0 = relative_residual(&h.ops[0], b.data(), &x, denom);
    report.residual_history.push(r0);
    if r0 <= tol {
        report.converged = true;
        let mut out = Field::zeros(op.grid(), 1);
        out.data_mut().copy_from_slice(&x);
        return Ok((out, report));
    }
    for cycle in 0..config.max_cycles {
        vcycle_level(&h, 0, b.data(), &mut x, config);
        if op.has_nullspace() {
            let m = x.iter().sum::<f64>() / x.len() as f64;
            for v in &mut x {
                *v -= m;
            }
        }
        let r = relative_residual(&h.ops[0], b.data(), &x, denom);
        report.iterations = cycle + 1;
        report.residual_history.push(r);
        if r <= tol {
            report.converged = true;
            break;
        }
        if r > 10.0 * r0 {
            report.failure = Some(format!("diverged: residual {r:e} above 10x initial {r0:e}"));
            break;
        }
    }
    let mut out = Field::zeros(op.grid(), 1);
    out.data_mut().copy_from_slice(&x);
    Ok((out, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn manufactured(grid: &Grid, seed: u64) -> (Field, Field) {
        use rand::Rng;
        let mut rng = crate::rng::stream(seed, &[99]);
        let mut p = Field::zeros(grid, 1);
        for v in p.data_mut() {
            *v = rng.gen::<f64>() - 0.5;
        }
        p.sub_mean();
        let op = LaplaceOperator::new(grid);
        let b = op.apply(&p).unwrap();
        (p, b)
    }

    #[test]
    fn zero_rhs_stays_zero() {
        let g = Grid::periodic(&[32, 32]);
        let op = LaplaceOperator::new(&g);
        let cfg = MgConfig::for_grid(&g);
        let (x, _) = mg_vcycle(&op, &Field::zeros(&g, 1), &Field::zeros(&g, 1), &cfg).unwrap();
        assert!(x.norm_l2() == 0.0);
    }

    #[test]
    fn vcycle_reduces_residual_substantially() {
        let g = Grid::periodic(&[64, 64]);
        let op = LaplaceOperator::new(&g);
        let cfg = MgConfig::for_grid(&g);
        let (_, b) = manufactured(&g, 5);
        let (_, rep) = mg_vcycle(&op, &b, &Field::zeros(&g, 1), &cfg).unwrap();
        let reduction = rep.residual_history[1] / rep.residual_history[0];
        assert!(reduction < 0.2, "single-cycle reduction {reduction}");
    }

    #[test]
    fn solve_recovers_manufactured_solution() {
        for shape in [vec![64usize, 64], vec![16, 16, 16]] {
            let g = Grid::periodic(&shape);
            let op = LaplaceOperator::new(&g);
            let cfg = MgConfig::for_grid(&g);
            let (p, b) = manufactured(&g, 7);
            let (x, rep) = mg_solve(&op, &b, &Field::zeros(&g, 1), &cfg, 1e-8).unwrap();
            assert!(rep.converged, "{:?}", rep.failure);
            let mut diff = x.clone();
            diff.axpy(-1.0, &p);
            assert!(diff.norm_l2() / p.norm_l2() < 1e-6, "error {}", diff.norm_l2() / p.norm_l2());
        }
    }

    #[test]
    fn trivial_tolerance_needs_at_most_one_cycle() {
        let g = Grid::periodic(&[32, 32]);
        let op = LaplaceOperator::new(&g);
        let cfg = MgConfig::for_grid(&g);
        let (_, b) = manufactured(&g, 11);
        let (_, rep) = mg_solve(&op, &b, &Field::zeros(&g, 1), &cfg, 1.0).unwrap();
        assert!(rep.converged);
        assert!(rep.iterations <= 1, "iterations {}", rep.iterations);
    }

    #[test]
    fn smoother_damps_rough_modes_faster() {
        // Jacobi damping factor for the mode sin(kx)sin(ky) is
        // 1 − ω(1 − cos kh); rough modes shrink much faster than smooth ones
        let g = Grid::periodic(&[64, 64]);
        let op = LaplaceOperator::new(&g);
        let h = g.spacing(0);
        let omega = 2.0 / 3.0;
        let analytic = |k: f64| 1.0 - omega * (1.0 - (k * h).cos());
        for k in [1usize, 24] {
            let mut p = Field::scalar_from_fn(&g, |x| (k as f64 * x[0]).sin() * (k as f64 * x[1]).sin());
            let before = p.norm_l2();
            let b = vec![0.0; g.points()];
            let mut x = p.data().to_vec();
            jacobi_sweeps(&g, &op, &b, &mut x, 1, omega);
            p.data_mut().copy_from_slice(&x);
            let after = p.norm_l2();
            let got = after / before;
            let expect = analytic(k as f64).abs();
            assert!((got - expect).abs() < 1e-10, "k={k}: {got} vs {expect}");
        }
        assert!(analytic(24.0).abs() < analytic(1.0).abs());
    }

    #[test]
    fn restriction_and_prolongation_preserve_constants() {
        let g = Grid::periodic(&[16, 16]);
        let c = g.coarsen().unwrap();
        let fine = vec![3.0; g.points()];
        let mut coarse = vec![0.0; c.points()];
        restrict_full_weighting(&g, &c, &fine, &mut coarse);
        assert!(coarse.iter().all(|v| (v - 3.0).abs() < 1e-14));
        let mut back = vec![0.0; g.points()];
        prolong_linear(&c, &g, &coarse, &mut back);
        assert!(back.iter().all(|v| (v - 3.0).abs() < 1e-14));
    }

    #[test]
    fn non_coarsenable_grid_is_rejected() {
        let g = Grid::periodic(&[12, 12]);
        let cfg = MgConfig { levels: 3, ..MgConfig::for_grid(&g) };
        assert!(cfg.validate(&g).is_err());
    }
}
