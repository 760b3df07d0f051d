//! Matrix-free discrete operators in Kronecker-sum form.

use crate::error::{Error, Result};
use crate::field::Field;
use crate::grid::{BcKind, Grid};

/// A linear operator acting on scalar lattices.
pub trait LinearOp {
    fn grid(&self) -> &Grid;
    fn apply_slice(&self, x: &[f64], y: &mut [f64]);
    /// True when the operator annihilates constants (all-periodic Laplacian).
    fn has_nullspace(&self) -> bool {
        false
    }
}

/// Second-order Laplacian, the Kronecker sum of per-axis 1D stencil
/// matrices `A_x ⊗ I + I ⊗ A_y (+ 3D analogue)` applied matrix-free.
///
/// Per axis the 1D matrix carries the interior stencil `(1, −2, 1)/h²`;
/// periodic axes wrap, while on Dirichlet/Neumann axes the first and last
/// rows (boundary sample resp. ghost layer) are identity rows.
#[derive(Debug, Clone)]
pub struct LaplaceOperator {
    grid: Grid,
}

impl LaplaceOperator {
    pub fn new(grid: &Grid) -> LaplaceOperator {
        LaplaceOperator { grid: grid.clone() }
    }

    /// Apply to each component of a field.
    pub fn apply(&self, p: &Field) -> Result<Field> {
        if p.grid() != &self.grid {
            return Err(Error::Shape("field grid does not match operator grid".into()));
        }
        let mut out = Field::zeros(&self.grid, p.components());
        for c in 0..p.components() {
            self.apply_slice(p.component(c), out.component_mut(c));
        }
        Ok(out)
    }

    /// Coefficient of the 1D stencil row for `index` on `axis`, as the
    /// triple (sub, diag, super); identity rows return (0, 1, 0).
    fn axis_row(&self, axis: usize, index: usize) -> (f64, f64, f64) {
        let n = self.grid.n(axis);
        let inv_h2 = {
            let h = self.grid.spacing(axis);
            1.0 / (h * h)
        };
        if self.grid.bc(axis) != BcKind::Periodic && (index == 0 || index == n - 1) {
            (0.0, 1.0, 0.0)
        } else {
            (inv_h2, -2.0 * inv_h2, inv_h2)
        }
    }
}

impl LinearOp for LaplaceOperator {
    fn grid(&self) -> &Grid {
        &self.grid
    }

    fn has_nullspace(&self) -> bool {
        self.grid.all_periodic()
    }

    fn apply_slice(&self, x: &[f64], y: &mut [f64]) {
        apply_kronecker_sum(&self.grid, x, y, |axis, index| self.axis_row(axis, index), 0.0);
    }
}

/// Helmholtz operator `(I − coeff ∇²)` on an all-periodic lattice; the
/// implicit viscous system of the projection predictor.
#[derive(Debug, Clone)]
pub struct HelmholtzOperator {
    grid: Grid,
    coeff: f64,
}

impl HelmholtzOperator {
    pub fn new(grid: &Grid, coeff: f64) -> Result<HelmholtzOperator> {
        if !grid.all_periodic() {
            return Err(Error::Usage("Helmholtz operator requires an all-periodic grid".into()));
        }
        Ok(HelmholtzOperator { grid: grid.clone(), coeff })
    }
}

impl LinearOp for HelmholtzOperator {
    fn grid(&self) -> &Grid {
        &self.grid
    }

    fn apply_slice(&self, x: &[f64], y: &mut [f64]) {
        let c = -self.coeff;
        apply_kronecker_sum(
            &self.grid,
            x,
            y,
            |axis, _| {
                let h = self.grid.spacing(axis);
                let w = c / (h * h);
                (w, -2.0 * w, w)
            },
            1.0,
        );
    }
}

/// Shared kernel: `y = shift·x + Σ_axes A_axis x`, rows given per axis and
/// index, periodic wrap on periodic axes.
fn apply_kronecker_sum(
    grid: &Grid,
    x: &[f64],
    y: &mut [f64],
    row: impl Fn(usize, usize) -> (f64, f64, f64),
    shift: f64,
) {
    let dim = grid.dim();
    let strides = grid.strides();
    let mut idx = [0usize; 3];
    for (flat, out) in y.iter_mut().enumerate() {
        grid.unflatten(flat, &mut idx);
        let mut acc = shift * x[flat];
        for a in 0..dim {
            let n = grid.n(a);
            let (sub, diag, sup) = row(a, idx[a]);
            acc += diag * x[flat];
            if sub != 0.0 {
                let lo = if idx[a] == 0 { flat + (n - 1) * strides[a] } else { flat - strides[a] };
                acc += sub * x[lo];
            }
            if sup != 0.0 {
                let hi = if idx[a] == n - 1 { flat - (n - 1) * strides[a] } else { flat + strides[a] };
                acc += sup * x[hi];
            }
        }
        *out = acc;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_periodic_maps_to_zero() {
        let g = Grid::periodic(&[16, 16]);
        let op = LaplaceOperator::new(&g);
        let p = Field::constant(&g, 1, 5.0);
        let out = op.apply(&p).unwrap();
        assert!(out.data().iter().all(|v| v.abs() < 1e-12));
        assert!(op.has_nullspace());
    }

    #[test]
    fn cosine_is_an_eigenvector() {
        // A cos(kx) = −(2 − 2 cos(k h))/h² · cos(kx) on a periodic axis
        let g = Grid::periodic(&[32, 32]);
        let h = g.spacing(0);
        let op = LaplaceOperator::new(&g);
        for k in 1..=16usize {
            let p = Field::scalar_from_fn(&g, |x| (k as f64 * x[0]).cos());
            let out = op.apply(&p).unwrap();
            let lambda = -(2.0 - 2.0 * (k as f64 * h).cos()) / (h * h);
            let scale = lambda.abs().max(1.0);
            for (o, v) in out.data().iter().zip(p.data()) {
                assert!((o - lambda * v).abs() <= 1e-12 * scale, "k={k}");
            }
        }
    }

    #[test]
    fn linearity() {
        let g = Grid::periodic(&[8, 8, 8]);
        let op = LaplaceOperator::new(&g);
        let p = Field::scalar_from_fn(&g, |x| (x[0] + 0.5 * x[1]).sin() * x[2].cos());
        let q = Field::scalar_from_fn(&g, |x| (2.0 * x[2]).cos() + x[0].sin());
        let mut combo = p.clone();
        combo.scale(1.7);
        combo.axpy(-0.3, &q);
        let lhs = op.apply(&combo).unwrap();
        let mut rhs = op.apply(&p).unwrap();
        rhs.scale(1.7);
        rhs.axpy(-0.3, &op.apply(&q).unwrap());
        for (a, b) in lhs.data().iter().zip(rhs.data()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn symmetric_on_periodic_grids() {
        let g = Grid::periodic(&[32, 32]);
        let op = LaplaceOperator::new(&g);
        let p = Field::scalar_from_fn(&g, |x| (3.0 * x[0]).sin() + (x[0] * 0.7 + 2.3 * x[1]).cos());
        let q = Field::scalar_from_fn(&g, |x| (x[1] * 5.0).sin() * (x[0]).cos() + 0.1);
        let ap = op.apply(&p).unwrap();
        let aq = op.apply(&q).unwrap();
        let lhs = ap.dot(&q);
        let rhs = p.dot(&aq);
        assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(rhs.abs()).max(1.0));
    }

    #[test]
    fn helmholtz_is_identity_plus_scaled_laplacian() {
        let g = Grid::periodic(&[16, 16]);
        let coeff = 0.037;
        let hh = HelmholtzOperator::new(&g, coeff).unwrap();
        let lap = LaplaceOperator::new(&g);
        let p = Field::scalar_from_fn(&g, |x| (2.0 * x[0]).sin() + (3.0 * x[1]).cos());
        let mut hx = vec![0.0; g.points()];
        hh.apply_slice(p.component(0), &mut hx);
        let lx = lap.apply(&p).unwrap();
        for ((h, x), l) in hx.iter().zip(p.data()).zip(lx.data()) {
            assert!((h - (x - coeff * l)).abs() < 1e-12);
        }
    }

    #[test]
    fn grid_mismatch_is_rejected() {
        let op = LaplaceOperator::new(&Grid::periodic(&[8, 8]));
        let p = Field::zeros(&Grid::periodic(&[16, 16]), 1);
        assert!(op.apply(&p).is_err());
    }
}
