//! Pressure-Poisson solver plug-ins backed by the learned models.

use rustfft::num_complex::Complex;

use crate::error::Result;
use crate::fft;
use crate::field::Field;
use crate::grid::Grid;
use crate::learned::hierarchy::LearnedHierarchy;
use crate::learned::nets::PoissonNn;
use crate::linsolve::{bicgstab, LaplaceOperator, SolverReport};
use crate::projection::PpeSolver;

struct NnCache {
    grid: Grid,
    kernel_hat: Vec<Complex<f64>>,
    boundary: Field,
}

/// BiCGSTAB seeded by the Poisson-network prediction.
///
/// The coordinate nets depend only on the grid, so their output is cached:
/// per solve the prediction costs one forward and one inverse FFT.
pub struct NnInitBicgstab {
    pub model: PoissonNn,
    pub tol: f64,
    pub max_iter: usize,
    cache: Option<NnCache>,
}

impl NnInitBicgstab {
    pub fn new(model: PoissonNn, tol: f64, max_iter: usize) -> NnInitBicgstab {
        NnInitBicgstab { model, tol, max_iter, cache: None }
    }

    fn predict(&mut self, b: &Field) -> Result<Field> {
        let grid = b.grid();
        let fresh = match &self.cache {
            Some(c) => &c.grid != grid,
            None => true,
        };
        if fresh {
            let (g, h) = self.model.kernel_fields(grid)?;
            let mut kernel_hat = fft::to_complex(g.data());
            fft::forward(grid.shape(), &mut kernel_hat);
            self.cache = Some(NnCache { grid: grid.clone(), kernel_hat, boundary: h });
        }
        let cache = self.cache.as_ref().unwrap();
        let mut buf = fft::to_complex(b.data());
        fft::forward(grid.shape(), &mut buf);
        for (v, k) in buf.iter_mut().zip(&cache.kernel_hat) {
            *v *= *k;
        }
        fft::inverse(grid.shape(), &mut buf);
        let mut out = Field::from_data(grid, 1, fft::real_part(&buf))?;
        out.axpy(1.0, &cache.boundary);
        out.sub_mean();
        Ok(out)
    }
}

impl PpeSolver for NnInitBicgstab {
    fn name(&self) -> String {
        "poisson-nn".into()
    }

    fn initial_guess(&mut self, _op: &LaplaceOperator, b: &Field, _prev_p: &Field) -> Result<Field> {
        self.predict(b)
    }

    fn solve_from(&mut self, op: &LaplaceOperator, b: &Field, x0: &Field) -> Result<(Field, SolverReport)> {
        bicgstab(op, b, x0, self.tol, self.max_iter)
    }
}

/// V-cycle iteration with learned kernels (NMG / CNN-MG / WTCNN-MG).
pub struct LearnedMgPpe {
    pub hierarchy: LearnedHierarchy,
    pub tol: f64,
    pub max_cycles: usize,
}

impl PpeSolver for LearnedMgPpe {
    fn name(&self) -> String {
        self.hierarchy.variant.name().into()
    }

    fn solve_from(&mut self, _op: &LaplaceOperator, b: &Field, x0: &Field) -> Result<(Field, SolverReport)> {
        self.hierarchy.solve(b, x0, self.tol, self.max_cycles)
    }
}
