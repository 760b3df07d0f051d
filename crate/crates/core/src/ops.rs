//! Discrete differential operators.
//!
//! Two stencil families are supported: collocated central differences and
//! MAC-staggered face/center differences. Staggered conventions: scalars
//! (pressure) live at cell centers `(i+1/2)h`, vector component `a` lives on
//! axis-`a` faces (`i·h` along axis `a`, centers along the rest). Staggered
//! operators assume all-periodic grids, which is the only place they are
//! used.

use crate::error::{Error, Result};
use crate::field::Field;
use crate::grid::{BcKind, Grid};

#[inline]
fn shifted(grid: &Grid, idx: &[usize; 3], axis: usize, step: isize) -> usize {
    let n = grid.n(axis) as isize;
    let mut i = idx[axis] as isize + step;
    if i < 0 {
        i += n;
    } else if i >= n {
        i -= n;
    }
    let s = grid.strides();
    let mut flat = i as usize * s[axis];
    for a in 0..grid.dim() {
        if a != axis {
            flat += idx[a] * s[a];
        }
    }
    flat
}

fn require_periodic(grid: &Grid, what: &str) -> Result<()> {
    if grid.all_periodic() {
        Ok(())
    } else {
        Err(Error::Usage(format!("{what} requires an all-periodic grid")))
    }
}

/// Discrete divergence of a vector field.
///
/// Staggered: face-to-center differences, so the result lives at cell
/// centers. Collocated: central differences with periodic wrap, one-sided at
/// non-periodic ends.
pub fn divergence(u: &Field, staggered: bool) -> Result<Field> {
    let grid = u.grid();
    let dim = grid.dim();
    if u.components() != dim {
        return Err(Error::Shape(format!(
            "divergence needs {dim} components, field has {}",
            u.components()
        )));
    }
    if staggered {
        require_periodic(grid, "staggered divergence")?;
    }
    let mut out = Field::zeros(grid, 1);
    let mut idx = [0usize; 3];
    for flat in 0..grid.points() {
        grid.unflatten(flat, &mut idx);
        let mut acc = 0.0;
        for a in 0..dim {
            let h = grid.spacing(a);
            let comp = u.component(a);
            acc += if staggered {
                (comp[shifted(grid, &idx, a, 1)] - comp[flat]) / h
            } else {
                collocated_diff(grid, comp, &idx, flat, a, h)
            };
        }
        out.data_mut()[flat] = acc;
    }
    Ok(out)
}

/// Discrete gradient of a scalar field.
///
/// Staggered: center-to-face differences; component `a` of the result lives
/// on axis-`a` faces. Composed with the staggered divergence this reproduces
/// the `2·dim+1`-point Laplacian stencil exactly.
pub fn gradient(p: &Field, staggered: bool) -> Result<Field> {
    let grid = p.grid();
    let dim = grid.dim();
    if !p.is_scalar() {
        return Err(Error::Shape("gradient expects a scalar field".into()));
    }
    if staggered {
        require_periodic(grid, "staggered gradient")?;
    }
    let mut out = Field::zeros(grid, dim);
    let mut idx = [0usize; 3];
    let src = p.component(0);
    for flat in 0..grid.points() {
        grid.unflatten(flat, &mut idx);
        for a in 0..dim {
            let h = grid.spacing(a);
            let v = if staggered {
                (src[flat] - src[shifted(grid, &idx, a, -1)]) / h
            } else {
                collocated_diff(grid, src, &idx, flat, a, h)
            };
            out.component_mut(a)[flat] = v;
        }
    }
    Ok(out)
}

#[inline]
fn collocated_diff(grid: &Grid, src: &[f64], idx: &[usize; 3], flat: usize, axis: usize, h: f64) -> f64 {
    let n = grid.n(axis);
    if grid.bc(axis) == BcKind::Periodic {
        (src[shifted(grid, idx, axis, 1)] - src[shifted(grid, idx, axis, -1)]) / (2.0 * h)
    } else if idx[axis] == 0 {
        (src[shifted(grid, idx, axis, 1)] - src[flat]) / h
    } else if idx[axis] == n - 1 {
        (src[flat] - src[shifted(grid, idx, axis, -1)]) / h
    } else {
        (src[shifted(grid, idx, axis, 1)] - src[shifted(grid, idx, axis, -1)]) / (2.0 * h)
    }
}

/// Conservative-form convection `∇·(u⊗u)` on a 2D staggered MAC grid.
///
/// Second-order centered interpolation: `u²` at cell centers, `uv` at cell
/// corners, differentiated back to the faces. Same stencil the projection
/// predictor uses.
pub fn convect_staggered(u: &Field) -> Result<Field> {
    let grid = u.grid();
    if grid.dim() != 2 || u.components() != 2 {
        return Err(Error::Shape("staggered convection is implemented for 2D vector fields".into()));
    }
    require_periodic(grid, "staggered convection")?;
    let (nx, ny) = (grid.n(0), grid.n(1));
    let (hx, hy) = (grid.spacing(0), grid.spacing(1));
    let uc = u.component(0);
    let vc = u.component(1);
    let at = |i: usize, j: usize| i % nx * ny + j % ny;

    // u at cell centers (i+1/2, j+1/2-line of u), v at centers, u·v at corners
    let mut u_center = vec![0.0; nx * ny];
    let mut v_center = vec![0.0; nx * ny];
    let mut uv_corner = vec![0.0; nx * ny];
    for i in 0..nx {
        for j in 0..ny {
            u_center[at(i, j)] = 0.5 * (uc[at(i, j)] + uc[at(i + 1, j)]);
            v_center[at(i, j)] = 0.5 * (vc[at(i, j)] + vc[at(i, j + 1)]);
            let u_bar = 0.5 * (uc[at(i, j)] + uc[at(i, j + ny - 1)]);
            let v_bar = 0.5 * (vc[at(i, j)] + vc[at(i + nx - 1, j)]);
            uv_corner[at(i, j)] = u_bar * v_bar;
        }
    }
    let mut out = Field::zeros(grid, 2);
    for i in 0..nx {
        for j in 0..ny {
            let duu = (u_center[at(i, j)].powi(2) - u_center[at(i + nx - 1, j)].powi(2)) / hx;
            let duv = (uv_corner[at(i, j + 1)] - uv_corner[at(i, j)]) / hy;
            out.component_mut(0)[at(i, j)] = duu + duv;
            let dvu = (uv_corner[at(i + 1, j)] - uv_corner[at(i, j)]) / hx;
            let dvv = (v_center[at(i, j)].powi(2) - v_center[at(i, j + ny - 1)].powi(2)) / hy;
            out.component_mut(1)[at(i, j)] = dvu + dvv;
        }
    }
    Ok(out)
}
