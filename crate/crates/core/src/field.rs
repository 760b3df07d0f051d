//! Sample arrays over a grid, boundary application and smoothing.

use crate::error::{Error, Result};
use crate::grid::{BcKind, BoundarySpec, FaceRule, Grid};

/// Scalar or vector samples over a [`Grid`].
///
/// Data is stored one component block after another, each block row-major
/// over the grid axes. Vector fields carry `dim` components; on staggered
/// operators component `c` is interpreted as living on axis-`c` faces.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: Grid,
    components: usize,
    data: Vec<f64>,
}

impl Field {
    pub fn zeros(grid: &Grid, components: usize) -> Field {
        Field { grid: grid.clone(), components, data: vec![0.0; components * grid.points()] }
    }

    pub fn constant(grid: &Grid, components: usize, value: f64) -> Field {
        Field { grid: grid.clone(), components, data: vec![value; components * grid.points()] }
    }

    pub fn from_data(grid: &Grid, components: usize, data: Vec<f64>) -> Result<Field> {
        if data.len() != components * grid.points() {
            return Err(Error::Shape(format!(
                "field data has {} entries, expected {}",
                data.len(),
                components * grid.points()
            )));
        }
        Ok(Field { grid: grid.clone(), components, data })
    }

    /// Scalar field sampled at node coordinates `x_i = i h`.
    pub fn scalar_from_fn(grid: &Grid, f: impl Fn(&[f64; 3]) -> f64) -> Field {
        let mut out = Field::zeros(grid, 1);
        let mut idx = [0usize; 3];
        for flat in 0..grid.points() {
            grid.unflatten(flat, &mut idx);
            out.data[flat] = f(&grid.coord(&idx[..grid.dim()]));
        }
        out
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn is_scalar(&self) -> bool {
        self.components == 1
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn component(&self, c: usize) -> &[f64] {
        let n = self.grid.points();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn component_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.grid.points();
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn at(&self, c: usize, idx: &[usize]) -> f64 {
        self.data[c * self.grid.points() + self.grid.flat(idx)]
    }

    pub fn set(&mut self, c: usize, idx: &[usize], v: f64) {
        let i = c * self.grid.points() + self.grid.flat(idx);
        self.data[i] = v;
    }

    pub fn check_finite(&self) -> Result<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::Numerical("field contains NaN or Inf".into()))
        }
    }

    pub fn norm_l2(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &Field) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Subtract the mean of each component.
    pub fn sub_mean(&mut self) {
        let n = self.grid.points();
        for c in 0..self.components {
            let block = &mut self.data[c * n..(c + 1) * n];
            let m = block.iter().sum::<f64>() / n as f64;
            for v in block {
                *v -= m;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    /// self += a * other
    pub fn axpy(&mut self, a: f64, other: &Field) {
        for (x, y) in self.data.iter_mut().zip(&other.data) {
            *x += a * y;
        }
    }

    pub fn same_layout(&self, other: &Field) -> bool {
        self.grid == other.grid && self.components == other.components
    }
}

impl Grid {
    /// Inverse of [`Grid::flat`]; fills `idx[..dim]`.
    pub fn unflatten(&self, flat: usize, idx: &mut [usize; 3]) {
        let mut rem = flat;
        if self.dim() == 2 {
            idx[0] = rem / self.n(1);
            idx[1] = rem % self.n(1);
        } else {
            let s0 = self.n(1) * self.n(2);
            idx[0] = rem / s0;
            rem %= s0;
            idx[1] = rem / self.n(2);
            idx[2] = rem % self.n(2);
        }
    }
}

/// Visit every lattice point on the plane `idx[axis] == plane`, passing
/// `(face_flat, full_flat)` where `face_flat` is row-major over the
/// remaining axes in ascending order.
fn for_face(grid: &Grid, axis: usize, plane: usize, mut f: impl FnMut(usize, usize)) {
    let dims: Vec<usize> = (0..grid.dim()).filter(|&a| a != axis).collect();
    let strides = grid.strides();
    let base = plane * strides[axis];
    match dims.len() {
        1 => {
            for i in 0..grid.n(dims[0]) {
                f(i, base + i * strides[dims[0]]);
            }
        }
        _ => {
            let (a0, a1) = (dims[0], dims[1]);
            for i in 0..grid.n(a0) {
                for j in 0..grid.n(a1) {
                    f(i * grid.n(a1) + j, base + i * strides[a0] + j * strides[a1]);
                }
            }
        }
    }
}

/// Impose boundary data on a field.
///
/// Periodic axes need no work (the lattice stores one period). Dirichlet
/// face samples are overwritten with the face values. Neumann face samples
/// act as a ghost layer half a cell outside the wall: `ghost = inner + h·g`
/// with `g` the prescribed outward-normal derivative. The interior is left
/// untouched, so applying twice equals applying once.
pub fn apply_boundary(f: &Field, bc: &BoundarySpec) -> Result<Field> {
    let mut out = f.clone();
    apply_boundary_in_place(&mut out, bc)?;
    Ok(out)
}

pub fn apply_boundary_in_place(f: &mut Field, bc: &BoundarySpec) -> Result<()> {
    let grid = f.grid().clone();
    bc.check(&grid)?;
    if !grid.all_periodic() && !f.is_scalar() {
        return Err(Error::Shape(
            "boundary data on non-periodic axes is supported for scalar fields only".into(),
        ));
    }
    for axis in 0..grid.dim() {
        if grid.bc(axis) == BcKind::Periodic {
            continue;
        }
        let n = grid.n(axis);
        let h = grid.spacing(axis);
        for side in 0..2 {
            let plane = if side == 0 { 0 } else { n - 1 };
            let inner = if side == 0 { 1 } else { n - 2 };
            match bc.face(axis, side) {
                FaceRule::Periodic => unreachable!("check() rejects mixed kinds"),
                FaceRule::Dirichlet(values) => {
                    let data = f.data_mut();
                    for_face(&grid, axis, plane, |face_flat, full_flat| {
                        data[full_flat] = values[face_flat];
                    });
                }
                FaceRule::Neumann(slopes) => {
                    if n < 2 {
                        return Err(Error::Shape("Neumann axis needs at least 2 samples".into()));
                    }
                    let stride = grid.strides()[axis];
                    let shift = inner as isize - plane as isize;
                    let data = f.data_mut();
                    for_face(&grid, axis, plane, |face_flat, full_flat| {
                        let inner_flat = (full_flat as isize + shift * stride as isize) as usize;
                        data[full_flat] = data[inner_flat] + h * slopes[face_flat];
                    });
                }
            }
        }
    }
    Ok(())
}

/// Iterated nearest-neighbor smoothing that leaves boundary-constrained
/// samples untouched.
///
/// Each pass replaces every interior sample by `1/2` of itself plus
/// `1/(4 dim)` of each of its `2 dim` axis neighbors, then re-imposes the
/// boundary data. Constants are preserved exactly.
pub fn smooth_preserving_boundary(f: &Field, bc: &BoundarySpec, iters: usize) -> Result<Field> {
    let grid = f.grid().clone();
    bc.check(&grid)?;
    let mut cur = f.clone();
    if iters == 0 {
        return Ok(cur);
    }
    let dim = grid.dim();
    let strides = grid.strides();
    let npts = grid.points();
    let neighbor_w = 0.5 / (2.0 * dim as f64);
    let mut next = cur.clone();
    let mut idx = [0usize; 3];
    for _ in 0..iters {
        for c in 0..cur.components() {
            for flat in 0..npts {
                grid.unflatten(flat, &mut idx);
                let constrained = (0..dim).any(|a| {
                    grid.bc(a) != BcKind::Periodic && (idx[a] == 0 || idx[a] == grid.n(a) - 1)
                });
                if constrained {
                    continue;
                }
                let src = cur.component(c);
                let mut acc = 0.5 * src[flat];
                for a in 0..dim {
                    let n = grid.n(a);
                    let lo = if idx[a] == 0 { flat + (n - 1) * strides[a] } else { flat - strides[a] };
                    let hi = if idx[a] == n - 1 { flat - (n - 1) * strides[a] } else { flat + strides[a] };
                    acc += neighbor_w * (src[lo] + src[hi]);
                }
                next.component_mut(c)[flat] = acc;
            }
        }
        apply_boundary_in_place(&mut next, bc)?;
        std::mem::swap(&mut cur, &mut next);
        next.data_mut().copy_from_slice(cur.data());
    }
    Ok(cur)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::BcKind;

    fn dirichlet_grid(n: usize) -> Grid {
        Grid::new(&[n, n], &[1.0, 1.0], &[BcKind::Dirichlet, BcKind::Dirichlet]).unwrap()
    }

    #[test]
    fn periodic_boundary_is_identity() {
        let g = Grid::periodic(&[8, 8]);
        let f = Field::scalar_from_fn(&g, |x| (x[0] + 2.0 * x[1]).sin());
        let bc = BoundarySpec::all_periodic(2);
        let out = apply_boundary(&f, &bc).unwrap();
        assert_eq!(out.data(), f.data());
        // periodic extension: f(x = L) is the same sample as f(x = 0)
        for j in 0..8 {
            assert_eq!(out.at(0, &[0, j]), f.at(0, &[0, j]));
        }
    }

    #[test]
    fn dirichlet_zero_on_constant_field() {
        let g = dirichlet_grid(6);
        let f = Field::constant(&g, 1, 1.0);
        let bc = BoundarySpec::dirichlet_const(&g, 0.0);
        let out = apply_boundary(&f, &bc).unwrap();
        let mut idx = [0usize; 3];
        for flat in 0..g.points() {
            g.unflatten(flat, &mut idx);
            let boundary = idx[0] == 0 || idx[0] == 5 || idx[1] == 0 || idx[1] == 5;
            assert_eq!(out.data()[flat], if boundary { 0.0 } else { 1.0 });
        }
    }

    #[test]
    fn neumann_ghost_rule() {
        // ghost = inner + h * slope, with h = 0.5 and slope 3 on a field of 2s
        let g = Grid::new(&[4, 4], &[2.0, 2.0], &[BcKind::Neumann, BcKind::Neumann]).unwrap();
        assert_eq!(g.spacing(0), 0.5);
        let f = Field::constant(&g, 1, 2.0);
        let bc = BoundarySpec::neumann_const(&g, 3.0);
        let out = apply_boundary(&f, &bc).unwrap();
        assert_eq!(out.at(0, &[0, 1]), 2.0 + 0.5 * 3.0);
        assert_eq!(out.at(0, &[3, 2]), 3.5);
        // corners get written by the later axis but stay consistent: the
        // axis-1 rule reads the (already ghosted) inner sample
        assert_eq!(out.at(0, &[2, 0]), 3.5);
    }

    #[test]
    fn apply_boundary_is_idempotent() {
        let g = dirichlet_grid(8);
        let f = Field::scalar_from_fn(&g, |x| (3.0 * x[0]).cos() * (2.0 * x[1]).sin() + 0.3);
        let bc = BoundarySpec::dirichlet_const(&g, 0.7);
        let once = apply_boundary(&f, &bc).unwrap();
        let twice = apply_boundary(&once, &bc).unwrap();
        assert_eq!(once.data(), twice.data());

        let gn = Grid::new(&[8, 8], &[1.0, 1.0], &[BcKind::Neumann, BcKind::Neumann]).unwrap();
        let bcn = BoundarySpec::neumann_const(&gn, -1.25);
        let once = apply_boundary(&f, &bcn).unwrap();
        let _ = gn;
        let twice = apply_boundary(&once, &bcn).unwrap();
        assert_eq!(once.data(), twice.data());
    }

    #[test]
    fn smoothing_zero_iters_is_identity() {
        let g = dirichlet_grid(8);
        let f = Field::scalar_from_fn(&g, |x| x[0] * x[1]);
        let bc = BoundarySpec::dirichlet_const(&g, 0.0);
        let out = smooth_preserving_boundary(&f, &bc, 0).unwrap();
        assert_eq!(out.data(), f.data());
    }

    #[test]
    fn smoothing_preserves_constants() {
        let g = Grid::periodic(&[8, 8]);
        let f = Field::constant(&g, 1, 4.25);
        let bc = BoundarySpec::all_periodic(2);
        let out = smooth_preserving_boundary(&f, &bc, 5).unwrap();
        for v in out.data() {
            assert!((v - 4.25).abs() < 1e-15);
        }
    }

    #[test]
    fn smoothing_matches_brute_force_stencil() {
        // unit spike on a periodic 8x8 grid, one iteration, against a direct
        // stencil evaluation
        let g = Grid::periodic(&[8, 8]);
        let mut f = Field::zeros(&g, 1);
        f.set(0, &[3, 5], 1.0);
        let bc = BoundarySpec::all_periodic(2);
        let out = smooth_preserving_boundary(&f, &bc, 1).unwrap();

        let mut expect = vec![0.0; 64];
        for i in 0..8usize {
            for j in 0..8usize {
                let c = f.at(0, &[i, j]);
                let nb = f.at(0, &[(i + 7) % 8, j])
                    + f.at(0, &[(i + 1) % 8, j])
                    + f.at(0, &[i, (j + 7) % 8])
                    + f.at(0, &[i, (j + 1) % 8]);
                expect[i * 8 + j] = 0.5 * c + nb / 8.0;
            }
        }
        assert_eq!(out.at(0, &[3, 5]), 0.5);
        for (a, b) in out.data().iter().zip(&expect) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn smoothing_keeps_dirichlet_samples_bit_identical() {
        let g = dirichlet_grid(8);
        let f = Field::scalar_from_fn(&g, |x| (5.0 * x[0]).sin() + x[1]);
        let bc = BoundarySpec::dirichlet_const(&g, 0.125);
        let out = smooth_preserving_boundary(&f, &bc, 3).unwrap();
        let mut idx = [0usize; 3];
        for flat in 0..g.points() {
            g.unflatten(flat, &mut idx);
            if idx[0] == 0 || idx[0] == 7 || idx[1] == 0 || idx[1] == 7 {
                assert_eq!(out.data()[flat], 0.125);
            }
        }
    }
}
