//! Uniform rectangular grids and boundary descriptors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Boundary kind of one grid axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BcKind {
    Periodic,
    Dirichlet,
    Neumann,
}

/// Uniform rectangular grid in 2 or 3 dimensions.
///
/// Samples along an axis of `n` points sit at `x_i = i * h` with
/// `h = length / n`; on a periodic axis `x = length` wraps back to `x = 0`.
/// Staggered (MAC) sample roles are a property of the operators, not of the
/// grid: cell centers sit at `(i + 1/2) h`, axis-`a` faces at `i * h` along
/// `a` and at centers along the other axes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    dim: usize,
    n: [usize; 3],
    length: [f64; 3],
    bc: [BcKind; 3],
}

impl Grid {
    pub fn new(n: &[usize], length: &[f64], bc: &[BcKind]) -> Result<Grid> {
        let dim = n.len();
        if dim != 2 && dim != 3 {
            return Err(Error::Usage(format!("grid dimension must be 2 or 3, got {dim}")));
        }
        if length.len() != dim || bc.len() != dim {
            return Err(Error::Usage("grid axis descriptors must have matching lengths".into()));
        }
        let mut gn = [1usize; 3];
        let mut gl = [1.0f64; 3];
        let mut gb = [BcKind::Periodic; 3];
        for a in 0..dim {
            if n[a] == 0 {
                return Err(Error::Usage("grid must have at least one point per axis".into()));
            }
            if !(length[a] > 0.0) {
                return Err(Error::Usage("grid length must be positive".into()));
            }
            gn[a] = n[a];
            gl[a] = length[a];
            gb[a] = bc[a];
        }
        Ok(Grid { dim, n: gn, length: gl, bc: gb })
    }

    /// All-periodic grid over a box of side 2π per axis.
    pub fn periodic(n: &[usize]) -> Grid {
        let dim = n.len();
        let tau = std::f64::consts::TAU;
        Grid::new(n, &vec![tau; dim], &vec![BcKind::Periodic; dim]).expect("valid periodic grid")
    }

    /// Square/cubic all-periodic grid with `n` points per axis.
    pub fn periodic_square(dim: usize, n: usize) -> Grid {
        Grid::periodic(&vec![n; dim])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n(&self, axis: usize) -> usize {
        self.n[axis]
    }

    pub fn shape(&self) -> &[usize] {
        &self.n[..self.dim]
    }

    pub fn length(&self, axis: usize) -> f64 {
        self.length[axis]
    }

    pub fn bc(&self, axis: usize) -> BcKind {
        self.bc[axis]
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        self.length[axis] / self.n[axis] as f64
    }

    pub fn all_periodic(&self) -> bool {
        (0..self.dim).all(|a| self.bc[a] == BcKind::Periodic)
    }

    /// Total number of lattice points.
    pub fn points(&self) -> usize {
        self.n[..self.dim].iter().product()
    }

    /// Row-major strides (last axis fastest).
    pub fn strides(&self) -> [usize; 3] {
        match self.dim {
            2 => [self.n[1], 1, 0],
            _ => [self.n[1] * self.n[2], self.n[2], 1],
        }
    }

    pub fn flat(&self, idx: &[usize]) -> usize {
        let s = self.strides();
        idx.iter().zip(s.iter()).map(|(i, st)| i * st).sum()
    }

    /// Number of samples on a face orthogonal to `axis`.
    pub fn face_points(&self, axis: usize) -> usize {
        self.points() / self.n[axis]
    }

    /// Grid with every axis halved (periodic multigrid coarsening).
    pub fn coarsen(&self) -> Result<Grid> {
        let mut n = self.n;
        for a in 0..self.dim {
            if self.n[a] % 2 != 0 {
                return Err(Error::Usage(format!("axis {a} of size {} is not coarsenable", self.n[a])));
            }
            n[a] = self.n[a] / 2;
        }
        Ok(Grid { dim: self.dim, n, length: self.length, bc: self.bc })
    }

    /// Physical coordinate of a lattice point (node convention `x = i h`).
    pub fn coord(&self, idx: &[usize]) -> [f64; 3] {
        let mut x = [0.0; 3];
        for a in 0..self.dim {
            x[a] = idx[a] as f64 * self.spacing(a);
        }
        x
    }
}

/// Boundary condition of one grid face.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FaceRule {
    Periodic,
    /// Sample values on the face (row-major over the other axes).
    Dirichlet(Vec<f64>),
    /// Outward-normal derivative on the face (row-major over the other axes).
    Neumann(Vec<f64>),
}

impl FaceRule {
    fn kind(&self) -> BcKind {
        match self {
            FaceRule::Periodic => BcKind::Periodic,
            FaceRule::Dirichlet(_) => BcKind::Dirichlet,
            FaceRule::Neumann(_) => BcKind::Neumann,
        }
    }
}

/// Per-face boundary data: `faces[axis][side]` with side 0 = low, 1 = high.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundarySpec {
    faces: Vec<[FaceRule; 2]>,
}

impl BoundarySpec {
    pub fn new(faces: Vec<[FaceRule; 2]>) -> BoundarySpec {
        BoundarySpec { faces }
    }

    pub fn all_periodic(dim: usize) -> BoundarySpec {
        BoundarySpec { faces: vec![[FaceRule::Periodic, FaceRule::Periodic]; dim] }
    }

    /// Constant Dirichlet value on every face.
    pub fn dirichlet_const(grid: &Grid, value: f64) -> BoundarySpec {
        let faces = (0..grid.dim())
            .map(|a| {
                let data = vec![value; grid.face_points(a)];
                [FaceRule::Dirichlet(data.clone()), FaceRule::Dirichlet(data)]
            })
            .collect();
        BoundarySpec { faces }
    }

    /// Constant outward-normal derivative on every face.
    pub fn neumann_const(grid: &Grid, slope: f64) -> BoundarySpec {
        let faces = (0..grid.dim())
            .map(|a| {
                let data = vec![slope; grid.face_points(a)];
                [FaceRule::Neumann(data.clone()), FaceRule::Neumann(data)]
            })
            .collect();
        BoundarySpec { faces }
    }

    pub fn face(&self, axis: usize, side: usize) -> &FaceRule {
        &self.faces[axis][side]
    }

    pub fn dim(&self) -> usize {
        self.faces.len()
    }

    /// Validate against a grid: kinds must match per axis, periodic faces come
    /// in opposing pairs, face data must be shaped to the face.
    pub fn check(&self, grid: &Grid) -> Result<()> {
        if self.faces.len() != grid.dim() {
            return Err(Error::Shape(format!(
                "boundary spec has {} axes, grid has {}",
                self.faces.len(),
                grid.dim()
            )));
        }
        for a in 0..grid.dim() {
            let [lo, hi] = &self.faces[a];
            let periodic_pair = lo.kind() == BcKind::Periodic && hi.kind() == BcKind::Periodic;
            match grid.bc(a) {
                BcKind::Periodic => {
                    if !periodic_pair {
                        return Err(Error::Usage(format!(
                            "non-periodic face rule on periodic axis {a}"
                        )));
                    }
                }
                _ => {
                    if lo.kind() == BcKind::Periodic || hi.kind() == BcKind::Periodic {
                        return Err(Error::Usage(format!(
                            "periodic face rule on non-periodic axis {a}"
                        )));
                    }
                }
            }
            for rule in [lo, hi] {
                let want = grid.face_points(a);
                match rule {
                    FaceRule::Dirichlet(v) | FaceRule::Neumann(v) => {
                        if v.len() != want {
                            return Err(Error::Shape(format!(
                                "face data on axis {a} has {} samples, expected {want}",
                                v.len()
                            )));
                        }
                    }
                    FaceRule::Periodic => {}
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spacing_follows_length_over_n() {
        let g = Grid::periodic(&[8, 16]);
        assert!((g.spacing(0) - std::f64::consts::TAU / 8.0).abs() < 1e-15);
        assert!((g.spacing(1) - std::f64::consts::TAU / 16.0).abs() < 1e-15);
        assert_eq!(g.points(), 128);
    }

    #[test]
    fn flat_index_is_row_major() {
        let g = Grid::periodic(&[4, 4, 4]);
        assert_eq!(g.flat(&[1, 2, 3]), 16 + 8 + 3);
        let g2 = Grid::periodic(&[4, 8]);
        assert_eq!(g2.flat(&[3, 5]), 29);
    }

    #[test]
    fn rejects_bad_dims() {
        assert!(Grid::new(&[8], &[1.0], &[BcKind::Periodic]).is_err());
        assert!(Grid::new(&[8, 0], &[1.0, 1.0], &[BcKind::Periodic, BcKind::Periodic]).is_err());
    }

    #[test]
    fn boundary_spec_checks_shapes() {
        let g = Grid::new(
            &[8, 8],
            &[1.0, 1.0],
            &[BcKind::Dirichlet, BcKind::Periodic],
        )
        .unwrap();
        let mut faces = vec![
            [FaceRule::Dirichlet(vec![0.0; 8]), FaceRule::Dirichlet(vec![0.0; 8])],
            [FaceRule::Periodic, FaceRule::Periodic],
        ];
        assert!(BoundarySpec::new(faces.clone()).check(&g).is_ok());
        faces[0][0] = FaceRule::Dirichlet(vec![0.0; 7]);
        assert!(BoundarySpec::new(faces.clone()).check(&g).is_err());
        // Neumann on a periodic axis is rejected.
        faces[0][0] = FaceRule::Dirichlet(vec![0.0; 8]);
        faces[1][0] = FaceRule::Neumann(vec![0.0; 8]);
        assert!(BoundarySpec::new(faces).check(&g).is_err());
    }
}
