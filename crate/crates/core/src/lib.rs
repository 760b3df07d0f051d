//! pdeforge: forward generation of PDE-consistent training data and
//! learned solvers for the pressure Poisson equation.
//!
//! Instead of running expensive simulations to collect training data, the
//! generators here synthesize solution fields first (Gaussian random fields
//! with a Matérn covariance, or random-phase mode sums constrained to a
//! target energy spectrum) and then compute the right-hand sides, boundary
//! values and source terms that make each field an exact solution of the
//! discrete equations. The resulting pairs train two solver accelerators:
//!
//! * a Green's-function-style network whose output seeds a BiCGSTAB solve
//!   of the pressure Poisson equation inside a projection-method
//!   Navier-Stokes stepper, and
//! * a multigrid scheme whose smoothing/transfer operators are learned
//!   convolution kernels, optionally with a wavelet-CNN low-frequency
//!   correction on the coarse levels.
//!
//! See the `examples/` directory for runnable entry points covering each
//! capability; the `pdeforge` binary exposes the same tasks as subcommands.

pub mod container;
pub mod error;
pub mod field;
pub mod fieldgen;
pub mod fft;
pub mod grid;
pub mod learned;
pub mod linsolve;
pub mod ops;
pub mod pairgen;
pub mod projection;
pub mod rng;
pub mod spectrum;
pub mod tasks;

pub use error::{Error, Result};
pub use field::Field;
pub use grid::{BcKind, BoundarySpec, FaceRule, Grid};
