//! Differentiable kernels and the learned Poisson solvers: the
//! Green's-function-style network that seeds Krylov iteration and the
//! learned-multigrid family with optional wavelet-CNN corrections.

pub mod hierarchy;
pub mod nets;
pub mod params;
pub mod solvers;
pub mod tape;
pub mod train;

pub use hierarchy::{HierarchyCfg, LearnedHierarchy, MgVariant};
pub use nets::{FourierNetCfg, PoissonNn};
pub use params::ParamStore;
pub use solvers::{LearnedMgPpe, NnInitBicgstab};
pub use tape::{Anchor, Nonlin, Tape, Tensor, Var};
pub use train::{train_hierarchy, train_poisson_nn, TrainConfig};
