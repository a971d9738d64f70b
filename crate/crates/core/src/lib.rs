//! Radau IIA simulation, discrete adjoints and reduced gradients for optimal
//! control of hybrid systems with sliding modes.

mod linalg;

pub mod adjoint;
pub mod gradient;
pub mod integrator;
pub mod model;
pub mod optimizer;
pub mod problems;
pub mod qp;
pub mod tableau;
pub mod verify;

pub use model::{
    ControlGrid, ExitKind, Field, Functional, FunctionalId, HybridDynamics, HybridOcp, Matrix, Mode,
    ModelError, Region, SlidingTolerances, TransitionKind, Vector,
};
pub use tableau::{ButcherTableau, TableauError};
