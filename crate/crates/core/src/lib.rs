//! Numerical Kähler geometry on flat tori and toric manifolds.

pub mod expr;
pub mod field_core;
pub mod flow;
pub mod geometry;
pub mod jet;
pub mod moment_map;
pub mod operators;

pub use expr::{Expr, ExprError};
pub use jet::{Jet, JetSpace};
