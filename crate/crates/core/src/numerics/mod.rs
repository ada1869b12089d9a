//! Dense reverse-mode differentiation, AdamW, and a finite-difference oracle.

pub mod adamw;
pub mod gradcheck;
pub mod tape;

pub use adamw::{AdamWConfig, AdamWState};
pub use gradcheck::{finite_difference_check, GradCheckReport, Objective};
pub use tape::{Gradients, SoftmaxAxis, Tape, Var};
