//! Curvature invariants of closed-form metrics.
//!
//! The crate evaluates metric components given as expressions, differentiates
//! them with second-order jets, builds the Riemann tensor, and contracts it
//! into the Pfaffian densities `P_k` and the Lovelock tensors `S_{2,k}`. On top
//! of that sit tensor-product quadrature over compact catalog manifolds and
//! finite-difference variational checks.

pub mod error;
pub mod expr;
pub mod geometry;
pub mod invariants;
pub mod jet;
pub mod oracle;
pub mod quad;
pub mod tensor;
pub mod variational;

pub use error::{Error, Result};
