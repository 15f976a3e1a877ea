//! Matrix-free Chambolle-Pock primal-dual solvers with scalar, diagonal and
//! low-rank step preconditioners, plus a 2D fan-beam CT harness.

// `!(x > 0.0)` guards reject NaN on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod ct;
pub mod error;
pub mod io;
pub mod linop;
pub mod phantom;
pub mod prox;
pub mod solver;
pub mod spectral;
pub mod toy;
pub mod vecops;

pub use error::{Error, Result};
pub use linop::{LinearMap, MapRef};
