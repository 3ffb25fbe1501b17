//! Group-shared-exponent storage for sparse FP64 matrices.
//!
//! Each non-zero is stored as a 64-bit sign plus denormalized significand
//! word relative to one of a few shared exponents, split into a 16-bit head,
//! a 16-bit first tail and a 32-bit second tail. SpMV can read one, two or
//! all three segments, and the Krylov solvers in [`solvers`] start at the
//! cheapest level and escalate when the residual stops improving.

pub mod analysis;
pub mod fpcodec;
pub mod gallery;
pub mod halfprec;
pub mod solvers;
pub mod sparse;
pub mod spmv;

pub use fpcodec::{PrecisionLevel, SharedExponentTable};
pub use sparse::{CsrMatrixF64, GseCsrMatrix};
pub use spmv::{Execution, LinearOperator};
