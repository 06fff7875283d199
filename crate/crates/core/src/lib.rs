//! Incremental matrix exponentials for nested block upper triangular
//! matrices, and the polynomial-diffusion moment machinery that produces
//! such sequences.
//!
//! The central type is [`incremental::IncrementalExp`]: feed it one block
//! column at a time and it returns `exp(G_n)` after each append, reusing the
//! cached Padé numerator and denominator, the LU factors of their diagonal
//! blocks and all intermediate squares, so that no step costs `O(d^3)`.

// `!(x > 0.0)` rejects NaN on purpose; index loops mirror the math.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod bench;
pub mod block;
pub mod dense;
pub mod error;
pub mod generators;
pub mod incremental;
pub mod pade;
pub mod pricing;
pub mod quadrature;

pub use block::{BlockColumn, BlockTriangularMatrix, Partition};
pub use dense::{lu_factor, lu_solve, matmul, one_norm, rel_error_frobenius, DenseMatrix, LuFactors};
pub use error::{Error, Result};
pub use incremental::{run, run_adaptive, run_fixed, IncrementalExp, IncrementalExpState, Scaling, StepReport};
pub use pade::{
    expm, expm_baseline, expm_with_scaling, pade_coefficients, select_scaling, PadeCoefficients, ScalingChoice,
};
