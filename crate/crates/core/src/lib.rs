//! Equivariant direct Hessian prediction and the second-order workflows
//! that consume it.

// `!(x > 0.0)` style guards are used on purpose so that NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// tabulated coupling coefficients are kept at full printed precision
#![allow(clippy::excessive_precision)]
#![allow(clippy::too_many_arguments, clippy::type_complexity, clippy::needless_range_loop)]

mod error;
pub mod irc;
pub mod irreps;
pub mod model;
pub mod molecule;
pub mod optim;
pub mod oracles;
pub mod potential;
pub mod training;
pub mod units;
pub mod vib;

pub use error::Error;
