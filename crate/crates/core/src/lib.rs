//! Fixed-stepsize SGD, block Kaczmarz, continual regression and POCS, with
//! closed-form last-iterate bounds and numerical certificates for them.

// `!(x > 0.0)` style guards are used on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod certify;
pub mod continual;
pub mod harness;
pub mod kaczmarz;
pub mod linalg;
pub mod optimizer;
pub mod problems;
