// `!(x > 0.0)` style guards reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod coincidence;
pub mod config;
pub mod event;
pub mod fit;
pub mod io;
pub mod optics;
pub mod pipeline;
pub mod reconstruction;
pub mod rng;
pub mod source;
