// `!(a < b)` rejects NaN along with the ordered failure.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod compare;
pub mod dynamics;
pub mod error;
pub mod features;
pub mod io;
pub mod learner;
pub mod optim;
pub mod plot;
pub mod quadrature;
pub mod scenario;
pub mod smpc;
pub mod spline;

pub use error::{Error, Result};
