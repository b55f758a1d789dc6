//! Statistical millimeter-wave channel simulator and cellular capacity
//! evaluator.
//!
//! The crate is organized bottom-up: [`params`] holds per-band parameter
//! sets, [`channel`] draws large-scale link realizations from them,
//! [`mimo`] expands a realization into subpaths, channel matrices, and
//! spatial covariances, [`estimation`] inverts the generative model from
//! measurement-style data, and [`netsim`] ties everything together into a
//! multi-cell capacity study.

pub mod analysis;
pub mod channel;
pub mod error;
pub mod estimation;
pub mod io;
pub mod mimo;
pub mod netsim;
pub mod params;

pub use error::{Error, Result};
