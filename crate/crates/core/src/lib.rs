//! Distributionally robust learning from data with missing entries.
//!
//! Models are fit against entrywise confidence boxes around pairwise moment
//! estimates rather than against imputed data:
//!
//! * [`moments`] estimates first and second moments from jointly available
//!   entries and bootstrap radii around them.
//! * [`regression`] solves the box-relaxed ridge min-max problem by projected
//!   gradient ascent or its accelerated variant.
//! * [`admm`] solves the PSD-constrained version through its dual.
//! * [`inference`] predicts under arbitrary missing patterns and imputes.
//! * [`lda`] trains a robust two-class normal discriminant, optionally with
//!   missing labels.

pub mod admm;
pub mod cli;
pub mod data;
pub mod error;
pub mod inference;
pub mod lda;
pub mod linalg;
pub mod moments;
pub mod regression;
pub mod rng;

pub use data::MaskedMatrix;
pub use error::{Error, Result};
