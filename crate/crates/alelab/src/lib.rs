//! Numerical laboratory for the Ricci-de Turck flow on cohomogeneity-one ALE metrics.
//!
//! Metrics are diagonal Bianchi IX metrics on `(0, r_max] × S³/Z₂` sampled on a radial grid.
//! The Eguchi-Hanson family is the Ricci-flat background; symmetric 2-tensors are diagonal
//! and stored by their components in the orthonormal frame of a reference metric.

pub mod cli;
pub mod error;
pub mod flow;
pub mod gauge;
pub mod geometry;
pub mod grid;
pub mod norms;
pub mod operators;
pub mod psc;
pub mod rates;

pub use error::{Error, Result};
