//! Two-weight estimates for martingale paraproducts on finite trees.
//!
//! A finite uniform-arity tree carries two measures `μ` and `ν` given by leaf
//! masses. The crate evaluates paraproduct-type operators, their Sawyer-type
//! testing constants, lower bounds for operator norms, the stopping-time
//! decompositions behind the sufficiency argument, and the explicit
//! counterexample family for `p > 2`.

pub mod counterexample;
pub mod error;
pub mod instance;
pub mod lattice;
pub mod martingale;
pub mod measure;
pub mod normest;
pub mod paraproduct;
pub mod report;
pub mod stopping;
pub mod suite;
pub mod testing;

pub use error::{Error, Result};
pub use lattice::{AtomId, Lattice};
pub use measure::{conjugate, Exponents, LeafFunction, Measure};
