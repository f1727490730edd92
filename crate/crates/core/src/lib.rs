//! Adversarial graph contrastive learning with a feature-similarity
//! preserving view.
//!
//! The crate covers graph storage and view generation ([`graph`]), a small
//! reverse-mode differentiation engine ([`autodiff`]), the GCN encoder and
//! optimizer ([`model`]), the contrastive objective ([`contrastive`]),
//! gradient-driven adversarial views ([`adversarial`]), the training loop
//! ([`training`]), downstream evaluation ([`eval`]), attack diagnostics
//! ([`diagnostics`]) and the bundle-to-report experiment protocols behind the
//! command-line tool ([`experiment`]).

pub mod adversarial;
pub mod autodiff;
pub mod contrastive;
pub mod dense;
pub mod diagnostics;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod graph;
pub mod model;
pub mod rng;
pub mod sparse;
pub mod synthetic;
pub mod training;

pub use dense::DenseMat;
pub use error::{Error, Result};
pub use graph::{Adjacency, Provenance, SparseGraph, Split, View};
pub use sparse::CsrMatrix;
