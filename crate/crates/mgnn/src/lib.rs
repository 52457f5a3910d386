//! Spectral graph-learning lab.
//!
//! The crate builds Gaussian-kernel geometric graphs from embedding vectors,
//! trains polynomial-filter graph neural networks on anchored neighborhood
//! graphs, evaluates manifold neural networks on analytically known manifolds
//! (circle, sphere, flat torus), and ships two experiment harnesses: a
//! generalization-gap sweep over graph sizes and a graph-to-manifold network
//! convergence study.
//!
//! Modules:
//! - [`graph`] — graphs, signals, kernel construction, shift operators;
//! - [`spectral`] — eigendecomposition, polynomial and heat-kernel filters;
//! - [`manifold`] — closed-form manifold eigenpairs, sampling, bandlimited
//!   signals, manifold network evaluation;
//! - [`nn`] — network parameters, forward/backward, losses, training;
//! - [`risk`] — risk estimators and the two experiments;
//! - [`data`] — dataset ingestion/synthesis and serialization.

pub mod data;
pub mod error;
pub mod graph;
pub mod manifold;
pub mod nn;
pub mod risk;
pub mod spectral;

pub use error::{Error, Result};
