//! Counterfactual safety margins for driving policies.
//!
//! An episode is re-simulated with the other road users perturbed by a
//! scalar counterfactual of intensity γ. The safety margin is the smallest
//! γ at which the ego's collision probability exceeds ε.

pub mod agents;
pub mod analytics;
pub mod counterfactual;
pub mod error;
pub mod geometry;
pub mod io;
pub mod margin;
pub mod model;
pub mod severity;
pub mod sim;
pub mod suite;
