//! Discrete MDP models, solvers, decision-tree surrogates of trained
//! policies and the explanation queries answered from them.

pub mod artifacts;
pub mod domains;
pub mod error;
pub mod explainer;
pub mod mdp;
pub mod service;
pub mod solvers;
pub mod tree;

pub use error::{Error, Result};
pub use explainer::{Explainer, Explanation};
pub use mdp::{ActionSpec, DomainModel, FeatureSpec, FeatureVector, Mdp, StateRecord, Transition};
pub use solvers::TrainedPolicy;
pub use tree::{fit_tree, Rule, SurrogateTree};
