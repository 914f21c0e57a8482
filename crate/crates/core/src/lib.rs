//! Optimal, sparse and diverse counterfactual explanations for scorecard
//! models, built as mixed-integer programs and solved with a bundled
//! branch-and-bound solver.

pub mod bench;
pub mod diversity;
pub mod engine;
pub mod error;
pub mod formulation;
pub mod milp;
pub mod multiobjective;
pub mod oracle;
pub mod query;
pub mod scorecard;
pub mod stats;
pub mod synthetic;

pub use error::{Error, Result};
