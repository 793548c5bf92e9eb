//! Flip-it security games with behavioral attacker models: exact rules engine,
//! quantal-response and level-k hierarchies, a distributional Q-learner with
//! subjective rewards, exact evaluation and best-response solvers, maximum
//! likelihood fitting against play data, and a population-based game designer.

pub mod error;
pub mod fitting;
pub mod game;
pub mod generator;
mod induction;
pub mod models;
pub mod optim;
pub mod policy;
pub mod solvers;
pub mod srdq;

pub use error::{Error, Result};
