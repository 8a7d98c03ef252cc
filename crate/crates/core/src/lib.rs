pub mod bench;
pub mod cmdp;
pub mod divergence;
pub mod domains;
pub mod error;
pub mod explain;
pub mod lp;
pub mod mdp;
pub mod outcome;
pub mod predicate;
pub mod region;
pub mod rules;

pub use error::{Error, Result};
