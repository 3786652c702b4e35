//! Mixed-integer quadratic programming by depth-first branch and bound over
//! QP relaxations, each solved by an accelerated dual gradient projection.

pub mod bnb;
pub mod cli;
pub mod dual;
pub mod error;
pub mod gpad;
pub mod heuristics;
pub mod io;
pub mod oracle;
pub mod problem;
pub mod problems;
pub mod warmstart;

pub use error::{Error, Result};
