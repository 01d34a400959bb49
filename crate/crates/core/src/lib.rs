//! Reflect–Reflect–Relax (RRR) iteration, its small-step flow limit, and the
//! machinery used to check claims about both.

pub mod catalog;
pub mod criteria;
pub mod error;
pub mod flow;
pub mod ledm;
pub mod linearize;
pub mod meso;
pub mod sets;
pub mod wdomains;

pub use error::{Error, Result};
pub use flow::{FlowProblem, Trajectory};
pub use sets::{Point, SetOracle};
