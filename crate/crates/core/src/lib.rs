//! Linear models whose weights (or samples) are grouped into a few clusters:
//! projected gradient and conditional gradient solvers, the projections they
//! rely on, baselines and experiment tooling.

pub mod baselines;
pub mod cg;
pub mod clustering;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod losses;
pub mod model;
pub mod pgd;
pub mod projections;
pub mod theory;

pub use error::{Error, Result};
