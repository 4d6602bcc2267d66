pub mod acceptance;
pub mod classical;
pub mod error;
pub mod field;
pub mod grid;
pub mod intensity;
pub mod iteration;
pub mod model;
pub mod pde;
pub mod policy;
pub mod rl;
pub mod sim;
pub mod tridiag;

pub use error::{Error, Result};
