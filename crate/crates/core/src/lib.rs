pub mod cli;
pub mod control;
pub mod dsa;
pub mod error;
pub mod gmsa;
pub mod numeric;
pub mod operators;
pub mod sets;
pub mod solver;
pub mod superiorize;

pub use error::{Error, Result};
pub use numeric::{Tolerance, Vector};
