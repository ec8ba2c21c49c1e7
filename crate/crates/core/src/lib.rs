pub mod crs;
pub mod error;
pub mod experiment;
pub mod geometry;
pub mod lowrank;
pub mod qmc;
pub mod reorder;
pub mod skewnorm;
pub mod sov;
pub mod special;
pub mod tlr;

pub use error::{Error, Result};
