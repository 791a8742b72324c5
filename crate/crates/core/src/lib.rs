pub mod cnn;
pub mod error;
pub mod eval;
pub mod field;
pub mod geom;
pub mod phantom;
pub mod swd;
pub mod tof;
pub mod wavesim;

pub use error::{Error, Result};
