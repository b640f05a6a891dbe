pub mod certify;
pub mod conic;
pub mod ellitope;
pub mod error;
pub mod harness;
pub mod model;
pub mod recovery;
pub mod serial;
pub mod sparse_l1;
pub mod synthesis;

pub use error::{Error, Result};
