pub mod attention;
pub mod cli;
pub mod error;
pub mod experiments;
pub mod grad;
pub mod linalg;
pub mod model;
pub mod paramcount;

pub use error::{Error, Result};
