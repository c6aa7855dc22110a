pub mod error;
pub mod tensor;
pub mod tree;
pub mod basis;
pub mod network;
pub mod learning;
pub mod adaptation;
pub mod bench;

pub use error::{Error, Result};
