pub mod backward;
pub mod cell;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod flops;
pub mod kalman;
pub mod network;
pub mod scan;
pub mod solver;
pub mod suite;
pub mod tensor;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
