pub mod config;
pub mod container;
pub mod error;
pub mod experiment;
pub mod form;
pub mod gradients;
pub mod grid;
pub mod random_fields;
pub mod reliability;
pub mod residuals;
pub mod solvers;
pub mod training;
pub mod sparse;
pub mod wavelet;
pub mod wno;

pub use error::{Error, Result};
