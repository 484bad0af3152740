//! Neural interatomic potential with directional message passing,
//! reverse-mode differentiation for forces, and uncertainty estimation
//! via deep ensembles or a mean-variance head.

pub mod autodiff;
pub mod basis;
pub mod cli;
pub mod data;
pub mod error;
pub mod geometry;
pub mod model;
pub mod train;
pub mod uncertainty;

pub use error::{Error, Result};
