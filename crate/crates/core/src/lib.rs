//! Individualized treatment rules estimated by dynamic weighted ordinary
//! least squares, with centralized, pooled (microaggregated), and
//! distributed-regression estimators.

pub mod config;
pub mod data;
pub mod distributed;
pub mod error;
pub mod gdwols;
pub mod glm;
pub mod harness;
pub mod pooling;
pub mod simgen;
pub mod weights;

pub use error::{Error, ErrorClass, Result};
