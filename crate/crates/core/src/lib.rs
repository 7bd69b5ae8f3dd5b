//! Optimization-based feedback control of LTI systems: plant/cost modeling,
//! pointwise IQC construction for gradient and proximal optimizers,
//! LMI-based exponential stability certification, and closed-loop
//! simulation of the estimator → optimizer → PI-driver interconnection.

pub mod certify;
pub mod cli;
pub mod closed_loop;
pub mod controller;
pub mod error;
pub mod iqc;
pub mod model;

pub use error::{Error, Result};
