//! Open-population capture-recapture with a complete-data likelihood,
//! data augmentation and individual time-varying covariates.

pub mod covariates;
pub mod data;
pub mod diagnostics;
pub mod draws;
pub mod error;
pub mod likelihood;
pub mod math;
pub mod model;
pub mod popstate;
pub mod run;
pub mod sampler;
pub mod simulate;

pub use error::{Error, Result};
