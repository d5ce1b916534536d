//! Paired main-path / multipath radio map simulation, feature-space shift
//! geometry and few-shot diffusion fine-tuning with a direction-consistency
//! regularizer.

pub mod diffuse;
pub mod envgrid;
pub mod error;
pub mod featspace;
pub mod formats;
pub mod metrics;
pub mod numeric;
pub mod pipeline;
pub mod propagate;
pub mod radiomap;

pub use error::{Error, Result};
pub use radiomap::RadioMap;
