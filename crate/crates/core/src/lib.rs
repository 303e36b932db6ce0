//! Multi-object tracking with a mixture of dynamical VAEs.

pub mod baselines;
pub mod dataio;
pub mod error;
pub mod formats;
pub mod geometry;
pub mod metrics;
pub mod nn;
pub mod paramio;
pub mod plot;
pub mod rng;
pub mod scene;
pub mod srnn;
pub mod train;
pub mod trajgen;
pub mod vem;

pub use error::{Error, Result};
pub use geometry::{BBox, Vec4};
