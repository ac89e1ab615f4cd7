//! Low-light structure-from-motion toolkit: raw preprocessing, sensor noise
//! calibration and synthesis, two-view geometry, scene-graph driven global
//! reconstruction, distillation-loss arithmetic and evaluation metrics.

pub mod adaptation;
pub mod error;
pub mod evaluation;
pub mod fixture;
pub mod geometry;
pub mod global_recon;
pub mod io;
pub mod matching;
pub mod noise_model;
pub mod pipeline;
pub mod raw_pipeline;
pub mod scene_graph;

pub use error::{Error, Result};
