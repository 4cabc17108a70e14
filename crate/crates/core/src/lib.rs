//! Skeleton-based action recognition for live robot perception.
//!
//! The pipeline takes tracked 3D skeletons (NTU RGB+D files, SKELREC-JSONL
//! recordings or a live stream), reconciles joint layouts, optionally
//! normalizes them, packs fixed-duration windows and classifies them with a
//! residual temporal convolutional network implemented on top of `ndarray`.

pub mod augment;
pub mod config;
pub mod error;
pub mod ingest;
pub mod model;
pub mod pipeline;
pub mod preprocess;
pub mod rng;
pub mod skeleton;
pub mod stream;
pub mod synth;
pub mod train;
pub mod windowing;

pub use error::{Error, Result};
