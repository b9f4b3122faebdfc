//! Pixel-wise uncertainty and out-of-distribution scoring toolkit.
//!
//! The crate covers the full loop at desk scale: a synthetic anomaly
//! dataset generator, a deterministic toy encoder, per-pixel scoring
//! methods (softmax family, MC-dropout family, Dirichlet family, kNN
//! embedding density, and a learned embedding density via a Real-NVP
//! normalizing flow), multi-layer score aggregation, and an
//! imbalance-aware metrics engine with exact and streaming backends.

pub mod aggregation;
pub mod embedding;
pub mod encoder;
pub mod knn;
pub mod metrics;
pub mod scores;
pub mod synth;
pub mod error;
pub mod flow;
pub mod numerics;
pub mod raster;
pub mod resize;
pub mod seed;

pub use error::{Error, Result};
