//! Selective inference for video anomaly scoring.
//!
//! Each sampled frame is mapped to a decision vector of scaled similarities
//! against a prompt of normal and abnormal event prototypes. Frames already
//! covered by the memory are scored from their neighbours (the reflex
//! pathway); novel frames go to a vision-language analyzer and become new
//! memory records (the conscious pathway). Every few videos a reasoner
//! rewrites the prompt from recent analyzer descriptions, and the memory and
//! past reflex scores are rebuilt under it.

pub mod conscious;
pub mod error;
pub mod eval;
pub mod model;
pub mod pipeline;
pub mod providers;
pub mod reflex;
pub mod timeline;

pub use error::{ConfigError, Error, Result};
