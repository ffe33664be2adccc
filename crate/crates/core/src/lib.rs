//! Query-to-entity recommendation: query encoders trained jointly with an
//! entity embedding table under sampled softmax, plus the data pipeline,
//! cosine index, offline evaluation and HTTP service around them.

pub mod checkpoint;
pub mod datapipe;
pub mod error;
pub mod eval;
pub mod index;
pub mod model;
pub mod numerics;
pub mod serve;
pub mod text;
pub mod training;

pub use error::{Error, Result};
