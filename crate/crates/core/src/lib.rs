//! Multiple-instance subtype classification with dynamic patch screening
//! and clinical-query cross-attention fusion.

mod binio;
pub mod cli;
pub mod data;
pub mod error;
pub mod fusion;
pub mod metrics;
pub mod model;
pub mod numerics;
mod params;
pub mod rng;
pub mod screening;
pub mod subtype;
pub mod training;

pub use error::{Error, FormatError, Result};
