//! Preclinical mouse brain extraction pipeline.

pub mod error;
pub mod prequal;
pub mod relaxo;
pub mod ruleseg;
pub mod volgrid;

pub use error::{Error, Result};
