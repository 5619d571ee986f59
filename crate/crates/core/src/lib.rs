//! Modular codec avatars on synthetic faces.

pub mod codec;
pub mod config;
pub mod error;
pub mod eval;
pub mod face;
pub mod hash;
pub mod mca;
pub mod numeric;
pub mod par;
pub mod pipeline;

pub use error::{Error, Result};
