//! Speaker verification reasoning toolkit: closed profile taxonomies, acoustic
//! descriptors, environment simulation, profile support scoring, supervision
//! target composition and evaluation.

pub mod error;
pub mod taxonomy;
pub mod audio;
pub mod descriptors;
pub mod environment;
pub mod support;
pub mod trial;
pub mod compose;
pub mod eval;
pub mod pipeline;

pub use error::{Error, Result};
