//! Hierarchical sentiment and Bloom-taxonomy classification of course forum
//! chats.
//!
//! The pipeline runs ingest ([`corpus`]) → [`preprocess`] → [`features`] →
//! [`resample`] → [`models`] → [`hierarchy`] → [`eval`].

pub mod corpus;
pub mod error;
pub mod eval;
pub mod features;
pub mod hierarchy;
pub mod models;
pub mod preprocess;
pub mod resample;
pub mod rng;

pub use error::{Error, Result};
