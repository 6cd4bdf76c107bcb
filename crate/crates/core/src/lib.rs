//! Latent representations of acoustic scenes from per-second sound-event
//! probabilities, GPS-derived pseudo-labels and an ontology graph embedding.

pub mod analysis;
pub mod config;
pub mod embed;
pub mod error;
pub mod events;
pub mod geogrid;
pub mod io;
pub mod ontology;
pub mod pipeline;
pub mod synth;
pub mod tfidf;
pub mod vae;

pub use error::{Error, Result};
