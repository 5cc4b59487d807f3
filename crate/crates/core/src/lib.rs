//! Compositional captioning: a lexical concept classifier and an LSTM
//! language model, trained on separate unpaired data, are joined by a linear
//! multimodal unit trained on paired captions. Weight transfer then lets the
//! model describe concepts that never appear in paired captions.

pub mod caption;
pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod embeddings;
pub mod error;
pub mod eval;
pub mod langmodel;
pub mod lexical;
pub mod numerics;
pub mod pipeline;
pub mod transfer;

pub use error::{DccError, Result};
