//! Entity-masked adaptive pre-training and hierarchical multi-label
//! classification of crisis tweets, at desk scale.

pub mod ablation;
pub mod baseline;
pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod encoder;
pub mod eval;
pub mod error;
pub mod heads;
pub mod masking;
pub mod model;
pub mod ner;
pub mod nn;
pub mod ontology;
pub mod optim;
pub mod parallel;
pub mod pipeline;
pub mod synth;
pub mod tokenizer;
pub mod trainer;

pub use error::{Error, Result};
