//! Inference graphs for defeasible reasoning: repetition feedback, corrector
//! training data, and graph-augmented query encoders.

pub mod analysis;
pub mod corrdata;
pub mod data;
pub mod embed;
pub mod encoders;
pub mod feedback;
pub mod graph;
pub mod nn;
pub mod query;
pub mod stats;
pub mod synth;
pub mod train;
