//! Concept induction from simulated attention: generates scene corpora,
//! harvests per-word attention logits, induces a synonym/exclusive concept
//! hierarchy from corpus-wide binary codes, and reasons over the induced
//! symbols to measure how much of the ground truth they retain.

pub mod analysis;
pub mod attention;
pub mod bits;
pub mod cli;
pub mod config;
pub mod gmm;
pub mod hierarchy;
pub mod induction;
pub mod ontology;
pub mod pipeline;
pub mod reasoner;
pub mod seeding;
pub mod svg;
