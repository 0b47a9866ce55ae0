//! Annotating implicit discourse relations with chat-completion models.
//!
//! The pipeline: load a sense inventory and a corpus, derive gold labels
//! from crowd votes, run a prompting strategy per item against a backend,
//! then score the predictions.

pub mod backend;
pub mod corpus;
pub mod metrics;
pub mod parsing;
pub mod strategies;
pub mod taxonomy;
