//! Corpus-to-norms pipeline: find shame and pride expressions in subtitle
//! corpora, profile their vocabulary, extract the implied social norms with an
//! LLM, cluster them into themes and compare cultures and genders.

pub mod assoc;
pub mod cluster;
pub mod corpus;
pub mod error;
pub mod excerpt;
pub mod exec;
pub mod lexicon;
pub mod norms;
pub mod pipeline;
pub mod provider;
pub mod stats;

pub use error::{Error, Result};
pub use exec::Exec;
