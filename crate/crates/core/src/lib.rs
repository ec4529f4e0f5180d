//! Match-cut candidate ranking.
//!
//! Given per-shot representations for one or more movies, the pipeline removes
//! near-duplicate shots ([`dedup`]), scores unique shot pairs with heuristic or
//! learned similarity functions ([`scoring`], [`learning`]), and returns the
//! top-K pairs either exactly or through an approximate nearest-neighbor index
//! ([`ranking`]). [`evaluation`] measures ranked output against labeled pairs.

pub mod datastore;
pub mod dedup;
pub mod error;
pub mod evaluation;
pub mod flow;
pub mod learning;
pub mod ranking;
pub mod scoring;
pub mod selfcheck;

pub use error::{Error, Result};
