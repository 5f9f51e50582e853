//! The conscious pathway: frame analysis, reasoner rounds and prompt refresh.

pub mod analyzer;
pub mod options;
pub mod parse;
pub mod prompt;
pub mod refresh;
pub mod sampling;
