//! Attribute-level belief tracking for question-asking dialogue agents.
//!
//! A design request is modelled as a set of categorical attributes. The agent
//! keeps a factorized belief over them, every answer narrows the belief, and
//! the drop in entropy scores the question that caused it. Those scores drive
//! preference-data generation and policy training.

pub mod belief;
pub mod datagen;
pub mod dialogue;
pub mod error;
pub mod eval;
pub mod gateway;
pub mod pipeline;
pub mod policy;
pub mod schema;
pub mod seed;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/schemas.md")]
    mod schemas {}
    #[doc = include_str!("../../../book/src/belief.md")]
    mod belief {}
    #[doc = include_str!("../../../book/src/dialogues.md")]
    mod dialogues {}
    #[doc = include_str!("../../../book/src/preference-data.md")]
    mod preference_data {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
