//! Label-guided prompt pipeline for multi-label few-shot aspect category
//! detection.
//!
//! Sentences are wrapped in cloze-style prompts, encoded, and read at the
//! mask slots. Each class prototype is an attention-weighted mix of its
//! support sentences, with the attention driven by a generated description
//! of the class. Queries are re-weighted per prototype, scored by cosine,
//! standardized across classes and thresholded dynamically.
//!
//! ```
//! use lgp::encoder::{DescriptionProvider, StubEncoder, TokenState};
//! use lgp::eval::{evaluate, EvalContext, EvalProtocol};
//! use lgp::prompts::TemplateSet;
//! use lgp::synthetic::{generate, SyntheticSpec};
//!
//! let (corpus, split) = generate(&SyntheticSpec::default(), 13)?;
//! let templates = TemplateSet::default();
//! let provider = DescriptionProvider::offline(templates.clone());
//! let encoder = StubEncoder::new(32, templates.mask_count, 7, TokenState::Fixed)?;
//! let ctx = EvalContext {
//!     encoder: &encoder,
//!     provider: &provider,
//!     templates: &templates,
//!     corpus: &corpus,
//!     pool: &split.test,
//! };
//! let protocol = EvalProtocol { episodes: 10, ..EvalProtocol::default() };
//! let report = evaluate(&ctx, &protocol, 7, 1)?;
//! assert!((0.0..=1.0).contains(&report.macro_f1));
//! # Ok::<(), lgp::Error>(())
//! ```

pub mod encoder;
pub mod episodes;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod inference;
pub mod model;
pub mod numerics;
pub mod pipeline;
pub mod prompts;
pub mod synthetic;
pub mod trainer;

pub use error::{Error, Result};

// Book chapters run as doctests.
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/introduction.md")]
mod book_introduction {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/prompts.md")]
mod book_prompts {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/descriptions.md")]
mod book_descriptions {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/episodes.md")]
mod book_episodes {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/model.md")]
mod book_model {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/inference.md")]
mod book_inference {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/training.md")]
mod book_training {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/evaluation.md")]
mod book_evaluation {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/formats.md")]
mod book_formats {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/cli.md")]
mod book_cli {}
