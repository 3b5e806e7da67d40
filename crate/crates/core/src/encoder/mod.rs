//! Encoders map a rendered prompt to the hidden states at its mask slots.
//!
//! Two implementations ship here: [`StubEncoder`], a small differentiable
//! encoder whose parameters the trainer updates, and [`EmbeddingStore`],
//! which serves precomputed hidden states exported from a real pretrained
//! model. Category descriptions come from a [`DescriptionProvider`].

mod describe;
mod store;
mod stub;

pub use describe::{DescriptionMode, DescriptionProvider, RemoteConfig};
pub use store::{EmbeddingStore, StoreHeader, STORE_FORMAT, STORE_VERSION};
pub use stub::{StubEncoder, StubGrads, TokenState};

use crate::error::Result;
use crate::numerics::Mat;
use crate::prompts::RenderedPrompt;

pub trait Encoder: Send + Sync {
    /// Feature width `d` of every hidden state.
    fn dim(&self) -> usize;

    /// Number of mask slots `m` each prompt must carry.
    fn mask_count(&self) -> usize;

    /// Hidden states at the mask slots, shape `m x d`.
    fn encode(&self, prompt: &RenderedPrompt) -> Result<Mat>;
}

impl<E: Encoder + ?Sized> Encoder for &E {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn mask_count(&self) -> usize {
        (**self).mask_count()
    }

    fn encode(&self, prompt: &RenderedPrompt) -> Result<Mat> {
        (**self).encode(prompt)
    }
}

impl<E: Encoder + ?Sized> Encoder for Box<E> {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn mask_count(&self) -> usize {
        (**self).mask_count()
    }

    fn encode(&self, prompt: &RenderedPrompt) -> Result<Mat> {
        (**self).encode(prompt)
    }
}
