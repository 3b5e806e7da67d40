use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::Encoder;
use crate::error::{Error, Result};
use crate::numerics::{axpy, Mat};
use crate::prompts::RenderedPrompt;

/// Whether context-token embeddings are trained alongside the mask tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenState {
    #[default]
    Fixed,
    Learnable,
}

/// Encoder with `h_j = u_j + mean(context token embeddings)`.
///
/// Each token embedding is drawn from a generator seeded by the global seed
/// and the token's bytes, uniform in `[-0.5, 0.5] / sqrt(d)`. With
/// [`TokenState::Learnable`] the trainer materializes per-token rows in
/// `token_table` the first time a token receives a gradient. Rows that were
/// never materialized still follow decoupled weight decay through
/// `untouched_scale`, so the table behaves like a dense parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct StubEncoder {
    pub(crate) d: usize,
    pub(crate) seed: u64,
    pub(crate) token_state: TokenState,
    pub(crate) mask_tokens: Mat,
    pub(crate) token_table: BTreeMap<String, Vec<f64>>,
    pub(crate) untouched_scale: f64,
}

impl StubEncoder {
    pub fn new(d: usize, m: usize, seed: u64, token_state: TokenState) -> Result<Self> {
        if d == 0 || m == 0 {
            return Err(Error::InvalidArgument(format!(
                "stub encoder needs d >= 1 and m >= 1, got d={d}, m={m}"
            )));
        }
        let mut mask_tokens = Mat::zeros(m, d);
        for j in 0..m {
            let row = hashed_vector(seed, b"mask", &(j as u64 + 1).to_le_bytes(), d);
            mask_tokens.row_mut(j).copy_from_slice(&row);
        }
        Ok(StubEncoder {
            d,
            seed,
            token_state,
            mask_tokens,
            token_table: BTreeMap::new(),
            untouched_scale: 1.0,
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn token_state(&self) -> TokenState {
        self.token_state
    }

    pub fn mask_tokens(&self) -> &Mat {
        &self.mask_tokens
    }

    pub fn set_mask_tokens(&mut self, mask_tokens: Mat) -> Result<()> {
        if mask_tokens.shape() != self.mask_tokens.shape() {
            return Err(Error::Shape(format!(
                "mask tokens must be {:?}, got {:?}",
                self.mask_tokens.shape(),
                mask_tokens.shape()
            )));
        }
        self.mask_tokens = mask_tokens;
        Ok(())
    }

    /// Trained token rows; tokens absent here use their hashed embedding.
    pub fn token_table(&self) -> &BTreeMap<String, Vec<f64>> {
        &self.token_table
    }

    /// Current embedding of `token`.
    pub fn token_embedding(&self, token: &str) -> Vec<f64> {
        match self.token_table.get(token) {
            Some(row) => row.clone(),
            None => self.untouched_embedding(token),
        }
    }

    /// Overrides one token row. Used by tests and checkpoint loading.
    pub fn set_token_embedding(&mut self, token: &str, row: Vec<f64>) -> Result<()> {
        if row.len() != self.d {
            return Err(Error::Shape(format!(
                "token row must have length {}, got {}",
                self.d,
                row.len()
            )));
        }
        self.token_table.insert(token.to_string(), row);
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.mask_tokens.is_finite()
            && self.untouched_scale.is_finite()
            && self.token_table.values().flatten().all(|v| v.is_finite())
    }

    pub(crate) fn untouched_embedding(&self, token: &str) -> Vec<f64> {
        let mut row = hashed_vector(self.seed, b"token", token.as_bytes(), self.d);
        if self.untouched_scale != 1.0 {
            row.iter_mut().for_each(|v| *v *= self.untouched_scale);
        }
        row
    }

    fn check_prompt(&self, prompt: &RenderedPrompt) -> Result<()> {
        if prompt.mask_count() != self.mask_tokens.rows() {
            return Err(Error::Shape(format!(
                "prompt has {} mask slots, encoder expects {}",
                prompt.mask_count(),
                self.mask_tokens.rows()
            )));
        }
        Ok(())
    }

    fn context_mean(&self, prompt: &RenderedPrompt) -> Vec<f64> {
        let mut sum = vec![0.0; self.d];
        let mut count = 0usize;
        for token in prompt.context_tokens() {
            match self.token_table.get(token) {
                Some(row) => axpy(1.0, row, &mut sum),
                None => axpy(1.0, &self.untouched_embedding(token), &mut sum),
            }
            count += 1;
        }
        if count > 0 {
            let scale = 1.0 / count as f64;
            sum.iter_mut().for_each(|v| *v *= scale);
        }
        sum
    }

    /// Gradient of a scalar loss with respect to the encoder parameters,
    /// given its gradient `dl_dh` with respect to `encode(prompt)`.
    pub fn grad(&self, prompt: &RenderedPrompt, dl_dh: &Mat) -> Result<StubGrads> {
        let mut grads = StubGrads::zeros(self.mask_tokens.rows(), self.d);
        self.accumulate_grad(prompt, dl_dh, &mut grads)?;
        Ok(grads)
    }

    /// Adds the gradient for one prompt into `grads`.
    pub fn accumulate_grad(
        &self,
        prompt: &RenderedPrompt,
        dl_dh: &Mat,
        grads: &mut StubGrads,
    ) -> Result<()> {
        self.check_prompt(prompt)?;
        if dl_dh.shape() != self.mask_tokens.shape() {
            return Err(Error::Shape(format!(
                "dL/dh must be {:?}, got {:?}",
                self.mask_tokens.shape(),
                dl_dh.shape()
            )));
        }
        if grads.mask_tokens.shape() != self.mask_tokens.shape() {
            return Err(Error::Shape("gradient accumulator has the wrong shape".into()));
        }
        axpy(1.0, dl_dh.as_slice(), grads.mask_tokens.as_mut_slice());

        if self.token_state == TokenState::Learnable {
            let count = prompt.context_tokens().count();
            if count > 0 {
                let mut row_sum = vec![0.0; self.d];
                for row in dl_dh.iter_rows() {
                    axpy(1.0, row, &mut row_sum);
                }
                let scale = 1.0 / count as f64;
                for token in prompt.context_tokens() {
                    let slot = grads
                        .tokens
                        .entry(token.to_string())
                        .or_insert_with(|| vec![0.0; self.d]);
                    axpy(scale, &row_sum, slot);
                }
            }
        }
        Ok(())
    }
}

impl Encoder for StubEncoder {
    fn dim(&self) -> usize {
        self.d
    }

    fn mask_count(&self) -> usize {
        self.mask_tokens.rows()
    }

    fn encode(&self, prompt: &RenderedPrompt) -> Result<Mat> {
        self.check_prompt(prompt)?;
        let context = self.context_mean(prompt);
        let mut h = self.mask_tokens.clone();
        for j in 0..h.rows() {
            axpy(1.0, &context, h.row_mut(j));
        }
        Ok(h)
    }
}

/// Gradients with respect to the stub encoder parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct StubGrads {
    pub mask_tokens: Mat,
    /// Per-token gradients; empty unless token embeddings are learnable.
    pub tokens: BTreeMap<String, Vec<f64>>,
}

impl StubGrads {
    pub fn zeros(m: usize, d: usize) -> Self {
        StubGrads {
            mask_tokens: Mat::zeros(m, d),
            tokens: BTreeMap::new(),
        }
    }

    pub fn add_assign(&mut self, other: &StubGrads) {
        axpy(1.0, other.mask_tokens.as_slice(), self.mask_tokens.as_mut_slice());
        for (token, g) in &other.tokens {
            match self.tokens.get_mut(token) {
                Some(slot) => axpy(1.0, g, slot),
                None => {
                    self.tokens.insert(token.clone(), g.clone());
                }
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.mask_tokens.is_finite() && self.tokens.values().flatten().all(|v| v.is_finite())
    }
}

/// Deterministic vector in `[-0.5, 0.5]^d / sqrt(d)` keyed by `(seed, domain, bytes)`.
pub(crate) fn hashed_vector(seed: u64, domain: &[u8], bytes: &[u8], d: usize) -> Vec<f64> {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(domain);
    hasher.update([0u8]);
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest[..32]);
    let mut rng = ChaCha8Rng::from_seed(key);
    let scale = 1.0 / (d as f64).sqrt();
    (0..d)
        .map(|_| (rng.random::<f64>() - 0.5) * scale)
        .collect()
}
