use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::encoder::{StubEncoder, StubGrads, TokenState};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 5e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

impl AdamWConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr.is_finite()
            && self.lr >= 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps.is_finite()
            && self.eps > 0.0
            && self.weight_decay.is_finite()
            && self.weight_decay >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid optimizer settings {self:?}")))
        }
    }
}

/// First and second moments of one parameter block.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Moments {
    pub fn zeros(len: usize) -> Self {
        Moments {
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }
}

/// Bias-corrected AdamW update with decoupled weight decay, in place.
///
/// `theta <- theta - lr * m_hat / (sqrt(v_hat) + eps) - lr * wd * theta`,
/// with `step` the 1-based step count after this update.
pub fn adamw_update(
    theta: &mut [f64],
    grad: &[f64],
    moments: &mut Moments,
    step: u64,
    cfg: &AdamWConfig,
) -> Result<()> {
    if grad.len() != theta.len() || moments.m.len() != theta.len() || moments.v.len() != theta.len() {
        return Err(Error::Shape(format!(
            "parameter length {}, gradient {}, moments {}/{}",
            theta.len(),
            grad.len(),
            moments.m.len(),
            moments.v.len()
        )));
    }
    if step == 0 {
        return Err(Error::InvalidArgument("optimizer steps are 1-based".into()));
    }
    let t = step.min(i32::MAX as u64) as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for i in 0..theta.len() {
        let g = grad[i];
        let m = cfg.beta1 * moments.m[i] + (1.0 - cfg.beta1) * g;
        let v = cfg.beta2 * moments.v[i] + (1.0 - cfg.beta2) * g * g;
        moments.m[i] = m;
        moments.v[i] = v;
        let m_hat = m / bc1;
        let v_hat = v / bc2;
        let old = theta[i];
        theta[i] = old - cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps) - cfg.lr * cfg.weight_decay * old;
    }
    Ok(())
}

/// Optimizer state for every stub encoder parameter.
///
/// Token rows get moments when they are first materialized; until then they
/// have seen only zero gradients, so zero moments are exact.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamWState {
    pub config: AdamWConfig,
    pub step: u64,
    pub mask_tokens: Moments,
    pub tokens: BTreeMap<String, Moments>,
}

impl AdamWState {
    pub fn new(config: AdamWConfig, m: usize, d: usize) -> Self {
        AdamWState {
            config,
            step: 0,
            mask_tokens: Moments::zeros(m * d),
            tokens: BTreeMap::new(),
        }
    }

    /// One dense step over all parameters of `encoder`.
    pub fn step(&mut self, encoder: &mut StubEncoder, grads: &StubGrads) -> Result<()> {
        let shape = encoder.mask_tokens.shape();
        if grads.mask_tokens.shape() != shape || self.mask_tokens.m.len() != shape.0 * shape.1 {
            return Err(Error::Shape(format!(
                "gradient {:?} for mask tokens {:?}",
                grads.mask_tokens.shape(),
                shape
            )));
        }
        if encoder.token_state == TokenState::Fixed && !grads.tokens.is_empty() {
            return Err(Error::InvalidArgument(
                "token gradients supplied for a fixed token table".into(),
            ));
        }
        let d = encoder.d;
        let step = self.step + 1;
        let cfg = self.config;

        adamw_update(
            encoder.mask_tokens.as_mut_slice(),
            grads.mask_tokens.as_slice(),
            &mut self.mask_tokens,
            step,
            &cfg,
        )?;

        if encoder.token_state == TokenState::Learnable {
            for token in grads.tokens.keys() {
                if !encoder.token_table.contains_key(token) {
                    let row = encoder.untouched_embedding(token);
                    encoder.token_table.insert(token.clone(), row);
                }
            }
            let zeros = vec![0.0; d];
            for (token, row) in encoder.token_table.iter_mut() {
                let g = grads.tokens.get(token).unwrap_or(&zeros);
                let moments = self
                    .tokens
                    .entry(token.clone())
                    .or_insert_with(|| Moments::zeros(d));
                adamw_update(row, g, moments, step, &cfg)?;
            }
            // rows never touched see zero gradients: only the decay applies
            encoder.untouched_scale *= 1.0 - cfg.lr * cfg.weight_decay;
        }
        self.step = step;
        Ok(())
    }
}
