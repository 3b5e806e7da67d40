use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::adamw::{AdamWState, Moments};
use super::TrainConfig;
use crate::encoder::{StubEncoder, TokenState};
use crate::error::{Error, Result};
use crate::numerics::Mat;

pub const CHECKPOINT_FORMAT: &str = "lgp-ckpt";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Trained stub encoder, optimizer state and stream position.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub encoder: StubEncoder,
    pub optimizer: AdamWState,
    pub config: TrainConfig,
    pub seed: u64,
    /// Completed epochs.
    pub epoch: usize,
    /// Episodes already consumed from the current epoch.
    pub next_task: usize,
    /// Validation macro-F1 of this snapshot, when measured.
    pub val_f1: Option<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MomentsFile {
    m: String,
    v: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointFile {
    format: String,
    version: u32,
    d: usize,
    m: usize,
    seed: u64,
    epoch: usize,
    next_task: usize,
    val_f1: Option<f64>,
    config: TrainConfig,
    encoder_seed: u64,
    token_state: TokenState,
    mask_tokens: String,
    untouched_scale: String,
    tokens: BTreeMap<String, String>,
    step: u64,
    mask_moments: MomentsFile,
    token_moments: BTreeMap<String, MomentsFile>,
}

/// Little-endian IEEE-754 bytes, hex encoded.
pub fn encode_f64s(values: &[f64]) -> String {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    hex::encode(bytes)
}

pub fn decode_f64s(text: &str, expected: usize, what: &str) -> Result<Vec<f64>> {
    let bytes = hex::decode(text).map_err(|e| Error::Format(format!("{what}: {e}")))?;
    if bytes.len() != expected * 8 {
        return Err(Error::Format(format!(
            "{what}: expected {expected} values, found {} bytes",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

impl Checkpoint {
    pub fn d(&self) -> usize {
        self.encoder.d
    }

    pub fn m(&self) -> usize {
        self.encoder.mask_tokens.rows()
    }

    pub fn to_json(&self) -> Result<String> {
        let moments = |m: &Moments| MomentsFile {
            m: encode_f64s(&m.m),
            v: encode_f64s(&m.v),
        };
        let file = CheckpointFile {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            d: self.d(),
            m: self.m(),
            seed: self.seed,
            epoch: self.epoch,
            next_task: self.next_task,
            val_f1: self.val_f1,
            config: self.config.clone(),
            encoder_seed: self.encoder.seed,
            token_state: self.encoder.token_state,
            mask_tokens: encode_f64s(self.encoder.mask_tokens.as_slice()),
            untouched_scale: encode_f64s(&[self.encoder.untouched_scale]),
            tokens: self
                .encoder
                .token_table
                .iter()
                .map(|(k, v)| (k.clone(), encode_f64s(v)))
                .collect(),
            step: self.optimizer.step,
            mask_moments: moments(&self.optimizer.mask_tokens),
            token_moments: self
                .optimizer
                .tokens
                .iter()
                .map(|(k, v)| (k.clone(), moments(v)))
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&file)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: CheckpointFile =
            serde_json::from_str(text).map_err(|e| Error::Format(format!("checkpoint: {e}")))?;
        if file.format != CHECKPOINT_FORMAT {
            return Err(Error::Format(format!(
                "expected format {CHECKPOINT_FORMAT:?}, found {:?}",
                file.format
            )));
        }
        if file.version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint version {}",
                file.version
            )));
        }
        let (d, m) = (file.d, file.m);
        if d == 0 || m == 0 {
            return Err(Error::Format(format!("checkpoint has d={d}, m={m}")));
        }
        if file.config.d != d || file.config.m != m {
            return Err(Error::Format(format!(
                "header d={d}, m={m} disagrees with config d={}, m={}",
                file.config.d, file.config.m
            )));
        }
        let mut encoder = StubEncoder::new(d, m, file.encoder_seed, file.token_state)?;
        encoder.mask_tokens = Mat::from_vec(m, d, decode_f64s(&file.mask_tokens, m * d, "mask_tokens")?)?;
        encoder.untouched_scale = decode_f64s(&file.untouched_scale, 1, "untouched_scale")?[0];
        for (token, blob) in &file.tokens {
            encoder
                .token_table
                .insert(token.clone(), decode_f64s(blob, d, &format!("token {token:?}"))?);
        }
        if file.token_state == TokenState::Fixed && !encoder.token_table.is_empty() {
            return Err(Error::Format("fixed token state with trained token rows".into()));
        }
        let moments = |f: &MomentsFile, len: usize, what: &str| -> Result<Moments> {
            Ok(Moments {
                m: decode_f64s(&f.m, len, what)?,
                v: decode_f64s(&f.v, len, what)?,
            })
        };
        let mut optimizer = AdamWState::new(file.config.optimizer, m, d);
        optimizer.step = file.step;
        optimizer.mask_tokens = moments(&file.mask_moments, m * d, "mask moments")?;
        for (token, f) in &file.token_moments {
            optimizer
                .tokens
                .insert(token.clone(), moments(f, d, &format!("moments of {token:?}"))?);
        }
        if !encoder.is_finite() {
            return Err(Error::Format("checkpoint holds non-finite parameters".into()));
        }
        Ok(Checkpoint {
            encoder,
            optimizer,
            config: file.config,
            seed: file.seed,
            epoch: file.epoch,
            next_task: file.next_task,
            val_f1: file.val_f1,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_json(&text)
    }

    /// Loads and checks the stored dimensions against what the caller expects.
    pub fn load_expecting(path: impl AsRef<Path>, d: usize, m: usize) -> Result<Self> {
        let ckpt = Checkpoint::load(path)?;
        if ckpt.d() != d || ckpt.m() != m {
            return Err(Error::Format(format!(
                "checkpoint has d={}, m={}; expected d={d}, m={m}",
                ckpt.d(),
                ckpt.m()
            )));
        }
        Ok(ckpt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hex_round_trip_is_exact() {
        let values = [0.1, -0.0, f64::MIN_POSITIVE, 1e300, -7.25];
        let back = decode_f64s(&encode_f64s(&values), 5, "x").unwrap();
        for (a, b) in values.iter().zip(&back) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert!(matches!(decode_f64s("00ff", 1, "x"), Err(Error::Format(_))));
        assert!(matches!(decode_f64s("zz", 0, "x"), Err(Error::Format(_))));
    }
}
