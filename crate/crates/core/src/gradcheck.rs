//! Central finite-difference checks of the analytic backward pass.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::encoder::{Encoder, StubEncoder};
use crate::episodes::episode_seed;
use crate::error::{Error, Result};
use crate::model::{backward, forward, EpisodeReps};
use crate::numerics::{Mat, DEFAULT_STD_EPS};
use crate::pipeline::{run_episode, stub_loss_and_grads, EpisodePrompts};

/// Denominator floor of the relative error, so coordinates whose true
/// gradient is zero are judged by absolute error.
pub const REL_ERR_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckConfig {
    pub n_way: usize,
    pub k_shot: usize,
    pub queries_per_class: usize,
    pub d: usize,
    pub m: usize,
    pub episodes: usize,
    pub step: f64,
    pub tolerance: f64,
    /// Probability that a query carries each class.
    pub label_rate: f64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig {
            n_way: 5,
            k_shot: 5,
            queries_per_class: 5,
            d: 16,
            m: 3,
            episodes: 100,
            step: 1e-5,
            tolerance: 1e-4,
            label_rate: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub episodes: usize,
    /// Episodes skipped because N = 1 makes every score identically zero.
    pub skipped: usize,
    pub coordinates: usize,
    pub max_rel_err: f64,
    pub tolerance: f64,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.tolerance
    }
}

/// Random episode whose representations are mean-pooled `m x d` hidden
/// states with standard normal entries.
pub fn random_reps(rng: &mut ChaCha8Rng, cfg: &GradcheckConfig) -> Result<EpisodeReps> {
    let pooled = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        let mut v = vec![0.0; cfg.d];
        for _ in 0..cfg.m {
            for x in v.iter_mut() {
                *x += rng.sample::<f64, _>(StandardNormal) / cfg.m as f64;
            }
        }
        v
    };
    let support = (0..cfg.n_way)
        .map(|_| {
            let rows: Vec<Vec<f64>> = (0..cfg.k_shot).map(|_| pooled(rng)).collect();
            Mat::from_rows(&rows)
        })
        .collect::<Result<Vec<_>>>()?;
    let descriptions = (0..cfg.n_way).map(|_| pooled(rng)).collect();
    let q = cfg.n_way * cfg.queries_per_class;
    let queries = (0..q).map(|_| pooled(rng)).collect();
    let labels = (0..q)
        .map(|_| (0..cfg.n_way).map(|_| rng.random_bool(cfg.label_rate)).collect())
        .collect();
    Ok(EpisodeReps {
        support,
        descriptions,
        queries,
        labels,
    })
}

/// Largest relative error over every input coordinate of one episode.
pub fn check_reps(reps: &EpisodeReps, step: f64, eps: f64) -> Result<(f64, usize)> {
    let fwd = forward(reps, eps)?;
    let grads = backward(reps, &fwd)?;
    let loss_at = |r: &EpisodeReps| -> Result<f64> { Ok(forward(r, eps)?.loss) };
    let mut worst = 0.0f64;
    let mut count = 0usize;
    let mut probe = reps.clone();
    let mut check = |analytic: f64, set: &mut dyn FnMut(&mut EpisodeReps, f64)| -> Result<()> {
        set(&mut probe, step);
        let up = loss_at(&probe)?;
        set(&mut probe, -2.0 * step);
        let down = loss_at(&probe)?;
        set(&mut probe, step);
        let numeric = (up - down) / (2.0 * step);
        worst = worst.max(relative_error(analytic, numeric));
        count += 1;
        Ok(())
    };
    for (i, g) in grads.support.iter().enumerate() {
        for k in 0..g.rows() {
            for j in 0..g.cols() {
                check(g.get(k, j), &mut |r, h| r.support[i].row_mut(k)[j] += h)?;
            }
        }
    }
    for (i, g) in grads.descriptions.iter().enumerate() {
        for (j, &a) in g.iter().enumerate() {
            check(a, &mut |r, h| r.descriptions[i][j] += h)?;
        }
    }
    for (i, g) in grads.queries.iter().enumerate() {
        for (j, &a) in g.iter().enumerate() {
            check(a, &mut |r, h| r.queries[i][j] += h)?;
        }
    }
    Ok((worst, count))
}

/// Runs `cfg.episodes` random episodes through [`check_reps`].
pub fn run(cfg: &GradcheckConfig, seed: u64) -> Result<GradcheckReport> {
    if cfg.d == 0 || cfg.m == 0 || cfg.k_shot == 0 || cfg.queries_per_class == 0 || cfg.n_way == 0 {
        return Err(Error::InvalidArgument(format!("gradcheck needs positive sizes, got {cfg:?}")));
    }
    if !(cfg.step > 0.0 && cfg.step.is_finite()) {
        return Err(Error::InvalidArgument(format!("finite-difference step {}", cfg.step)));
    }
    let mut report = GradcheckReport {
        episodes: 0,
        skipped: 0,
        coordinates: 0,
        max_rel_err: 0.0,
        tolerance: cfg.tolerance,
    };
    for i in 0..cfg.episodes {
        if cfg.n_way == 1 {
            report.skipped += 1;
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(episode_seed(seed, i as u64));
        let reps = random_reps(&mut rng, cfg)?;
        let (worst, count) = check_reps(&reps, cfg.step, DEFAULT_STD_EPS)?;
        report.episodes += 1;
        report.coordinates += count;
        report.max_rel_err = report.max_rel_err.max(worst);
    }
    Ok(report)
}

/// Finite-difference check of the loss gradient with respect to the stub
/// encoder's mask tokens and any token rows named in `tokens`.
pub fn check_stub(
    encoder: &StubEncoder,
    prompts: &EpisodePrompts,
    tokens: &[&str],
    step: f64,
    eps: f64,
) -> Result<(f64, usize)> {
    let (_, grads) = stub_loss_and_grads(encoder, prompts, eps)?;
    let loss_of = |e: &StubEncoder| -> Result<f64> { Ok(run_episode(e, prompts, eps)?.1.loss) };
    let mut worst = 0.0f64;
    let mut count = 0usize;
    let (m, d) = (encoder.mask_count(), encoder.dim());
    for j in 0..m {
        for k in 0..d {
            let mut probe = encoder.clone();
            let mut u = probe.mask_tokens().clone();
            u.row_mut(j)[k] += step;
            probe.set_mask_tokens(u.clone())?;
            let up = loss_of(&probe)?;
            u.row_mut(j)[k] -= 2.0 * step;
            probe.set_mask_tokens(u)?;
            let down = loss_of(&probe)?;
            let numeric = (up - down) / (2.0 * step);
            worst = worst.max(relative_error(grads.mask_tokens.get(j, k), numeric));
            count += 1;
        }
    }
    for &token in tokens {
        let analytic = grads.tokens.get(token).cloned().unwrap_or_else(|| vec![0.0; d]);
        let base = encoder.token_embedding(token);
        for k in 0..d {
            let mut probe = encoder.clone();
            let mut row = base.clone();
            row[k] += step;
            probe.set_token_embedding(token, row.clone())?;
            let up = loss_of(&probe)?;
            row[k] -= 2.0 * step;
            probe.set_token_embedding(token, row)?;
            let down = loss_of(&probe)?;
            let numeric = (up - down) / (2.0 * step);
            worst = worst.max(relative_error(analytic[k], numeric));
            count += 1;
        }
    }
    Ok((worst, count))
}
