//! Macro-F1 and one-vs-rest ROC AUC over episodic evaluation.
//!
//! Metrics are computed per episode and then averaged over episodes. Within
//! an episode, F1 is computed per class from query-level counts (a class
//! with no true positives scores 0) and averaged over the N classes. AUC is
//! the Mann-Whitney statistic per class, ties counting one half, averaged
//! over the classes that have both positive and negative queries.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoder::{DescriptionProvider, Encoder};
use crate::episodes::{episode_at, Corpus, EpisodeShape, SplitPart};
use crate::error::{Error, Result};
use crate::inference::{predict, Fallback, ThresholdParams};
use crate::numerics::DEFAULT_STD_EPS;
use crate::pipeline::{run_episode, EpisodePrompts};
use crate::prompts::TemplateSet;

pub fn macro_f1(preds: &[BTreeSet<usize>], golds: &[Vec<bool>], n: usize) -> Result<f64> {
    if preds.len() != golds.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} gold vectors",
            preds.len(),
            golds.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::InvalidArgument("macro F1 of zero queries".into()));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("macro F1 over zero classes".into()));
    }
    let mut tp = vec![0usize; n];
    let mut fp = vec![0usize; n];
    let mut fn_ = vec![0usize; n];
    for (pred, gold) in preds.iter().zip(golds) {
        if gold.len() != n || pred.iter().any(|&c| c >= n) {
            return Err(Error::Shape(format!("query labels must index {n} classes")));
        }
        for c in 0..n {
            match (pred.contains(&c), gold[c]) {
                (true, true) => tp[c] += 1,
                (true, false) => fp[c] += 1,
                (false, true) => fn_[c] += 1,
                (false, false) => {}
            }
        }
    }
    let total: f64 = (0..n)
        .map(|c| {
            let denom = 2 * tp[c] + fp[c] + fn_[c];
            if tp[c] == 0 {
                0.0
            } else {
                2.0 * tp[c] as f64 / denom as f64
            }
        })
        .sum();
    Ok(total / n as f64)
}

/// AUC of one class via midranks: (sum of positive ranks - P(P+1)/2) / (P*N).
/// `None` when the class has no positives or no negatives.
pub fn binary_auc(scores: &[f64], gold: &[bool]) -> Option<f64> {
    let positives = gold.iter().filter(|&&g| g).count();
    let negatives = gold.len() - positives;
    if positives == 0 || negatives == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        // ranks start+1 ..= end share their average
        let midrank = (start + 1 + end) as f64 / 2.0;
        rank_sum += midrank * order[start..end].iter().filter(|&&i| gold[i]).count() as f64;
        start = end;
    }
    let p = positives as f64;
    Some((rank_sum - p * (p + 1.0) / 2.0) / (p * negatives as f64))
}

/// Macro one-vs-rest AUC across classes of one episode.
pub fn auc(scores: &[Vec<f64>], golds: &[Vec<bool>], n: usize) -> Result<f64> {
    if scores.len() != golds.len() {
        return Err(Error::Shape(format!(
            "{} score vectors for {} gold vectors",
            scores.len(),
            golds.len()
        )));
    }
    if scores.iter().any(|s| s.len() != n) || golds.iter().any(|g| g.len() != n) {
        return Err(Error::Shape(format!("every query needs {n} scores and labels")));
    }
    let mut total = 0.0;
    let mut counted = 0usize;
    for c in 0..n {
        let column: Vec<f64> = scores.iter().map(|s| s[c]).collect();
        let gold: Vec<bool> = golds.iter().map(|g| g[c]).collect();
        if let Some(a) = binary_auc(&column, &gold) {
            total += a;
            counted += 1;
        }
    }
    if counted == 0 {
        return Err(Error::Degenerate(
            "every class lacks positives or negatives; AUC undefined".into(),
        ));
    }
    Ok(total / counted as f64)
}

/// Scores, decisions and gold labels for every query of one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeOutcome {
    pub y_hat: Vec<Vec<f64>>,
    pub predictions: Vec<BTreeSet<usize>>,
    pub golds: Vec<Vec<bool>>,
}

impl EpisodeOutcome {
    pub fn n_way(&self) -> usize {
        self.golds.first().map_or(0, Vec::len)
    }

    pub fn metrics(&self) -> Result<EpisodeMetrics> {
        let n = self.n_way();
        let f1 = macro_f1(&self.predictions, &self.golds, n)?;
        let auc = match auc(&self.y_hat, &self.golds, n) {
            Ok(a) => Some(a),
            Err(Error::Degenerate(_)) => None,
            Err(e) => return Err(e),
        };
        Ok(EpisodeMetrics { f1, auc })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub f1: f64,
    /// `None` when AUC is undefined for every class of the episode.
    pub auc: Option<f64>,
}

/// Evaluation protocol. Worker count is not part of the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalProtocol {
    pub split: SplitPart,
    #[serde(flatten)]
    pub shape: EpisodeShape,
    pub episodes: usize,
    pub threshold: ThresholdParams,
    pub fallback: Fallback,
    pub std_eps: f64,
}

impl Default for EvalProtocol {
    fn default() -> Self {
        EvalProtocol {
            split: SplitPart::Test,
            shape: EpisodeShape::default(),
            episodes: crate::episodes::EVAL_TASKS,
            threshold: ThresholdParams::default(),
            fallback: Fallback::Argmax,
            std_eps: DEFAULT_STD_EPS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub macro_f1: f64,
    /// Mean over episodes whose AUC is defined.
    pub auc: Option<f64>,
    pub episodes: Vec<EpisodeMetrics>,
    pub protocol: EvalProtocol,
    pub seed: u64,
}

impl Report {
    pub fn degenerate_auc_episodes(&self) -> usize {
        self.episodes.iter().filter(|e| e.auc.is_none()).count()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}

/// Runs one episode and thresholds every query.
pub fn evaluate_episode<E: Encoder + ?Sized>(
    encoder: &E,
    prompts: &EpisodePrompts,
    protocol: &EvalProtocol,
) -> Result<EpisodeOutcome> {
    let (_, fwd) = run_episode(encoder, prompts, protocol.std_eps)?;
    let y_hat: Vec<Vec<f64>> = fwd.scores.into_iter().map(|s| s.y_hat).collect();
    let predictions = y_hat
        .iter()
        .map(|s| predict(s, &protocol.threshold, protocol.fallback).positives)
        .collect();
    Ok(EpisodeOutcome {
        y_hat,
        predictions,
        golds: prompts.labels.clone(),
    })
}

/// Things an evaluation run reads but never modifies.
pub struct EvalContext<'a, E: Encoder + ?Sized> {
    pub encoder: &'a E,
    pub provider: &'a DescriptionProvider,
    pub templates: &'a TemplateSet,
    pub corpus: &'a Corpus,
    /// Class labels episodes are drawn from.
    pub pool: &'a [String],
}

/// Streams `protocol.episodes` episodes from `seed` and averages the
/// per-episode metrics. Results do not depend on `workers`.
pub fn evaluate<E: Encoder + ?Sized>(
    ctx: &EvalContext<'_, E>,
    protocol: &EvalProtocol,
    seed: u64,
    workers: usize,
) -> Result<Report> {
    protocol.shape.validate()?;
    if protocol.episodes == 0 {
        return Err(Error::InvalidArgument("evaluation needs at least one episode".into()));
    }
    if !protocol.threshold.is_finite() {
        return Err(Error::InvalidArgument("threshold coefficients must be finite".into()));
    }
    // resolve descriptions up front so workers only read the cache
    for label in ctx.pool {
        ctx.provider.get_description(label)?;
    }

    let run = |index: usize| -> Result<EpisodeMetrics> {
        let episode = episode_at(seed, index as u64, ctx.corpus, ctx.pool, protocol.shape)?;
        let prompts = EpisodePrompts::build(&episode, ctx.corpus, ctx.templates, ctx.provider)?;
        evaluate_episode(ctx.encoder, &prompts, protocol)?.metrics()
    };

    let episodes: Vec<EpisodeMetrics> = if workers <= 1 {
        (0..protocol.episodes).map(run).collect::<Result<_>>()?
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("cannot start {workers} workers: {e}")))?;
        pool.install(|| {
            (0..protocol.episodes)
                .into_par_iter()
                .map(run)
                .collect::<Result<_>>()
        })?
    };

    Ok(aggregate(episodes, protocol.clone(), seed))
}

/// Means in episode order, so the result is independent of scheduling.
pub fn aggregate(episodes: Vec<EpisodeMetrics>, protocol: EvalProtocol, seed: u64) -> Report {
    let macro_f1 = episodes.iter().map(|e| e.f1).sum::<f64>() / episodes.len() as f64;
    let defined: Vec<f64> = episodes.iter().filter_map(|e| e.auc).collect();
    let auc = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
    Report {
        macro_f1,
        auc,
        episodes,
        protocol,
        seed,
    }
}
