//! Glue between sampled episodes, prompts, an encoder and the model.

use std::collections::BTreeMap;

use crate::encoder::{DescriptionProvider, Encoder, StubEncoder, StubGrads};
use crate::episodes::{Corpus, Episode};
use crate::error::{Error, Result};
use crate::model::{self, EpisodeForward, EpisodeReps, RepGrads};
use crate::numerics::{mean_over_rows, Mat};
use crate::prompts::{RenderedPrompt, TemplateSet};

/// Rendered prompts for one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodePrompts {
    pub classes: Vec<String>,
    /// `support[i][k]` renders support sentence `k` of class `i` with that class as its label.
    pub support: Vec<Vec<RenderedPrompt>>,
    pub descriptions: Vec<RenderedPrompt>,
    pub description_texts: Vec<String>,
    pub queries: Vec<RenderedPrompt>,
    pub labels: Vec<Vec<bool>>,
}

impl EpisodePrompts {
    pub fn build(
        episode: &Episode,
        corpus: &Corpus,
        templates: &TemplateSet,
        provider: &DescriptionProvider,
    ) -> Result<Self> {
        let mut support = Vec::with_capacity(episode.classes.len());
        let mut descriptions = Vec::with_capacity(episode.classes.len());
        let mut description_texts = Vec::with_capacity(episode.classes.len());
        for (class, sentences) in episode.classes.iter().zip(&episode.support) {
            support.push(
                sentences
                    .iter()
                    .map(|&s| templates.render_support(&corpus.sentence(s).text, class))
                    .collect::<Result<Vec<_>>>()?,
            );
            let text = provider.get_description(class)?;
            descriptions.push(templates.render_description(&text, class)?);
            description_texts.push(text);
        }
        let queries = episode
            .queries
            .iter()
            .map(|q| templates.render_query(&corpus.sentence(q.sentence).text))
            .collect::<Result<Vec<_>>>()?;
        Ok(EpisodePrompts {
            classes: episode.classes.clone(),
            support,
            descriptions,
            description_texts,
            queries,
            labels: episode.label_rows(),
        })
    }

    pub fn iter(&self) -> impl Iterator<Item = &RenderedPrompt> + '_ {
        self.support
            .iter()
            .flatten()
            .chain(&self.descriptions)
            .chain(&self.queries)
    }
}

/// Mask-slot hidden states for every prompt of an episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeHidden {
    pub support: Vec<Vec<Mat>>,
    pub descriptions: Vec<Mat>,
    pub queries: Vec<Mat>,
}

pub fn encode_episode<E: Encoder + ?Sized>(
    encoder: &E,
    prompts: &EpisodePrompts,
) -> Result<(EpisodeHidden, EpisodeReps)> {
    let hidden = EpisodeHidden {
        support: prompts
            .support
            .iter()
            .map(|row| row.iter().map(|p| encoder.encode(p)).collect())
            .collect::<Result<_>>()?,
        descriptions: prompts
            .descriptions
            .iter()
            .map(|p| encoder.encode(p))
            .collect::<Result<_>>()?,
        queries: prompts
            .queries
            .iter()
            .map(|p| encoder.encode(p))
            .collect::<Result<_>>()?,
    };
    let reps = EpisodeReps {
        support: hidden
            .support
            .iter()
            .map(|row| {
                let pooled = row.iter().map(mean_over_rows).collect::<Result<Vec<_>>>()?;
                Mat::from_rows(&pooled)
            })
            .collect::<Result<_>>()?,
        descriptions: hidden
            .descriptions
            .iter()
            .map(mean_over_rows)
            .collect::<Result<_>>()?,
        queries: hidden
            .queries
            .iter()
            .map(mean_over_rows)
            .collect::<Result<_>>()?,
        labels: prompts.labels.clone(),
    };
    Ok((hidden, reps))
}

/// Encodes and runs the forward pass.
pub fn run_episode<E: Encoder + ?Sized>(
    encoder: &E,
    prompts: &EpisodePrompts,
    eps: f64,
) -> Result<(EpisodeReps, EpisodeForward)> {
    let (_, reps) = encode_episode(encoder, prompts)?;
    let fwd = model::forward(&reps, eps)?;
    Ok((reps, fwd))
}

/// Loss and its gradient with respect to every stub encoder parameter.
pub fn stub_loss_and_grads(
    encoder: &StubEncoder,
    prompts: &EpisodePrompts,
    eps: f64,
) -> Result<(f64, StubGrads)> {
    let (reps, fwd) = run_episode(encoder, prompts, eps)?;
    let grads = model::backward(&reps, &fwd)?;
    let stub = backprop_to_stub(encoder, prompts, &grads)?;
    Ok((fwd.loss, stub))
}

/// Chains representation gradients through mean pooling into the encoder.
pub fn backprop_to_stub(
    encoder: &StubEncoder,
    prompts: &EpisodePrompts,
    grads: &RepGrads,
) -> Result<StubGrads> {
    let m = encoder.mask_count();
    let d = encoder.dim();
    let mut out = StubGrads::zeros(m, d);
    let push = |prompt: &RenderedPrompt, g_rep: &[f64], out: &mut StubGrads| -> Result<()> {
        if g_rep.len() != d {
            return Err(Error::Shape("representation gradient width".into()));
        }
        // v = mean of the m rows, so every row receives g / m
        let mut dh = Mat::zeros(m, d);
        for j in 0..m {
            for (x, g) in dh.row_mut(j).iter_mut().zip(g_rep) {
                *x = g / m as f64;
            }
        }
        encoder.accumulate_grad(prompt, &dh, out)
    };
    for (row, g) in prompts.support.iter().zip(&grads.support) {
        for (k, prompt) in row.iter().enumerate() {
            push(prompt, g.row(k), &mut out)?;
        }
    }
    for (prompt, g) in prompts.descriptions.iter().zip(&grads.descriptions) {
        push(prompt, g, &mut out)?;
    }
    for (prompt, g) in prompts.queries.iter().zip(&grads.queries) {
        push(prompt, g, &mut out)?;
    }
    Ok(out)
}

/// Every distinct prompt an episode over `labels` could render, keyed by
/// prompt key: one query prompt per sentence carrying any of the labels, one
/// support prompt per (sentence, label) pair and one description prompt per
/// label.
pub fn required_prompts(
    corpus: &Corpus,
    labels: &[String],
    templates: &TemplateSet,
    provider: &DescriptionProvider,
) -> Result<BTreeMap<String, RenderedPrompt>> {
    let mut out = BTreeMap::new();
    let mut add = |p: RenderedPrompt| {
        out.entry(p.key.clone()).or_insert(p);
    };
    for label in labels {
        let text = provider.get_description(label)?;
        add(templates.render_description(&text, label)?);
        for &i in corpus.with_label(label) {
            let s = corpus.sentence(i);
            add(templates.render_support(&s.text, label)?);
            add(templates.render_query(&s.text)?);
        }
    }
    Ok(out)
}
