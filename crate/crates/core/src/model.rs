//! Prototype construction, query scoring, the episode loss and its exact
//! reverse-mode gradient.
//!
//! Everything here works on sentence representations (one `d`-vector per
//! prompt). For class `i` with description representation `c` and support
//! matrix `V` (`K x d`):
//!
//! ```text
//! a   = softmax((V c) / d)            attention over the K support rows
//! r   = a V                           prototype
//! w   = softmax(tanh(r) ⊙ q)          feature attention for query q
//! p   = w ⊙ q                         prototype-specific query
//! s_i = cos(r_i, p_i)
//! ŷ   = (s - mean(s)) / max(std(s), eps)
//! L_q = -(1/N) Σ_i y_i (ŷ_i - logsumexp(ŷ))
//! ```
//!
//! The episode loss is the mean of `L_q` over the query set.

use crate::encoder::{DescriptionProvider, Encoder};
use crate::error::{Error, Result};
use crate::numerics::{
    axpy, cosine, dot, logsumexp, mean, mean_over_features, mean_over_rows, norm, softmax,
    standardize, Mat,
};
use crate::prompts::{RenderedPrompt, TemplateSet};

/// Mean of the mask-slot hidden states of `prompt`.
pub fn sentence_rep<E: Encoder + ?Sized>(encoder: &E, prompt: &RenderedPrompt) -> Result<Vec<f64>> {
    let h = encoder.encode(prompt)?;
    if h.shape() != (encoder.mask_count(), encoder.dim()) {
        return Err(Error::Shape(format!(
            "encoder returned {:?}, expected {}x{}",
            h.shape(),
            encoder.mask_count(),
            encoder.dim()
        )));
    }
    mean_over_rows(&h)
}

/// Description-guided weights over the support rows: the softmax of the
/// feature-mean of `v_c ⊙ V_k` for each row `k`.
pub fn support_attention(v_c: &[f64], support: &Mat) -> Result<Vec<f64>> {
    if v_c.len() != support.cols() {
        return Err(Error::Shape(format!(
            "description rep has length {}, support rows have {}",
            v_c.len(),
            support.cols()
        )));
    }
    let mut hadamard = support.clone();
    for k in 0..hadamard.rows() {
        for (x, c) in hadamard.row_mut(k).iter_mut().zip(v_c) {
            *x *= c;
        }
    }
    softmax(&mean_over_features(&hadamard)?)
}

pub fn prototype(attention: &[f64], support: &Mat) -> Result<Vec<f64>> {
    let total: f64 = attention.iter().sum();
    if (total - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidArgument(format!(
            "attention must sum to 1, sums to {total}"
        )));
    }
    support.combine_rows(attention)
}

/// Prototype-specific query representation `softmax(tanh(r) ⊙ q) ⊙ q`.
pub fn query_attention(r: &[f64], v_q: &[f64]) -> Result<Vec<f64>> {
    Ok(feature_attention(r, v_q)?.1)
}

/// Returns the feature weights and the attended query.
fn feature_attention(r: &[f64], v_q: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    if r.len() != v_q.len() {
        return Err(Error::Shape(format!(
            "prototype has length {}, query has {}",
            r.len(),
            v_q.len()
        )));
    }
    let logits: Vec<f64> = r.iter().zip(v_q).map(|(a, q)| a.tanh() * q).collect();
    let w = softmax(&logits)?;
    let attended = w.iter().zip(v_q).map(|(a, q)| a * q).collect();
    Ok((w, attended))
}

/// Category with its description, support set, attention and prototype.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassBundle {
    pub label: String,
    pub description: String,
    pub v_c: Vec<f64>,
    pub support: Mat,
    pub attention: Vec<f64>,
    pub prototype: Vec<f64>,
}

/// Builds the prototype of `label` from its support representations. The
/// description is encoded with the support template, labelled with the
/// category itself.
pub fn class_bundle<E: Encoder + ?Sized>(
    encoder: &E,
    provider: &DescriptionProvider,
    templates: &TemplateSet,
    label: &str,
    support: Mat,
) -> Result<ClassBundle> {
    if support.rows() == 0 {
        return Err(Error::InvalidArgument(format!(
            "class {label} has an empty support set"
        )));
    }
    let description = provider.get_description(label)?;
    let prompt = templates.render_description(&description, label)?;
    let v_c = sentence_rep(encoder, &prompt)?;
    let attention = support_attention(&v_c, &support)?;
    let prototype = prototype(&attention, &support)?;
    Ok(ClassBundle {
        label: label.to_string(),
        description,
        v_c,
        support,
        attention,
        prototype,
    })
}

/// Scores of one query against every prototype.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryScore {
    /// Prototype-specific query representation per class.
    pub attended: Vec<Vec<f64>>,
    /// Feature weights used to build `attended`.
    pub weights: Vec<Vec<f64>>,
    pub raw_cos: Vec<f64>,
    pub mu: f64,
    pub sigma: f64,
    pub y_hat: Vec<f64>,
}

pub fn score_query<P: AsRef<[f64]>>(prototypes: &[P], v_q: &[f64], eps: f64) -> Result<QueryScore> {
    if prototypes.is_empty() {
        return Err(Error::InvalidArgument("no prototypes to score against".into()));
    }
    let mut attended = Vec::with_capacity(prototypes.len());
    let mut weights = Vec::with_capacity(prototypes.len());
    let mut raw_cos = Vec::with_capacity(prototypes.len());
    for (i, r) in prototypes.iter().enumerate() {
        let r = r.as_ref();
        let (w, p) = feature_attention(r, v_q)?;
        let cos = cosine(r, &p).map_err(|e| match e {
            Error::Degenerate(msg) => Error::Degenerate(format!("class {i}: {msg}")),
            other => other,
        })?;
        raw_cos.push(cos);
        weights.push(w);
        attended.push(p);
    }
    let z = standardize(&raw_cos, eps)?;
    Ok(QueryScore {
        attended,
        weights,
        raw_cos,
        mu: z.mean,
        sigma: z.std,
        y_hat: z.values,
    })
}

/// Scores `v_q` against the prototypes of `bundles`.
pub fn episode_scores(bundles: &[ClassBundle], v_q: &[f64], eps: f64) -> Result<QueryScore> {
    let prototypes: Vec<&[f64]> = bundles.iter().map(|b| b.prototype.as_slice()).collect();
    score_query(&prototypes, v_q, eps)
}

/// Loss of a single query.
pub fn query_loss(y_hat: &[f64], labels: &[bool]) -> Result<f64> {
    if y_hat.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} scores for {} labels",
            y_hat.len(),
            labels.len()
        )));
    }
    let lse = logsumexp(y_hat)?;
    let n = y_hat.len() as f64;
    let total: f64 = y_hat
        .iter()
        .zip(labels)
        .filter(|(_, &y)| y)
        .map(|(s, _)| s - lse)
        .sum();
    Ok(-total / n)
}

/// Mean query loss over the query set.
pub fn episode_loss<S: AsRef<[f64]>, L: AsRef<[bool]>>(scores: &[S], labels: &[L]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} score vectors for {} label vectors",
            scores.len(),
            labels.len()
        )));
    }
    if scores.is_empty() {
        return Err(Error::InvalidArgument("episode has no queries".into()));
    }
    let mut total = 0.0;
    for (s, y) in scores.iter().zip(labels) {
        total += query_loss(s.as_ref(), y.as_ref())?;
    }
    Ok(total / scores.len() as f64)
}

/// Representations of every prompt in an episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeReps {
    /// One `K x d` matrix per class.
    pub support: Vec<Mat>,
    /// One description representation per class.
    pub descriptions: Vec<Vec<f64>>,
    pub queries: Vec<Vec<f64>>,
    /// Restricted label vector per query.
    pub labels: Vec<Vec<bool>>,
}

impl EpisodeReps {
    pub fn n_way(&self) -> usize {
        self.support.len()
    }

    pub fn dim(&self) -> usize {
        self.descriptions.first().map_or(0, Vec::len)
    }

    fn validate(&self) -> Result<()> {
        let n = self.support.len();
        if n == 0 {
            return Err(Error::InvalidArgument("episode has no classes".into()));
        }
        if self.descriptions.len() != n {
            return Err(Error::Shape(format!(
                "{} description reps for {n} classes",
                self.descriptions.len()
            )));
        }
        let d = self.dim();
        if d == 0 {
            return Err(Error::Shape("representations have zero width".into()));
        }
        for (i, v) in self.support.iter().enumerate() {
            if v.cols() != d || v.rows() == 0 {
                return Err(Error::Shape(format!(
                    "support matrix {i} is {}x{}, expected Kx{d}",
                    v.rows(),
                    v.cols()
                )));
            }
        }
        if self.descriptions.iter().chain(&self.queries).any(|v| v.len() != d) {
            return Err(Error::Shape(format!("all representations must have length {d}")));
        }
        if self.labels.len() != self.queries.len() || self.labels.iter().any(|y| y.len() != n) {
            return Err(Error::Shape(format!(
                "need one length-{n} label vector per query"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prototype {
    pub attention: Vec<f64>,
    pub vector: Vec<f64>,
}

/// Everything the backward pass needs from the forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeForward {
    pub prototypes: Vec<Prototype>,
    pub scores: Vec<QueryScore>,
    pub loss: f64,
    pub eps: f64,
}

pub fn forward(reps: &EpisodeReps, eps: f64) -> Result<EpisodeForward> {
    reps.validate()?;
    let mut prototypes = Vec::with_capacity(reps.n_way());
    for (v_c, support) in reps.descriptions.iter().zip(&reps.support) {
        let attention = support_attention(v_c, support)?;
        let vector = prototype(&attention, support)?;
        prototypes.push(Prototype { attention, vector });
    }
    let vectors: Vec<&[f64]> = prototypes.iter().map(|p| p.vector.as_slice()).collect();
    let scores = reps
        .queries
        .iter()
        .map(|q| score_query(&vectors, q, eps))
        .collect::<Result<Vec<_>>>()?;
    let y_hats: Vec<&[f64]> = scores.iter().map(|s| s.y_hat.as_slice()).collect();
    let loss = episode_loss(&y_hats, &reps.labels)?;
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("episode loss is {loss}")));
    }
    Ok(EpisodeForward {
        prototypes,
        scores,
        loss,
        eps,
    })
}

/// Gradients of the episode loss with respect to every representation.
#[derive(Debug, Clone, PartialEq)]
pub struct RepGrads {
    pub support: Vec<Mat>,
    pub descriptions: Vec<Vec<f64>>,
    pub queries: Vec<Vec<f64>>,
}

impl RepGrads {
    pub fn max_abs(&self) -> f64 {
        self.support
            .iter()
            .flat_map(|m| m.as_slice().iter())
            .chain(self.descriptions.iter().flatten())
            .chain(self.queries.iter().flatten())
            .fold(0.0, |acc, v| acc.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.support.iter().all(Mat::is_finite)
            && self
                .descriptions
                .iter()
                .chain(&self.queries)
                .flatten()
                .all(|v| v.is_finite())
    }
}

/// Exact reverse pass of [`forward`].
pub fn backward(reps: &EpisodeReps, fwd: &EpisodeForward) -> Result<RepGrads> {
    reps.validate()?;
    let n = reps.n_way();
    let d = reps.dim();
    if fwd.prototypes.len() != n || fwd.scores.len() != reps.queries.len() {
        return Err(Error::Shape("forward record does not match the episode".into()));
    }
    let q_count = reps.queries.len() as f64;

    let mut g_support: Vec<Mat> = reps.support.iter().map(|m| Mat::zeros(m.rows(), d)).collect();
    let mut g_desc = vec![vec![0.0; d]; n];
    let mut g_query = vec![vec![0.0; d]; reps.queries.len()];
    let mut g_proto = vec![vec![0.0; d]; n];

    for (qi, (score, labels)) in fwd.scores.iter().zip(&reps.labels).enumerate() {
        let v_q = &reps.queries[qi];

        // loss -> standardized scores
        let positives = labels.iter().filter(|&&y| y).count() as f64;
        if positives == 0.0 {
            continue;
        }
        let probs = softmax(&score.y_hat)?;
        let g_y: Vec<f64> = labels
            .iter()
            .zip(&probs)
            .map(|(&y, p)| -(f64::from(u8::from(y)) - positives * p) / (n as f64 * q_count))
            .collect();

        // standardized scores -> raw cosines
        let g_mean = mean(&g_y);
        let g_cos: Vec<f64> = if score.sigma > fwd.eps {
            let g_dot_y = mean(
                &g_y.iter().zip(&score.y_hat).map(|(g, y)| g * y).collect::<Vec<_>>(),
            );
            g_y.iter()
                .zip(&score.y_hat)
                .map(|(g, y)| (g - g_mean - y * g_dot_y) / score.sigma)
                .collect()
        } else {
            g_y.iter().map(|g| (g - g_mean) / fwd.eps).collect()
        };

        for i in 0..n {
            let r = &fwd.prototypes[i].vector;
            let p = &score.attended[i];
            let w = &score.weights[i];
            let cos = score.raw_cos[i];
            let (nr, np) = (norm(r), norm(p));
            if nr == 0.0 || np == 0.0 {
                return Err(Error::Degenerate(format!("class {i}: zero-norm vector")));
            }
            let gc = g_cos[i];

            // cosine -> prototype and attended query
            let mut g_p = vec![0.0; d];
            for j in 0..d {
                g_proto[i][j] += gc * (p[j] / (nr * np) - cos * r[j] / (nr * nr));
                g_p[j] = gc * (r[j] / (nr * np) - cos * p[j] / (np * np));
            }

            // p = w ⊙ q
            let g_w: Vec<f64> = g_p.iter().zip(v_q).map(|(g, q)| g * q).collect();
            for j in 0..d {
                g_query[qi][j] += g_p[j] * w[j];
            }

            // w = softmax(z), z = tanh(r) ⊙ q
            let wg = dot(w, &g_w);
            for j in 0..d {
                let g_z = w[j] * (g_w[j] - wg);
                let t = r[j].tanh();
                g_query[qi][j] += g_z * t;
                g_proto[i][j] += g_z * v_q[j] * (1.0 - t * t);
            }
        }
    }

    // prototypes -> attention and support rows -> description reps
    let inv_d = 1.0 / d as f64;
    for i in 0..n {
        let support = &reps.support[i];
        let a = &fwd.prototypes[i].attention;
        let g_r = &g_proto[i];
        let g_a: Vec<f64> = support.iter_rows().map(|row| dot(g_r, row)).collect();
        for (k, &ak) in a.iter().enumerate() {
            axpy(ak, g_r, g_support[i].row_mut(k));
        }
        let ag = dot(a, &g_a);
        for (k, row) in support.iter_rows().enumerate() {
            let g_score = a[k] * (g_a[k] - ag) * inv_d;
            axpy(g_score, row, &mut g_desc[i]);
            axpy(g_score, &reps.descriptions[i], g_support[i].row_mut(k));
        }
    }

    let grads = RepGrads {
        support: g_support,
        descriptions: g_desc,
        queries: g_query,
    };
    if !grads.is_finite() {
        return Err(Error::NonFinite("representation gradient".into()));
    }
    Ok(grads)
}
