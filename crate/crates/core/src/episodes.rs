//! Corpus loading, class splits and N-way K-shot multi-label episode sampling.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::str::FromStr;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Training tasks sampled per epoch.
pub const TRAIN_TASKS_PER_EPOCH: usize = 800;
/// Evaluation tasks sampled from the test classes.
pub const EVAL_TASKS: usize = 600;
/// Query sentences required per class in every task.
pub const QUERIES_PER_CLASS: usize = 5;
pub const WAYS: [usize; 2] = [5, 10];
pub const SHOTS: [usize; 4] = [2, 3, 5, 10];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sentence {
    pub id: String,
    pub text: String,
    pub labels: Vec<String>,
}

impl Sentence {
    pub fn has_label(&self, label: &str) -> bool {
        self.labels.iter().any(|l| l == label)
    }
}

/// Immutable set of labelled sentences with a label index.
#[derive(Debug, Clone)]
pub struct Corpus {
    sentences: Vec<Sentence>,
    by_label: BTreeMap<String, Vec<usize>>,
}

impl Corpus {
    pub fn new(sentences: Vec<Sentence>) -> Result<Self> {
        let mut ids = HashSet::with_capacity(sentences.len());
        let mut by_label: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, s) in sentences.iter().enumerate() {
            if !ids.insert(s.id.as_str()) {
                return Err(Error::Validation(format!("duplicate sentence id {:?}", s.id)));
            }
            if s.labels.is_empty() {
                return Err(Error::Validation(format!("sentence {:?} has no labels", s.id)));
            }
            let unique: BTreeSet<&String> = s.labels.iter().collect();
            for label in unique {
                by_label.entry(label.clone()).or_default().push(i);
            }
        }
        Ok(Corpus { sentences, by_label })
    }

    /// Reads a JSON Lines corpus, one sentence per line.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut sentences = Vec::new();
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let s: Sentence = serde_json::from_str(&line).map_err(|e| Error::Parse {
                path: path.into(),
                line: n + 1,
                message: e.to_string(),
            })?;
            sentences.push(s);
        }
        Corpus::new(sentences)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        use std::io::Write;
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = std::io::BufWriter::new(file);
        for s in &self.sentences {
            serde_json::to_writer(&mut out, s)?;
            out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
        out.flush().map_err(|e| Error::io(path, e))
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn sentences(&self) -> &[Sentence] {
        &self.sentences
    }

    pub fn sentence(&self, index: usize) -> &Sentence {
        &self.sentences[index]
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> + '_ {
        self.by_label.keys().map(String::as_str)
    }

    pub fn label_count(&self) -> usize {
        self.by_label.len()
    }

    /// Indices of sentences carrying `label`, in corpus order.
    pub fn with_label(&self, label: &str) -> &[usize] {
        self.by_label.get(label).map_or(&[], Vec::as_slice)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitPart {
    Train,
    Val,
    Test,
}

impl fmt::Display for SplitPart {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitPart::Train => "train",
            SplitPart::Val => "val",
            SplitPart::Test => "test",
        })
    }
}

impl FromStr for SplitPart {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitPart::Train),
            "val" => Ok(SplitPart::Val),
            "test" => Ok(SplitPart::Test),
            other => Err(Error::InvalidArgument(format!("unknown split part {other:?}"))),
        }
    }
}

/// Disjoint train/val/test class lists.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl SplitSpec {
    pub fn new(train: Vec<String>, val: Vec<String>, test: Vec<String>) -> Result<Self> {
        let split = SplitSpec { train, val, test };
        split.validate()?;
        Ok(split)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let split: SplitSpec = serde_json::from_str(&text)?;
        split.validate()?;
        Ok(split)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen: BTreeMap<&str, SplitPart> = BTreeMap::new();
        for part in [SplitPart::Train, SplitPart::Val, SplitPart::Test] {
            for label in self.part(part) {
                if let Some(prev) = seen.insert(label, part) {
                    return Err(Error::Validation(format!(
                        "label {label:?} appears in both {prev} and {part}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn part(&self, part: SplitPart) -> &[String] {
        match part {
            SplitPart::Train => &self.train,
            SplitPart::Val => &self.val,
            SplitPart::Test => &self.test,
        }
    }

    /// Fails if any split label has no sentences in `corpus`.
    pub fn check_against(&self, corpus: &Corpus) -> Result<()> {
        for part in [SplitPart::Train, SplitPart::Val, SplitPart::Test] {
            for label in self.part(part) {
                if corpus.with_label(label).is_empty() {
                    return Err(Error::Validation(format!(
                        "{part} label {label:?} has no sentences in the corpus"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Episode shape: N classes, K support sentences each, Q query quota each.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeShape {
    pub n_way: usize,
    pub k_shot: usize,
    pub queries_per_class: usize,
}

impl Default for EpisodeShape {
    fn default() -> Self {
        EpisodeShape {
            n_way: 5,
            k_shot: 5,
            queries_per_class: QUERIES_PER_CLASS,
        }
    }
}

impl EpisodeShape {
    pub fn new(n_way: usize, k_shot: usize, queries_per_class: usize) -> Result<Self> {
        let shape = EpisodeShape {
            n_way,
            k_shot,
            queries_per_class,
        };
        shape.validate()?;
        Ok(shape)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_way == 0 || self.k_shot == 0 || self.queries_per_class == 0 {
            return Err(Error::Validation(format!(
                "episode shape needs N, K, Q >= 1, got N={}, K={}, Q={}",
                self.n_way, self.k_shot, self.queries_per_class
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    /// Corpus index of the query sentence.
    pub sentence: usize,
    /// Bit `i` is set iff the sentence carries `classes[i]`.
    pub labels: Vec<bool>,
}

/// One N-way K-shot task. Sentences are referenced by corpus index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Episode {
    pub classes: Vec<String>,
    /// `support[i]` holds the K sentences sampled for `classes[i]`.
    pub support: Vec<Vec<usize>>,
    pub queries: Vec<Query>,
}

impl Episode {
    pub fn n_way(&self) -> usize {
        self.classes.len()
    }

    pub fn k_shot(&self) -> usize {
        self.support.first().map_or(0, Vec::len)
    }

    pub fn label_rows(&self) -> Vec<Vec<bool>> {
        self.queries.iter().map(|q| q.labels.clone()).collect()
    }
}

/// Draws one episode from the classes in `pool`.
///
/// Classes, support sentences and query sentences are all drawn uniformly
/// without replacement. A query sentence carrying several episode classes is
/// kept once and counts toward every such class's quota; support sentences
/// are never reused as queries.
pub fn sample_episode<R: rand::Rng + ?Sized>(
    rng: &mut R,
    corpus: &Corpus,
    pool: &[String],
    shape: EpisodeShape,
) -> Result<Episode> {
    shape.validate()?;
    let EpisodeShape {
        n_way: n,
        k_shot: k,
        queries_per_class: q,
    } = shape;
    if pool.len() < n {
        return Err(Error::Sampling {
            class: pool.first().cloned().unwrap_or_default(),
            message: format!("split has {} classes, episode needs {n}", pool.len()),
        });
    }
    let classes: Vec<String> = index::sample(rng, pool.len(), n)
        .into_iter()
        .map(|i| pool[i].clone())
        .collect();
    for label in &classes {
        let have = corpus.with_label(label).len();
        if have < k + q {
            return Err(Error::Sampling {
                class: label.clone(),
                message: format!("has {have} sentences, episode needs K+Q = {}", k + q),
            });
        }
    }

    let mut used: HashSet<usize> = HashSet::new();
    let mut support = Vec::with_capacity(n);
    for class in &classes {
        let available: Vec<usize> = corpus
            .with_label(class)
            .iter()
            .copied()
            .filter(|i| !used.contains(i))
            .collect();
        if available.len() < k {
            return Err(Error::Sampling {
                class: class.clone(),
                message: format!(
                    "only {} sentences left after earlier classes' support, need {k}",
                    available.len()
                ),
            });
        }
        let picked: Vec<usize> = index::sample(rng, available.len(), k)
            .into_iter()
            .map(|i| available[i])
            .collect();
        used.extend(&picked);
        support.push(picked);
    }

    let restricted = |sentence: usize| -> Vec<bool> {
        let s = corpus.sentence(sentence);
        classes.iter().map(|c| s.has_label(c)).collect()
    };

    let mut queries: Vec<Query> = Vec::new();
    let mut quota = vec![0usize; n];
    for (ci, class) in classes.iter().enumerate() {
        if quota[ci] >= q {
            continue;
        }
        let mut candidates: Vec<usize> = corpus
            .with_label(class)
            .iter()
            .copied()
            .filter(|i| !used.contains(i))
            .collect();
        candidates.shuffle(rng);
        for sentence in candidates {
            if quota[ci] >= q {
                break;
            }
            let labels = restricted(sentence);
            for (slot, &bit) in quota.iter_mut().zip(&labels) {
                *slot += usize::from(bit);
            }
            used.insert(sentence);
            queries.push(Query { sentence, labels });
        }
        if quota[ci] < q {
            return Err(Error::Sampling {
                class: class.clone(),
                message: format!("ran out of query sentences ({} of {q})", quota[ci]),
            });
        }
    }

    Ok(Episode {
        classes,
        support,
        queries,
    })
}

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of episode `index` in the stream started from `seed`.
pub fn episode_seed(seed: u64, index: u64) -> u64 {
    mix64(seed ^ mix64(index))
}

/// Episode `index` of the stream `(seed, corpus, pool, shape)`, sampled
/// independently of every other index.
pub fn episode_at(
    seed: u64,
    index: u64,
    corpus: &Corpus,
    pool: &[String],
    shape: EpisodeShape,
) -> Result<Episode> {
    let mut rng = ChaCha8Rng::seed_from_u64(episode_seed(seed, index));
    sample_episode(&mut rng, corpus, pool, shape)
}

/// The first `count` episodes of the stream started from `seed`.
pub fn episode_stream<'a>(
    seed: u64,
    corpus: &'a Corpus,
    pool: &'a [String],
    shape: EpisodeShape,
    count: usize,
) -> impl Iterator<Item = Result<Episode>> + 'a {
    (0..count as u64).map(move |i| episode_at(seed, i, corpus, pool, shape))
}
