//! Generated corpora where every sentence carries its classes' marker tokens.
//!
//! A class is named after its first marker word. Sentences pad their markers
//! with filler words drawn from a small shared vocabulary; with only a couple
//! of filler words the filler mix varies from sentence to sentence and
//! dominates an untrained stub encoder.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::episodes::{Corpus, Sentence, SplitSpec};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub train_classes: usize,
    pub val_classes: usize,
    pub test_classes: usize,
    pub sentences_per_class: usize,
    pub markers_per_class: usize,
    /// Marker tokens placed in each sentence, per label.
    pub markers_per_sentence: usize,
    pub filler_vocab: usize,
    pub filler_per_sentence: usize,
    /// Fraction of sentences that also carry a second class of the same split.
    pub multi_label_fraction: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            train_classes: 10,
            val_classes: 5,
            test_classes: 5,
            sentences_per_class: 30,
            markers_per_class: 1,
            markers_per_sentence: 1,
            filler_vocab: 2,
            filler_per_sentence: 60,
            multi_label_fraction: 0.0,
        }
    }
}

impl SyntheticSpec {
    pub fn class_count(&self) -> usize {
        self.train_classes + self.val_classes + self.test_classes
    }

    pub fn validate(&self) -> Result<()> {
        if self.class_count() == 0 || self.sentences_per_class == 0 {
            return Err(Error::InvalidArgument("synthetic corpus needs classes and sentences".into()));
        }
        if self.markers_per_class == 0 || self.markers_per_sentence == 0 {
            return Err(Error::InvalidArgument("every class needs marker tokens".into()));
        }
        if self.filler_per_sentence > 0 && self.filler_vocab == 0 {
            return Err(Error::InvalidArgument("filler words need a vocabulary".into()));
        }
        if !(0.0..=1.0).contains(&self.multi_label_fraction) {
            return Err(Error::InvalidArgument(format!(
                "multi_label_fraction must lie in [0, 1], got {}",
                self.multi_label_fraction
            )));
        }
        Ok(())
    }
}

fn pseudo_word(rng: &mut ChaCha8Rng, prefix: char) -> String {
    const LETTERS: &[u8] = b"bcdfghjklmnpqrstvwxz";
    let mut word = String::from(prefix);
    for _ in 0..6 {
        word.push(*LETTERS.choose(rng).expect("non-empty") as char);
    }
    word
}

/// Builds the corpus and its class split. Deterministic in `(spec, seed)`.
pub fn generate(spec: &SyntheticSpec, seed: u64) -> Result<(Corpus, SplitSpec)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let classes = spec.class_count();
    let markers: Vec<Vec<String>> = (0..classes)
        .map(|_| (0..spec.markers_per_class).map(|_| pseudo_word(&mut rng, 'm')).collect())
        .collect();
    let filler: Vec<String> = (0..spec.filler_vocab).map(|_| pseudo_word(&mut rng, 'f')).collect();

    let bounds = [
        0,
        spec.train_classes,
        spec.train_classes + spec.val_classes,
        classes,
    ];
    let part_of = |c: usize| (0..3).find(|&p| c < bounds[p + 1]).expect("class in range");

    let mut sentences = Vec::with_capacity(classes * spec.sentences_per_class);
    for c in 0..classes {
        let part = part_of(c);
        let peers = bounds[part]..bounds[part + 1];
        for s in 0..spec.sentences_per_class {
            let mut labels = vec![c];
            if peers.len() > 1 && rng.random_bool(spec.multi_label_fraction) {
                let mut other = rng.random_range(peers.clone());
                while other == c {
                    other = rng.random_range(peers.clone());
                }
                labels.push(other);
            }
            let mut words: Vec<String> = (0..spec.filler_per_sentence)
                .map(|_| filler.choose(&mut rng).expect("vocab").clone())
                .collect();
            for &l in &labels {
                for _ in 0..spec.markers_per_sentence {
                    words.push(markers[l].choose(&mut rng).expect("markers").clone());
                }
            }
            words.shuffle(&mut rng);
            labels.sort_unstable();
            sentences.push(Sentence {
                id: format!("s{c:02}_{s:03}"),
                text: words.join(" "),
                labels: labels.into_iter().map(|l| markers[l][0].clone()).collect(),
            });
        }
    }
    let names = |range: std::ops::Range<usize>| range.map(|c| markers[c][0].clone()).collect::<Vec<_>>();
    let split = SplitSpec::new(
        names(bounds[0]..bounds[1]),
        names(bounds[1]..bounds[2]),
        names(bounds[2]..bounds[3]),
    )?;
    Ok((Corpus::new(sentences)?, split))
}
