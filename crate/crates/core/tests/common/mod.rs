#![allow(dead_code)]

pub mod oracles;

use lgp::encoder::DescriptionProvider;
use lgp::episodes::{Corpus, SplitSpec};
use lgp::prompts::TemplateSet;
use lgp::synthetic::{generate, SyntheticSpec};
use lgp::trainer::TrainInputs;

pub struct Fixture {
    pub corpus: Corpus,
    pub split: SplitSpec,
    pub templates: TemplateSet,
    pub provider: DescriptionProvider,
}

impl Fixture {
    pub fn synthetic(seed: u64) -> Self {
        Fixture::with_spec(&SyntheticSpec::default(), seed)
    }

    pub fn with_spec(spec: &SyntheticSpec, seed: u64) -> Self {
        let (corpus, split) = generate(spec, seed).unwrap();
        let templates = TemplateSet::default();
        let provider = DescriptionProvider::offline(templates.clone());
        Fixture {
            corpus,
            split,
            templates,
            provider,
        }
    }

    pub fn inputs(&self) -> TrainInputs<'_> {
        TrainInputs {
            corpus: &self.corpus,
            split: &self.split,
            templates: &self.templates,
            provider: &self.provider,
        }
    }
}
