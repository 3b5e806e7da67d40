use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{anyhow, Context};
use lgp::encoder::{DescriptionMode, DescriptionProvider, EmbeddingStore, Encoder, StubEncoder};
use lgp::episodes::{episode_at, Corpus, SplitPart, SplitSpec};
use lgp::eval::{evaluate, EvalContext};
use lgp::gradcheck::{self, GradcheckConfig};
use lgp::model;
use lgp::pipeline::{encode_episode, required_prompts, EpisodePrompts};
use lgp::prompts::TemplateSet;
use lgp::synthetic::{self, SyntheticSpec};
use lgp::trainer::{Checkpoint, TrainInputs, Trainer};
use serde::Serialize;

use crate::config::{EncoderKind, RunConfig};
use crate::{Failure, Outcome, ValidationContext};

/// Corpus, split, templates and a description provider primed from the cache.
struct Data {
    corpus: Corpus,
    split: SplitSpec,
    templates: TemplateSet,
    provider: DescriptionProvider,
}

fn load_data(config: &RunConfig) -> Outcome<Data> {
    let (corpus_path, split_path) = config.data_paths().invalid()?;
    let corpus = Corpus::load(corpus_path).map_err(Failure::from)?;
    let split = SplitSpec::load(split_path).map_err(Failure::from)?;
    split
        .check_against(&corpus)
        .map_err(|e| Failure::Validation(anyhow!(e)))?;
    let templates = config.templates().invalid()?;
    let mode = match &config.remote {
        Some(remote) => DescriptionMode::Remote(remote.clone()),
        None => DescriptionMode::Offline,
    };
    let provider = DescriptionProvider::new(mode, templates.clone());
    provider.load_cache(config.description_cache()).map_err(Failure::from)?;
    Ok(Data {
        corpus,
        split,
        templates,
        provider,
    })
}

fn ensure_out(config: &RunConfig) -> Outcome {
    fs::create_dir_all(&config.out)
        .with_context(|| format!("creating {}", config.out.display()))
        .runtime()
}

fn save_cache(config: &RunConfig, provider: &DescriptionProvider) -> Outcome {
    let path = config.description_cache();
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)
            .with_context(|| format!("creating {}", parent.display()))
            .runtime()?;
    }
    provider.save_cache(&path).map_err(Failure::from)
}

pub fn describe(config: &RunConfig, part: Option<SplitPart>) -> Outcome {
    let data = load_data(config)?;
    let parts = match part {
        Some(p) => vec![p],
        None => vec![SplitPart::Train, SplitPart::Val, SplitPart::Test],
    };
    let mut failures = Vec::new();
    let (mut cached, mut resolved) = (0, 0);
    for part in parts {
        for label in data.split.part(part) {
            if data.provider.cached(label).is_some() {
                cached += 1;
                continue;
            }
            match data.provider.get_description(label) {
                Ok(_) => resolved += 1,
                Err(e) => {
                    eprintln!("{label}: {e}");
                    failures.push(e);
                }
            }
        }
    }
    save_cache(config, &data.provider)?;
    println!(
        "{cached} cached, {resolved} resolved ({} remote requests), {} failed; wrote {}",
        data.provider.remote_requests(),
        failures.len(),
        config.description_cache().display()
    );
    match failures.into_iter().next() {
        None => Ok(()),
        Some(first) => Err(Failure::from(first)),
    }
}

pub fn train(config: &RunConfig, resume: Option<&Path>, epochs: Option<usize>) -> Outcome {
    let data = load_data(config)?;
    let inputs = TrainInputs {
        corpus: &data.corpus,
        split: &data.split,
        templates: &data.templates,
        provider: &data.provider,
    };
    let mut trainer = match resume {
        Some(path) => {
            let mut ckpt = Checkpoint::load(path).map_err(|e| Failure::Validation(anyhow!(e)))?;
            if let Some(epochs) = epochs {
                ckpt.config.epochs = epochs;
            }
            Trainer::resume(inputs, ckpt)
        }
        None => Trainer::new(inputs, config.train_config(), config.seed),
    }
    .map_err(|e| match e {
        lgp::Error::Sampling { .. } | lgp::Error::Format(_) => Failure::Validation(anyhow!(e)),
        e => Failure::from(e),
    })?;

    ensure_out(config)?;
    let log_path = config.out.join("train_log.jsonl");
    let mut log = BufWriter::new(
        File::create(&log_path)
            .with_context(|| format!("creating {}", log_path.display()))
            .runtime()?,
    );
    let mut log_err = None;
    let outcome = trainer
        .run(config.workers, |epoch| {
            let val = epoch.val_f1.map_or("-".to_string(), |f| format!("{:.2}", 100.0 * f));
            eprintln!("epoch {} loss {:.5} val F1 {}", epoch.epoch, epoch.mean_loss, val);
            let line = serde_json::to_string(epoch).map_err(anyhow::Error::from);
            if let Err(e) = line.and_then(|l| writeln!(log, "{l}").map_err(anyhow::Error::from)) {
                log_err.get_or_insert(e);
            }
        })
        .map_err(Failure::from)?;
    if let Some(e) = log_err {
        return Err(Failure::Runtime(e.context(format!("writing {}", log_path.display()))));
    }
    log.flush().runtime()?;

    outcome
        .best
        .save(config.out.join("checkpoint.json"))
        .map_err(Failure::from)?;
    outcome
        .last
        .save(config.out.join("checkpoint_last.json"))
        .map_err(Failure::from)?;
    save_cache(config, &data.provider)?;
    let best = outcome.best.val_f1.map_or("-".to_string(), |f| format!("{:.2}", 100.0 * f));
    println!(
        "best epoch {} val F1 {}; wrote {}",
        outcome.best.epoch,
        best,
        config.out.join("checkpoint.json").display()
    );
    Ok(())
}

/// The encoder selected by the config, checked against the templates.
fn build_encoder(config: &RunConfig, data: &Data) -> Outcome<Box<dyn Encoder>> {
    let m = data.templates.mask_count;
    let encoder: Box<dyn Encoder> = match config.encoder {
        EncoderKind::Stub => match &config.checkpoint {
            Some(path) => {
                let ckpt = Checkpoint::load(path).map_err(|e| Failure::Validation(anyhow!(e)))?;
                if ckpt.m() != m {
                    return Err(Failure::Validation(anyhow!(
                        "checkpoint {} has m = {}, templates use m = {}",
                        path.display(),
                        ckpt.m(),
                        m
                    )));
                }
                Box::new(ckpt.encoder)
            }
            None => Box::new(StubEncoder::new(config.d, m, config.seed, config.token_state).map_err(Failure::from)?),
        },
        EncoderKind::Store => {
            let path = config
                .store
                .as_deref()
                .ok_or_else(|| Failure::Validation(anyhow!("encoder = store needs --store")))?;
            let store = EmbeddingStore::load(path).map_err(Failure::from)?;
            if store.header().m != m {
                return Err(Failure::Validation(anyhow!(
                    "store {} has m = {}, templates use m = {}",
                    path.display(),
                    store.header().m,
                    m
                )));
            }
            let pool = data.split.part(config.eval_split);
            let needed = required_prompts(&data.corpus, pool, &data.templates, &data.provider).map_err(Failure::from)?;
            let missing: Vec<&String> = needed.keys().filter(|k| !store.contains(k)).collect();
            if !missing.is_empty() {
                let shown: Vec<&str> = missing.iter().take(10).map(|k| k.as_str()).collect();
                return Err(Failure::Runtime(anyhow!(
                    "store {} lacks {} of {} prompt keys, e.g. {}",
                    path.display(),
                    missing.len(),
                    needed.len(),
                    shown.join(", ")
                )));
            }
            Box::new(store)
        }
    };
    Ok(encoder)
}

/// The evaluation part of the split, which must hold at least N classes.
fn eval_pool<'d>(config: &RunConfig, data: &'d Data) -> Outcome<&'d [String]> {
    let pool = data.split.part(config.eval_split);
    if pool.len() < config.n_way {
        return Err(Failure::Validation(anyhow!(
            "{} split has {} classes, fewer than N = {}",
            config.eval_split,
            pool.len(),
            config.n_way
        )));
    }
    Ok(pool)
}

pub fn eval(config: &RunConfig) -> Outcome {
    let data = load_data(config)?;
    let pool = eval_pool(config, &data)?;
    let encoder = build_encoder(config, &data)?;
    let ctx = EvalContext {
        encoder: encoder.as_ref(),
        provider: &data.provider,
        templates: &data.templates,
        corpus: &data.corpus,
        pool,
    };
    let report = evaluate(&ctx, &config.eval_protocol(), config.seed, config.workers).map_err(Failure::from)?;
    ensure_out(config)?;
    let path = config.out.join("report.json");
    fs::write(&path, report.to_json().map_err(Failure::from)?)
        .with_context(|| format!("writing {}", path.display()))
        .runtime()?;
    save_cache(config, &data.provider)?;
    let auc = report.auc.map_or("n/a".to_string(), |a| format!("{:.2}", 100.0 * a));
    println!("F1 {:.2} AUC {}", 100.0 * report.macro_f1, auc);
    Ok(())
}

pub fn gradcheck(cfg: &GradcheckConfig, seed: u64) -> Outcome {
    if cfg.n_way == 1 {
        println!("N = 1: every standardized score is zero, nothing to check; skipped");
    }
    let report = gradcheck::run(cfg, seed).map_err(Failure::from)?;
    let verdict = if report.passed() { "PASS" } else { "FAIL" };
    println!(
        "{} episodes, {} coordinates, max rel err {:.3e}",
        report.episodes, report.coordinates, report.max_rel_err
    );
    println!("max rel err ≤ {:e}: {verdict}", report.tolerance);
    if report.passed() {
        Ok(())
    } else {
        Err(Failure::Runtime(anyhow!(
            "gradient check failed: {:.3e} > {:e}",
            report.max_rel_err,
            report.tolerance
        )))
    }
}

#[derive(Serialize)]
struct PrototypeLine<'a> {
    episode: usize,
    label: &'a str,
    r: Vec<f32>,
}

pub fn export_prototypes(config: &RunConfig, min_episodes: usize) -> Outcome {
    let data = load_data(config)?;
    let pool = eval_pool(config, &data)?;
    let encoder = build_encoder(config, &data)?;
    let shape = config.shape();
    // keep sampling until every pool class has a prototype, within a bound
    let limit = min_episodes.max(1) + 100 * pool.len();
    ensure_out(config)?;
    let path = config.out.join("prototypes.jsonl");
    let mut out = BufWriter::new(
        File::create(&path)
            .with_context(|| format!("creating {}", path.display()))
            .runtime()?,
    );
    let mut seen = BTreeSet::new();
    let mut index = 0;
    while index < min_episodes || seen.len() < pool.len() {
        if index >= limit {
            return Err(Failure::Runtime(anyhow!(
                "{} of {} classes never sampled in {} episodes",
                pool.len() - seen.len(),
                pool.len(),
                limit
            )));
        }
        let episode = episode_at(config.seed, index as u64, &data.corpus, pool, shape).map_err(Failure::from)?;
        let prompts = EpisodePrompts::build(&episode, &data.corpus, &data.templates, &data.provider).map_err(Failure::from)?;
        let (_, reps) = encode_episode(encoder.as_ref(), &prompts).map_err(Failure::from)?;
        let fwd = model::forward(&reps, config.std_eps).map_err(Failure::from)?;
        for (label, proto) in prompts.classes.iter().zip(&fwd.prototypes) {
            seen.insert(label.clone());
            let line = PrototypeLine {
                episode: index,
                label,
                r: proto.vector.iter().map(|&x| x as f32).collect(),
            };
            serde_json::to_writer(&mut out, &line).runtime()?;
            out.write_all(b"\n").runtime()?;
        }
        index += 1;
    }
    out.flush().runtime()?;
    save_cache(config, &data.provider)?;
    println!("{} episodes, {} classes; wrote {}", index, seen.len(), path.display());
    Ok(())
}

pub fn synth(config: &RunConfig, spec_path: Option<&Path>) -> Outcome {
    let spec = match spec_path {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))
                .invalid()?;
            serde_json::from_str::<SyntheticSpec>(&text)
                .with_context(|| format!("parsing {}", path.display()))
                .invalid()?
        }
        None => SyntheticSpec::default(),
    };
    spec.validate().map_err(|e| Failure::Validation(anyhow!(e)))?;
    let (corpus, split) = synthetic::generate(&spec, config.seed).map_err(Failure::from)?;
    ensure_out(config)?;
    corpus.save(config.out.join("corpus.jsonl")).map_err(Failure::from)?;
    split.save(config.out.join("split.json")).map_err(Failure::from)?;
    println!(
        "{} sentences, {} classes; wrote {}",
        corpus.len(),
        corpus.label_count(),
        config.out.display()
    );
    Ok(())
}
