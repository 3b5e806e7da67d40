mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lgp::encoder::TokenState;
use lgp::episodes::SplitPart;
use lgp::inference::Fallback;

use config::{EncoderKind, RunConfig};

#[derive(Parser)]
#[command(name = "lgp", version, about = "Label-guided prompts for few-shot aspect category detection")]
struct Cli {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Episode-level parallelism for evaluation.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Resolve a description for every label of the split and write the cache.
    Describe {
        #[command(flatten)]
        data: DataArgs,
        /// Only this part of the split; all parts by default.
        #[arg(long)]
        part: Option<SplitPart>,
    },
    /// Train the stub encoder episodically and write checkpoints.
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        protocol: ProtocolArgs,
        #[arg(long)]
        epochs: Option<usize>,
        /// Training episodes per epoch.
        #[arg(long)]
        tasks_per_epoch: Option<usize>,
        /// Validation episodes per epoch.
        #[arg(long)]
        val_tasks: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        weight_decay: Option<f64>,
        /// Continue the run stored in a checkpoint, under its own config;
        /// only --epochs is taken from the command line.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate on sampled episodes and write a report.
    Eval {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        protocol: ProtocolArgs,
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long)]
        part: Option<SplitPart>,
    },
    /// Compare analytic gradients with central finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 5)]
        n_way: usize,
        #[arg(long, default_value_t = 5)]
        k_shot: usize,
        #[arg(long, default_value_t = 5)]
        queries_per_class: usize,
        #[arg(long, default_value_t = 16)]
        d: usize,
        #[arg(long, default_value_t = 3)]
        m: usize,
        #[arg(long, default_value_t = 100)]
        episodes: usize,
    },
    /// Write class prototypes of sampled episodes as JSON Lines.
    ExportPrototypes {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        protocol: ProtocolArgs,
        /// Minimum number of episodes to sample.
        #[arg(long, default_value_t = 20)]
        episodes: usize,
        #[arg(long)]
        part: Option<SplitPart>,
    },
    /// Generate a synthetic marker-token corpus and its split.
    Synth {
        /// JSON synthetic-corpus spec; defaults otherwise.
        #[arg(long)]
        spec: Option<PathBuf>,
    },
}

#[derive(Args)]
struct DataArgs {
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    split: Option<PathBuf>,
    /// Named hard-template preset.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    template_file: Option<PathBuf>,
    #[arg(long)]
    description_cache: Option<PathBuf>,
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long, value_enum)]
    encoder: Option<EncoderKind>,
    /// Stub checkpoint to load.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Embedding export file for the store encoder.
    #[arg(long)]
    store: Option<PathBuf>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long, value_parser = parse_token_state)]
    token_state: Option<TokenState>,
}

#[derive(Args)]
struct ProtocolArgs {
    #[arg(long)]
    n_way: Option<usize>,
    #[arg(long)]
    k_shot: Option<usize>,
    #[arg(long)]
    queries_per_class: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    alpha: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    beta: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    gamma: Option<f64>,
    #[arg(long, value_parser = parse_fallback)]
    fallback: Option<Fallback>,
}

fn parse_token_state(s: &str) -> Result<TokenState, String> {
    match s {
        "fixed" => Ok(TokenState::Fixed),
        "learnable" => Ok(TokenState::Learnable),
        _ => Err(format!("expected fixed or learnable, got {s:?}")),
    }
}

fn parse_fallback(s: &str) -> Result<Fallback, String> {
    match s {
        "none" => Ok(Fallback::None),
        "argmax" => Ok(Fallback::Argmax),
        _ => Err(format!("expected none or argmax, got {s:?}")),
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

impl DataArgs {
    fn apply(self, c: &mut RunConfig) {
        if self.corpus.is_some() {
            c.corpus = self.corpus;
        }
        if self.split.is_some() {
            c.split = self.split;
        }
        if self.template_file.is_some() {
            c.template_file = self.template_file;
        }
        if self.description_cache.is_some() {
            c.description_cache = self.description_cache;
        }
        set(&mut c.template_preset, self.preset);
    }
}

impl ModelArgs {
    fn apply(self, c: &mut RunConfig) {
        set(&mut c.encoder, self.encoder);
        if self.checkpoint.is_some() {
            c.checkpoint = self.checkpoint;
        }
        if self.store.is_some() {
            c.store = self.store;
        }
        set(&mut c.d, self.d);
        set(&mut c.m, self.m);
        set(&mut c.token_state, self.token_state);
    }
}

impl ProtocolArgs {
    fn apply(self, c: &mut RunConfig) {
        set(&mut c.n_way, self.n_way);
        set(&mut c.k_shot, self.k_shot);
        set(&mut c.queries_per_class, self.queries_per_class);
        set(&mut c.alpha, self.alpha);
        set(&mut c.beta, self.beta);
        set(&mut c.gamma, self.gamma);
        set(&mut c.fallback, self.fallback);
    }
}

/// Failure class, mapped to the process exit code.
#[derive(Debug)]
pub enum Failure {
    /// Bad configuration or arguments.
    Validation(anyhow::Error),
    /// Data, IO or numerical failure during a run.
    Runtime(anyhow::Error),
    /// Description endpoint failure.
    Remote(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Validation(_) => 1,
            Failure::Runtime(_) => 2,
            Failure::Remote(_) => 3,
        }
    }

    fn error(&self) -> &anyhow::Error {
        match self {
            Failure::Validation(e) | Failure::Runtime(e) | Failure::Remote(e) => e,
        }
    }
}

impl From<lgp::Error> for Failure {
    fn from(e: lgp::Error) -> Self {
        match e {
            lgp::Error::InvalidArgument(_) | lgp::Error::Validation(_) => Failure::Validation(e.into()),
            lgp::Error::Remote { .. } => Failure::Remote(e.into()),
            _ => Failure::Runtime(e.into()),
        }
    }
}

pub type Outcome<T = ()> = Result<T, Failure>;

pub trait ValidationContext<T> {
    fn invalid(self) -> Outcome<T>;
    fn runtime(self) -> Outcome<T>;
}

impl<T, E: Into<anyhow::Error>> ValidationContext<T> for Result<T, E> {
    fn invalid(self) -> Outcome<T> {
        self.map_err(|e| Failure::Validation(e.into()))
    }

    fn runtime(self) -> Outcome<T> {
        self.map_err(|e| Failure::Runtime(e.into()))
    }
}

fn run(cli: Cli) -> Outcome {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path).invalid()?,
        None => RunConfig::default(),
    };
    set(&mut config.seed, cli.seed);
    set(&mut config.workers, cli.workers);
    set(&mut config.out, cli.out);

    match cli.command {
        Command::Describe { data, part } => {
            data.apply(&mut config);
            config.validate().invalid()?;
            commands::describe(&config, part)
        }
        Command::Train {
            data,
            model,
            protocol,
            epochs,
            tasks_per_epoch,
            val_tasks,
            lr,
            weight_decay,
            resume,
        } => {
            data.apply(&mut config);
            model.apply(&mut config);
            protocol.apply(&mut config);
            set(&mut config.epochs, epochs);
            set(&mut config.train_tasks, tasks_per_epoch);
            set(&mut config.val_tasks, val_tasks);
            set(&mut config.optimizer.lr, lr);
            set(&mut config.optimizer.weight_decay, weight_decay);
            config.validate().invalid()?;
            commands::train(&config, resume.as_deref(), epochs)
        }
        Command::Eval {
            data,
            model,
            protocol,
            episodes,
            part,
        } => {
            data.apply(&mut config);
            model.apply(&mut config);
            protocol.apply(&mut config);
            set(&mut config.eval_tasks, episodes);
            set(&mut config.eval_split, part);
            config.validate().invalid()?;
            commands::eval(&config)
        }
        Command::Gradcheck {
            n_way,
            k_shot,
            queries_per_class,
            d,
            m,
            episodes,
        } => {
            let gc = lgp::gradcheck::GradcheckConfig {
                n_way,
                k_shot,
                queries_per_class,
                d,
                m,
                episodes,
                ..Default::default()
            };
            commands::gradcheck(&gc, config.seed)
        }
        Command::ExportPrototypes {
            data,
            model,
            protocol,
            episodes,
            part,
        } => {
            data.apply(&mut config);
            model.apply(&mut config);
            protocol.apply(&mut config);
            set(&mut config.eval_split, part);
            config.validate().invalid()?;
            commands::export_prototypes(&config, episodes)
        }
        Command::Synth { spec } => commands::synth(&config, spec.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {:#}", failure.error());
            ExitCode::from(failure.code())
        }
    }
}
