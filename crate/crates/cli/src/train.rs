//! `octopus-train`: builds a vocabulary and model (or continues from a
//! saved one) and runs one of the four training strategies.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Parser;
use octopus_core::metrics::parse_m2;
use octopus_core::model::{ModelConfig, Seq2Seq};
use octopus_core::numerics::AdamConfig;
use octopus_core::tasks::{load_jsonl, Example};
use octopus_core::tokenizer::{TokenMode, Vocabulary, DEFAULT_SENTINELS};
use octopus_core::trainer::{load_bundle, Datasets, Strategy, TrainConfig, Trainer};

#[derive(Parser, Clone, Debug)]
#[command(name = "octopus-train", disable_version_flag = true, about = "Train a text-to-text model")]
pub struct TrainArgs {
    /// Labeled examples, one JSON object per line.
    #[arg(long, value_name = "FILE")]
    pub train: Option<PathBuf>,
    /// Labeled dev examples used for checkpoint selection.
    #[arg(long, value_name = "FILE")]
    pub dev: Option<PathBuf>,
    /// Plain text for denoising, one document per line.
    #[arg(long, value_name = "FILE")]
    pub unlabeled: Option<PathBuf>,
    /// Gold edits (M² format) for edit-scored dev examples.
    #[arg(long, value_name = "FILE")]
    pub gold_m2: Option<PathBuf>,
    #[arg(long, default_value = "single_task", value_parser = ["pretrain", "single_task", "multitask", "joint"])]
    pub strategy: String,
    #[arg(long, conflicts_with = "epochs")]
    pub steps: Option<u64>,
    #[arg(long)]
    pub epochs: Option<u64>,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    /// Decay the learning rate linearly to zero.
    #[arg(long)]
    pub linear_decay: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Steps between dev evaluations; 0 keeps only the final model.
    #[arg(long, default_value_t = 0)]
    pub eval_every: u64,
    #[arg(long, default_value_t = 0.5)]
    pub labeled_ratio: f64,
    /// Model shape when starting from scratch.
    #[arg(long, default_value = "desk", value_parser = ["desk", "tiny"])]
    pub preset: String,
    #[arg(long)]
    pub d_model: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub max_seq_len: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    /// Upper bound on the character vocabulary built from the data.
    #[arg(long, default_value_t = 4096)]
    pub max_vocab: usize,
    /// Start from a saved model directory instead of random weights.
    #[arg(long, value_name = "DIR")]
    pub init: Option<PathBuf>,
    /// Continue an interrupted run from a step checkpoint.
    #[arg(long, value_name = "DIR", conflicts_with = "init")]
    pub resume: Option<PathBuf>,
    #[arg(long, default_value = "./checkpoints", value_name = "DIR")]
    pub out: PathBuf,
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    Ok(text.lines().filter(|l| !l.trim().is_empty()).map(str::to_string).collect())
}

fn load_examples(path: Option<&Path>) -> Result<Vec<Example>> {
    match path {
        Some(p) => load_jsonl(p).with_context(|| format!("cannot load {}", p.display())),
        None => Ok(Vec::new()),
    }
}

pub fn datasets(args: &TrainArgs) -> Result<Datasets> {
    let mut gold_edits = HashMap::new();
    if let Some(p) = &args.gold_m2 {
        for s in parse_m2(&fs::read_to_string(p).with_context(|| format!("cannot read {}", p.display()))?)? {
            gold_edits.insert(s.source, s.edits);
        }
    }
    Ok(Datasets {
        unlabeled: match &args.unlabeled {
            Some(p) => read_lines(p)?,
            None => Vec::new(),
        },
        labeled: load_examples(args.train.as_deref())?,
        dev: load_examples(args.dev.as_deref())?,
        gold_edits,
    })
}

fn model_config(args: &TrainArgs, vocab_size: usize) -> ModelConfig {
    let mut cfg = match args.preset.as_str() {
        "tiny" => ModelConfig::tiny(vocab_size),
        _ => ModelConfig::desk(vocab_size),
    };
    if let Some(d) = args.d_model {
        cfg.d_model = d;
        cfg.d_ff = 4 * d;
    }
    if let Some(l) = args.layers {
        cfg.n_enc_layers = l;
        cfg.n_dec_layers = l;
    }
    if let Some(m) = args.max_seq_len {
        cfg.max_seq_len = m;
    }
    if let Some(p) = args.dropout {
        cfg.dropout_rate = p;
    }
    cfg
}

pub fn train_config(args: &TrainArgs) -> Result<TrainConfig> {
    let strategy: Strategy = args.strategy.parse()?;
    let (max_steps, max_epochs) = match (args.steps, args.epochs) {
        (None, None) if strategy == Strategy::Pretrain => bail!("pretraining needs --steps"),
        (None, None) => (None, Some(20)),
        other => other,
    };
    Ok(TrainConfig {
        strategy,
        optimizer: AdamConfig {
            learning_rate: args.lr,
            ..AdamConfig::default()
        },
        batch_size: args.batch_size,
        max_steps,
        max_epochs,
        eval_every: args.eval_every,
        seed: args.seed,
        labeled_ratio: args.labeled_ratio,
        linear_decay: args.linear_decay,
        ..TrainConfig::pretrain(0, args.seed)
    })
}

/// Runs training and returns the directory of the selected model.
pub fn train(args: &TrainArgs) -> Result<PathBuf> {
    let data = datasets(args)?;
    let mut trainer = if let Some(dir) = &args.resume {
        Trainer::resume(dir, data)?
    } else {
        let (model, vocab) = match &args.init {
            Some(dir) => load_bundle(dir)?,
            None => {
                let texts = data
                    .unlabeled
                    .iter()
                    .map(String::as_str)
                    .chain(data.labeled.iter().chain(&data.dev).flat_map(|e| [e.source.as_str(), e.target.as_str()]));
                let vocab = Vocabulary::build(texts, args.max_vocab, DEFAULT_SENTINELS, TokenMode::Char)?;
                let model = Seq2Seq::new(model_config(args, vocab.size()), args.seed)?;
                (model, vocab)
            }
        };
        Trainer::new(model, vocab, train_config(args)?, data)?
    };
    let report = trainer.run(Some(&args.out))?;
    if let (Some(last), Some(first)) = (report.losses.last(), report.losses.first()) {
        eprintln!("trained {} steps, loss {first:.4} -> {last:.4}", report.losses.len());
    }
    Ok(args.out.join("best"))
}

pub fn main_process() -> i32 {
    let args = match TrainArgs::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { crate::EXIT_USAGE } else { crate::EXIT_OK };
        }
    };
    match train(&args) {
        Ok(best) => {
            println!("{}", best.display());
            crate::EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            crate::EXIT_IO
        }
    }
}
