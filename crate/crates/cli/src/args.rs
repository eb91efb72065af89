use std::fmt;
use std::path::PathBuf;

use clap::builder::{PossibleValuesParser, TypedValueParser};
use clap::error::ErrorKind;
use clap::Parser;
use octopus_core::decoding::{DecodeConfig, DecodeMethod};
use octopus_core::tasks::{self, TaskSpec};

pub const DEFAULT_MODEL_PATH: &str = "./checkpoints/best";

/// Flags shared by `octopus`, `octopus_interactive` and the per-task
/// commands.
#[derive(Parser, Clone, Debug, PartialEq)]
#[command(name = "octopus", disable_version_flag = true, about = "Text-to-text generation with a task prefix")]
pub struct CliArgs {
    /// Cache directory (accepted, unused).
    #[arg(short = 'c', long, value_name = "DIR")]
    pub cache_dir: Option<PathBuf>,
    /// Append timing and configuration to this file.
    #[arg(short = 'l', long, value_name = "FILE")]
    pub logging_file: Option<PathBuf>,
    /// Task prefix, e.g. diacritize. The interactive command accepts a
    /// comma-separated pipeline.
    #[arg(short = 'p', long)]
    pub prefix: Option<String>,
    /// Source text.
    #[arg(short = 't', long, conflicts_with = "input_file", allow_hyphen_values = true)]
    pub text: Option<String>,
    /// File with one source per line.
    #[arg(short = 'f', long, value_name = "FILE")]
    pub input_file: Option<PathBuf>,
    /// Hypotheses printed per input.
    #[arg(short = 'o', long, default_value_t = 3, value_name = "N")]
    pub max_outputs: usize,
    /// Sources decoded together (greedy search only) [short: -bs].
    #[arg(long, default_value_t = 16, value_name = "N")]
    pub batch_size: usize,
    /// Maximum generated tokens [default: 2048, interactive 300].
    #[arg(short = 's', long, value_name = "N")]
    pub seq_length: Option<usize>,
    #[arg(
        short = 'm',
        long,
        default_value = "beam",
        value_parser = PossibleValuesParser::new(["greedy", "beam", "sampling"])
            .map(|s| s.parse::<DecodeMethod>().expect("listed value")),
    )]
    pub search_method: DecodeMethod,
    /// Beam size [short: -nb].
    #[arg(long, default_value_t = 5, value_name = "N")]
    pub nbeam: usize,
    /// Forbid repeating n-grams of this size; 0 disables [short: -ng].
    #[arg(long, default_value_t = 0, value_name = "N")]
    pub no_repeat_ngram_size: usize,
    /// Sample from the k most likely tokens; 0 disables.
    #[arg(short = 'k', long, default_value_t = 0, value_name = "K")]
    pub top_k: usize,
    /// Sample from the smallest set with this much mass.
    #[arg(long, default_value_t = 1.0, value_name = "P")]
    pub top_p: f64,
    /// Sampling seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Model directory written by octopus-train.
    #[arg(long, default_value = DEFAULT_MODEL_PATH, value_name = "DIR")]
    pub model_path: PathBuf,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Parsed {
    Args(Box<CliArgs>),
    Help(String),
}

/// Bad command line; reported with exit code 2.
#[derive(Clone, Debug, PartialEq)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

const MULTI_CHAR_SHORTS: [(&str, &str); 3] = [("-bs", "--batch-size"), ("-nb", "--nbeam"), ("-ng", "--no-repeat-ngram-size")];

/// Rewrites the two-letter short flags into their long forms. Only tokens in
/// flag position are touched, so a text value such as `-nb` survives.
fn expand_shorts(argv: &[String]) -> Vec<String> {
    let mut out = Vec::with_capacity(argv.len());
    let mut expecting_value = false;
    let mut rest_positional = false;
    for arg in argv {
        if expecting_value || rest_positional {
            out.push(arg.clone());
            expecting_value = false;
            continue;
        }
        if arg == "--" {
            rest_positional = true;
            out.push(arg.clone());
            continue;
        }
        let (flag, inline) = match arg.split_once('=') {
            Some((f, v)) => (f, Some(v)),
            None => (arg.as_str(), None),
        };
        if let Some((_, long)) = MULTI_CHAR_SHORTS.iter().find(|(short, _)| *short == flag) {
            match inline {
                Some(v) => out.push(format!("{long}={v}")),
                None => {
                    out.push(long.to_string());
                    expecting_value = true;
                }
            }
            continue;
        }
        let is_flag = arg.starts_with('-') && arg.len() > 1;
        let takes_value = is_flag && inline.is_none() && arg != "-h" && arg != "--help";
        // `-tfoo` carries its value inline
        let short_inline = !arg.starts_with("--") && arg.chars().count() > 2;
        expecting_value = takes_value && !short_inline;
        out.push(arg.clone());
    }
    out
}

/// Parses arguments after the program name.
pub fn parse_args(argv: &[String]) -> Result<Parsed, UsageError> {
    let mut full = vec!["octopus".to_string()];
    full.extend(expand_shorts(argv));
    match CliArgs::try_parse_from(full) {
        Ok(args) => Ok(Parsed::Args(Box::new(args))),
        Err(e) if e.kind() == ErrorKind::DisplayHelp => Ok(Parsed::Help(e.render().to_string())),
        Err(e) => Err(UsageError(e.render().to_string().trim_end().to_string())),
    }
}

impl CliArgs {
    /// Decoding settings; the interactive preset shortens the default
    /// sequence length.
    pub fn decode_config(&self, interactive: bool) -> Result<DecodeConfig, UsageError> {
        let base = if interactive {
            DecodeConfig::interactive()
        } else {
            DecodeConfig::default()
        };
        let cfg = DecodeConfig {
            method: self.search_method,
            nbeam: self.nbeam,
            max_outputs: self.max_outputs,
            seq_length: self.seq_length.unwrap_or(base.seq_length),
            no_repeat_ngram_size: self.no_repeat_ngram_size,
            top_k: self.top_k,
            top_p: self.top_p,
            seed: self.seed,
        };
        cfg.validate().map_err(|e| UsageError(format!("error: {e}")))?;
        if self.batch_size == 0 {
            return Err(UsageError("error: batch size must be at least 1".into()));
        }
        Ok(cfg)
    }

    /// The single task of a batch run.
    pub fn batch_task(&self) -> Result<&'static TaskSpec, UsageError> {
        let prefix = self
            .prefix
            .as_deref()
            .ok_or_else(|| UsageError("error: --prefix is required".into()))?;
        tasks::lookup(prefix).map_err(|e| UsageError(format!("error: {e}")))
    }

    /// Parses a comma-separated task pipeline.
    pub fn pipeline(list: &str) -> Result<Vec<&'static TaskSpec>, String> {
        let names: Vec<&str> = list.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
        if names.is_empty() {
            return Err("no task given".into());
        }
        names.into_iter().map(|n| tasks::lookup(n).map_err(|e| e.to_string())).collect()
    }
}
