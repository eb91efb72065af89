//! Command-line front end: the batch command `octopus`, the REPL
//! `octopus_interactive`, one `octopus-<task>` command per prefix and the
//! `octopus-train` driver.
//!
//! Exit codes: 0 success, 1 I/O or model failure, 2 usage error.

pub mod args;
pub mod train;

use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, Write};
use std::path::Path;
use std::time::Instant;

use anyhow::{Context, Result};
use octopus_core::decoding::{self, DecodeConfig, DecodeMethod};
use octopus_core::model::Seq2Seq;
use octopus_core::objectives::terminate;
use octopus_core::tasks::{self, TaskSpec};
use octopus_core::tokenizer::{TokenId, Vocabulary};
use octopus_core::trainer::load_bundle;

pub use args::{parse_args, CliArgs, Parsed, UsageError, DEFAULT_MODEL_PATH};

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

pub const TASK_PROMPT: &str = "Type your task(s) ";
pub const SOURCE_PROMPT: &str = "Type your source text or (q) to STOP:";

/// A loaded model with its decoding settings.
pub struct Generator {
    pub model: Seq2Seq<f32>,
    pub vocab: Vocabulary,
    pub cfg: DecodeConfig,
    pub batch_size: usize,
}

impl Generator {
    pub fn load(dir: &Path, cfg: DecodeConfig, batch_size: usize) -> Result<Self> {
        let (model, vocab) = load_bundle(dir).with_context(|| format!("cannot load model from {}", dir.display()))?;
        Ok(Generator {
            model,
            vocab,
            cfg,
            batch_size: batch_size.max(1),
        })
    }

    fn source_ids(&self, task: &TaskSpec, text: &str) -> Result<Vec<TokenId>> {
        let formatted = tasks::format_text(task, text)?;
        Ok(terminate(self.vocab.encode(&formatted), self.model.config().max_seq_len))
    }

    /// Hypotheses for every input, best first.
    pub fn generate(&self, task: &TaskSpec, texts: &[String]) -> Result<Vec<Vec<String>>> {
        let sources: Vec<Vec<TokenId>> = texts.iter().map(|t| self.source_ids(task, t)).collect::<Result<_>>()?;
        let mut out = Vec::with_capacity(sources.len());
        if self.cfg.method == DecodeMethod::Greedy && self.cfg.no_repeat_ngram_size == 0 {
            for chunk in sources.chunks(self.batch_size) {
                for h in decoding::greedy_batch(&self.model, chunk, self.cfg.seq_length)? {
                    out.push(vec![self.vocab.decode(h.content())?]);
                }
            }
        } else {
            for src in &sources {
                let hyps = decoding::generate(&self.model, src, &self.cfg)?;
                out.push(hyps.iter().map(|h| self.vocab.decode(h.content())).collect::<octopus_core::Result<_>>()?);
            }
        }
        Ok(out)
    }

    /// Runs the tasks left to right, each consuming the previous top
    /// hypothesis; returns the last task's hypotheses.
    pub fn pipeline(&self, pipeline: &[&TaskSpec], text: &str) -> Result<Vec<String>> {
        let mut current = text.to_string();
        let mut hyps = Vec::new();
        for (i, task) in pipeline.iter().enumerate() {
            hyps = self.generate(task, std::slice::from_ref(&current))?.remove(0);
            if i + 1 < pipeline.len() {
                current = hyps.first().cloned().unwrap_or_default();
            }
        }
        Ok(hyps)
    }
}

/// One block of `target{i}: text` lines followed by a blank line.
pub fn write_block(out: &mut dyn Write, hyps: &[String]) -> io::Result<()> {
    for (i, h) in hyps.iter().enumerate() {
        writeln!(out, "target{}: {}", i + 1, h)?;
    }
    writeln!(out)
}

struct Log(Option<File>);

impl Log {
    fn open(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => Ok(Log(Some(
                OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(p)
                    .with_context(|| format!("cannot open log file {}", p.display()))?,
            ))),
            None => Ok(Log(None)),
        }
    }

    fn line(&mut self, msg: impl AsRef<str>) {
        if let Some(f) = self.0.as_mut() {
            // logging must never abort generation
            let _ = writeln!(f, "{}", msg.as_ref());
        }
    }
}

fn fail(err: &mut dyn Write, code: i32, msg: impl std::fmt::Display) -> i32 {
    let _ = writeln!(err, "{msg}");
    code
}

fn read_inputs(args: &CliArgs) -> Result<Vec<String>> {
    match (&args.text, &args.input_file) {
        (Some(t), None) => Ok(vec![t.clone()]),
        (None, Some(path)) => {
            let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
            Ok(text.lines().map(str::to_string).collect())
        }
        _ => unreachable!("checked by the caller"),
    }
}

/// Batch mode: every input line is decoded and printed as a block.
pub fn run_batch(args: &CliArgs, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let task = match args.batch_task() {
        Ok(t) => t,
        Err(e) => return fail(err, EXIT_USAGE, e),
    };
    let cfg = match args.decode_config(false) {
        Ok(c) => c,
        Err(e) => return fail(err, EXIT_USAGE, e),
    };
    if args.text.is_none() && args.input_file.is_none() {
        return fail(err, EXIT_USAGE, "error: one of --text or --input-file is required");
    }
    match batch_inner(args, task, cfg, out) {
        Ok(()) => EXIT_OK,
        Err(e) => fail(err, EXIT_IO, format!("error: {e:#}")),
    }
}

fn batch_inner(args: &CliArgs, task: &TaskSpec, cfg: DecodeConfig, out: &mut dyn Write) -> Result<()> {
    let inputs = read_inputs(args)?;
    let mut log = Log::open(args.logging_file.as_deref())?;
    let start = Instant::now();
    let generator = Generator::load(&args.model_path, cfg.clone(), args.batch_size)?;
    log.line(format!("model {} loaded in {} ms", args.model_path.display(), start.elapsed().as_millis()));
    log.line(format!("task {} decode {}", task.prefix, serde_json::to_string(&cfg)?));
    let t = Instant::now();
    let results = generator.generate(task, &inputs)?;
    for hyps in &results {
        write_block(out, hyps)?;
    }
    out.flush()?;
    log.line(format!("{} inputs decoded in {} ms", inputs.len(), t.elapsed().as_millis()));
    Ok(())
}

/// Interactive session. Prompts go to `err`, hypotheses to `out`, so the
/// output stream matches batch mode.
pub fn repl_loop(args: &CliArgs, input: &mut dyn BufRead, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let cfg = match args.decode_config(true) {
        Ok(c) => c,
        Err(e) => return fail(err, EXIT_USAGE, e),
    };
    let preset = match args.prefix.as_deref().map(CliArgs::pipeline).transpose() {
        Ok(p) => p,
        Err(e) => return fail(err, EXIT_USAGE, format!("error: {e}")),
    };
    match repl_inner(args, cfg, preset, input, out, err) {
        Ok(()) => EXIT_OK,
        Err(e) => fail(err, EXIT_IO, format!("error: {e:#}")),
    }
}

fn read_line(input: &mut dyn BufRead) -> Result<Option<String>> {
    let mut line = String::new();
    if input.read_line(&mut line)? == 0 {
        return Ok(None);
    }
    Ok(Some(line.trim_end_matches(['\n', '\r']).to_string()))
}

fn repl_inner(
    args: &CliArgs,
    cfg: DecodeConfig,
    preset: Option<Vec<&'static TaskSpec>>,
    input: &mut dyn BufRead,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<()> {
    let mut log = Log::open(args.logging_file.as_deref())?;
    writeln!(err, "Octopus Interactive CLI")?;
    writeln!(err, "Loading model from {}", args.model_path.display())?;
    let generator = Generator::load(&args.model_path, cfg.clone(), args.batch_size)?;
    log.line(format!("interactive decode {}", serde_json::to_string(&cfg)?));

    let pipeline = match preset {
        Some(p) => p,
        None => loop {
            write!(err, "{TASK_PROMPT}")?;
            err.flush()?;
            let Some(line) = read_line(input)? else { return Ok(()) };
            if line.trim() == "q" {
                return Ok(());
            }
            match CliArgs::pipeline(&line) {
                Ok(p) => break p,
                Err(e) => writeln!(err, "{e}. Valid tasks: {}", tasks::prefix_list())?,
            }
        },
    };
    let names: Vec<&str> = pipeline.iter().map(|t| t.prefix).collect();
    log.line(format!("pipeline {}", names.join(", ")));

    loop {
        writeln!(err, "{SOURCE_PROMPT}")?;
        err.flush()?;
        let Some(line) = read_line(input)? else { return Ok(()) };
        let text = line.trim();
        if text == "q" {
            return Ok(());
        }
        if text.is_empty() {
            continue;
        }
        let t = Instant::now();
        match generator.pipeline(&pipeline, text) {
            Ok(hyps) => {
                write_block(out, &hyps)?;
                out.flush()?;
                log.line(format!("decoded in {} ms", t.elapsed().as_millis()));
            }
            Err(e) => writeln!(err, "error: {e:#}")?,
        }
    }
}

/// Parses `argv` (without the program name) and runs batch mode. A fixed
/// prefix turns this into a per-task command.
pub fn batch_main(argv: &[String], fixed_prefix: Option<&str>, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let mut args = match parse_args(argv) {
        Ok(Parsed::Args(a)) => a,
        Ok(Parsed::Help(h)) => {
            let _ = write!(out, "{h}");
            return EXIT_OK;
        }
        Err(e) => return fail(err, EXIT_USAGE, e),
    };
    if let Some(fixed) = fixed_prefix {
        match args.prefix.as_deref() {
            Some(p) if tasks::lookup(p).ok().map(|t| t.prefix) != Some(fixed) => {
                return fail(err, EXIT_USAGE, format!("error: this command always uses the prefix {fixed}"));
            }
            _ => args.prefix = Some(fixed.to_string()),
        }
    }
    run_batch(&args, out, err)
}

pub fn interactive_main(argv: &[String], input: &mut dyn BufRead, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    match parse_args(argv) {
        Ok(Parsed::Args(a)) => repl_loop(&a, input, out, err),
        Ok(Parsed::Help(h)) => {
            let _ = write!(out, "{h}");
            EXIT_OK
        }
        Err(e) => fail(err, EXIT_USAGE, e),
    }
}

/// Process entry for the batch and per-task binaries.
pub fn run_batch_process(fixed_prefix: Option<&str>) -> i32 {
    let argv: Vec<String> = std::env::args().skip(1).collect();
    let stdout = io::stdout();
    let mut out = stdout.lock();
    batch_main(&argv, fixed_prefix, &mut out, &mut io::stderr())
}

pub fn run_interactive_process() -> i32 {
    let argv: Vec<String> = std::env::args().skip(1).collect();
    let stdin = io::stdin();
    let stdout = io::stdout();
    interactive_main(&argv, &mut stdin.lock(), &mut stdout.lock(), &mut io::stderr())
}
