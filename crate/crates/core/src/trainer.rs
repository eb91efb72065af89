//! Training regimes (pretraining, single-task, multitask, joint), dev-set
//! evaluation, checkpoints and resumption.
//!
//! Every random choice at step `s` comes from a stream keyed by
//! `(seed, s, purpose)`, so a run can be resumed from any checkpoint and
//! reproduce the uninterrupted trajectory bit for bit.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::decoding::greedy_batch;
use crate::error::{Error, Result};
use crate::metrics::{Direction, EditSet};
use crate::model::checkpoint::{self, NamedArray};
use crate::model::{ModelConfig, Seq2Seq};
use crate::numerics::{AdamConfig, OptimizerState, Real};
use crate::objectives::{denoising_pair, terminate, DenoisingConfig, Seq2SeqBatch};
use crate::tasks::{self, Example};
use crate::tokenizer::{TokenId, Vocabulary};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Pretrain,
    SingleTask,
    Multitask,
    Joint,
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pretrain" => Ok(Strategy::Pretrain),
            "single_task" => Ok(Strategy::SingleTask),
            "multitask" => Ok(Strategy::Multitask),
            "joint" => Ok(Strategy::Joint),
            _ => Err(Error::invalid(format!("unknown strategy '{s}'"))),
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Pretrain => "pretrain",
            Strategy::SingleTask => "single_task",
            Strategy::Multitask => "multitask",
            Strategy::Joint => "joint",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub strategy: Strategy,
    #[serde(default)]
    pub optimizer: AdamConfig,
    pub batch_size: usize,
    #[serde(default)]
    pub max_steps: Option<u64>,
    #[serde(default)]
    pub max_epochs: Option<u64>,
    /// Steps between dev evaluations and checkpoints; 0 disables both.
    #[serde(default)]
    pub eval_every: u64,
    #[serde(default)]
    pub seed: u64,
    /// Per-task mixing weights; `None` weights tasks by pool size.
    #[serde(default)]
    pub task_weights: Option<BTreeMap<String, f64>>,
    /// Probability that a joint-strategy slot is labeled.
    #[serde(default = "default_labeled_ratio")]
    pub labeled_ratio: f64,
    #[serde(default)]
    pub denoising: DenoisingConfig,
    /// Sequence cap for batches; defaults to the model's limit.
    #[serde(default)]
    pub max_len: Option<usize>,
    /// Decay the learning rate linearly to zero over the run.
    #[serde(default)]
    pub linear_decay: bool,
}

fn default_labeled_ratio() -> f64 {
    0.5
}

impl TrainConfig {
    /// Desk pretraining preset: lr 1e-3, batch 32.
    pub fn pretrain(max_steps: u64, seed: u64) -> Self {
        TrainConfig {
            strategy: Strategy::Pretrain,
            optimizer: AdamConfig::default(),
            batch_size: 32,
            max_steps: Some(max_steps),
            max_epochs: None,
            eval_every: 0,
            seed,
            task_weights: None,
            labeled_ratio: default_labeled_ratio(),
            denoising: DenoisingConfig::default(),
            max_len: None,
            linear_decay: false,
        }
    }

    /// Desk finetuning preset: batch 8, 20 epochs.
    pub fn finetune(strategy: Strategy, seed: u64) -> Self {
        TrainConfig {
            strategy,
            batch_size: 8,
            max_steps: None,
            max_epochs: Some(20),
            ..Self::pretrain(0, seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_steps.is_some() == self.max_epochs.is_some() {
            return Err(Error::invalid("set exactly one of max_steps and max_epochs"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be positive"));
        }
        if !(0.0..=1.0).contains(&self.labeled_ratio) {
            return Err(Error::invalid(format!("labeled_ratio {} outside [0, 1]", self.labeled_ratio)));
        }
        if let Some(w) = &self.task_weights {
            if let Some((t, v)) = w.iter().find(|(_, v)| !(v.is_finite() && **v > 0.0)) {
                return Err(Error::invalid(format!("mixing weight {v} for '{t}' must be positive and finite")));
            }
        }
        self.denoising.validate()
    }
}

/// Training and evaluation data.
#[derive(Clone, Debug, Default)]
pub struct Datasets {
    /// Raw text for denoising.
    pub unlabeled: Vec<String>,
    pub labeled: Vec<Example>,
    pub dev: Vec<Example>,
    /// Gold edits for edit-scored dev examples, keyed by raw source text.
    pub gold_edits: HashMap<String, EditSet>,
}

/// Draws a task in proportion to its weight, then examples from its pool.
#[derive(Clone, Debug)]
pub struct TaskMixer {
    tasks: Vec<(String, Vec<usize>, f64)>,
}

impl TaskMixer {
    /// Groups examples by task; missing weights default to pool sizes.
    pub fn new(examples: &[Example], weights: Option<&BTreeMap<String, f64>>) -> Result<Self> {
        let mut pools: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, e) in examples.iter().enumerate() {
            pools.entry(e.task.clone()).or_default().push(i);
        }
        if pools.is_empty() {
            return Err(Error::invalid("no labeled examples to mix"));
        }
        let mut tasks = Vec::with_capacity(pools.len());
        for (task, idx) in pools {
            let w = match weights {
                Some(w) => *w
                    .get(&task)
                    .ok_or_else(|| Error::invalid(format!("no mixing weight for task '{task}'")))?,
                None => idx.len() as f64,
            };
            if !(w.is_finite() && w > 0.0) {
                return Err(Error::invalid(format!("mixing weight {w} for '{task}' must be positive and finite")));
            }
            tasks.push((task, idx, w));
        }
        Ok(TaskMixer { tasks })
    }

    /// Normalized weights by task name.
    pub fn probabilities(&self) -> Vec<(String, f64)> {
        let total: f64 = self.tasks.iter().map(|t| t.2).sum();
        self.tasks.iter().map(|(n, _, w)| (n.clone(), w / total)).collect()
    }

    pub fn sample_task<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let total: f64 = self.tasks.iter().map(|t| t.2).sum();
        let mut u = rng.random::<f64>() * total;
        for (i, t) in self.tasks.iter().enumerate() {
            if u < t.2 {
                return i;
            }
            u -= t.2;
        }
        self.tasks.len() - 1
    }

    /// One task and `size` example indices drawn uniformly from its pool.
    pub fn sample_task_batch<R: Rng + ?Sized>(&self, rng: &mut R, size: usize) -> (String, Vec<usize>) {
        let t = &self.tasks[self.sample_task(rng)];
        let idx = (0..size).map(|_| t.1[rng.random_range(0..t.1.len())]).collect();
        (t.0.clone(), idx)
    }

    pub fn sample_example<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let t = &self.tasks[self.sample_task(rng)];
        t.1[rng.random_range(0..t.1.len())]
    }
}

#[derive(Clone, Copy)]
#[repr(u64)]
enum Purpose {
    Mix = 1,
    Unlabeled = 2,
    Corrupt = 3,
    Labeled = 4,
    Dropout = 5,
    Epoch = 6,
    Dev = 7,
}

/// Independent RNG stream for one purpose at one step.
fn stream(seed: u64, step: u64, purpose: Purpose) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&step.to_le_bytes());
    key[16..24].copy_from_slice(&(purpose as u64).to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

/// Dev score recorded with a checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub step: u64,
    pub score: f64,
    pub metric: String,
    pub direction: Direction,
    pub path: String,
}

/// Index of the best checkpoint; ties go to the earliest step.
pub fn select_best_checkpoint(metas: &[CheckpointMeta]) -> Result<usize> {
    let first = metas.first().ok_or_else(|| Error::invalid("no checkpoints to select from"))?;
    if metas.iter().any(|m| m.direction != first.direction || m.metric != first.metric) {
        return Err(Error::invalid("checkpoints disagree on metric or direction"));
    }
    let mut best = 0;
    for (i, m) in metas.iter().enumerate().skip(1) {
        let b = &metas[best];
        let better = match first.direction {
            Direction::Higher => m.score > b.score,
            Direction::Lower => m.score < b.score,
        };
        if better || (m.score == b.score && m.step < b.step) {
            best = i;
        }
    }
    Ok(best)
}

/// Result of decoding a dev set.
#[derive(Clone, Debug, PartialEq)]
pub struct DevEval {
    pub score: f64,
    pub metric: String,
    pub direction: Direction,
    pub hypotheses: Vec<String>,
}

/// Greedy-decodes every dev source and applies the task's metric.
pub fn evaluate_dev<T: Real>(
    model: &Seq2Seq<T>,
    vocab: &Vocabulary,
    dev: &[Example],
    max_len: usize,
    gold_edits: &HashMap<String, EditSet>,
) -> Result<DevEval> {
    let first = dev.first().ok_or_else(|| Error::invalid("empty dev set"))?;
    let spec = first.spec();
    if dev.iter().any(|e| e.task != first.task) {
        return Err(Error::invalid("dev set mixes tasks"));
    }
    let mut hypotheses = Vec::with_capacity(dev.len());
    for chunk in dev.chunks(64) {
        let sources: Vec<Vec<TokenId>> = chunk.iter().map(|e| terminate(vocab.encode(&e.source), max_len)).collect();
        for h in greedy_batch(model, &sources, max_len)? {
            hypotheses.push(vocab.decode(h.content())?);
        }
    }
    let refs: Vec<String> = dev.iter().map(|e| e.target.clone()).collect();
    let raw: Vec<String> = dev.iter().map(|e| e.fields.text.clone().unwrap_or_default()).collect();
    let golds: Option<Vec<EditSet>> = raw.iter().map(|s| gold_edits.get(s).cloned()).collect();
    let score = tasks::score(spec, &hypotheses, &refs, golds.as_deref().map(|g| (raw.as_slice(), g)))?;
    Ok(DevEval {
        score,
        metric: spec.metric.name().to_string(),
        direction: spec.direction,
        hypotheses,
    })
}

/// Token-weighted mean teacher-forced loss over labeled examples.
pub fn dev_loss<T: Real>(model: &Seq2Seq<T>, vocab: &Vocabulary, examples: &[Example], max_len: usize) -> Result<f64> {
    let pairs: Vec<(Vec<TokenId>, Vec<TokenId>)> = examples
        .iter()
        .map(|e| (terminate(vocab.encode(&e.source), max_len), terminate(vocab.encode(&e.target), max_len)))
        .collect();
    sequence_loss(model, &pairs)
}

fn sequence_loss<T: Real>(model: &Seq2Seq<T>, pairs: &[(Vec<TokenId>, Vec<TokenId>)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::invalid("empty evaluation set"));
    }
    let (mut total, mut tokens) = (0.0, 0usize);
    for chunk in pairs.chunks(32) {
        let batch = Seq2SeqBatch::from_sequences(chunk)?;
        let mut s = model.eval_session();
        let loss = s.seq2seq_loss(&batch.src, &batch.dec_in, &batch.targets)?;
        let n = batch.num_target_tokens();
        total += s.graph.value(loss)[0].to_f64() * n as f64;
        tokens += n;
    }
    Ok(total / tokens as f64)
}

/// Saves a model directory: weights, config and vocabulary.
pub fn save_bundle<T: Real>(dir: &Path, model: &Seq2Seq<T>, vocab: &Vocabulary) -> Result<()> {
    fs::create_dir_all(dir)?;
    model.save(&dir.join("model.octo"))?;
    fs::write(dir.join("config.json"), serde_json::to_string_pretty(model.config())?)?;
    vocab.save(&dir.join("vocab.txt"))
}

pub fn load_bundle(dir: &Path) -> Result<(Seq2Seq<f32>, Vocabulary)> {
    let config: ModelConfig = serde_json::from_str(&fs::read_to_string(dir.join("config.json"))?)?;
    let vocab = Vocabulary::load(&dir.join("vocab.txt"))?;
    if vocab.size() != config.vocab_size {
        return Err(Error::format(
            "model directory",
            format!("vocabulary has {} entries, model expects {}", vocab.size(), config.vocab_size),
        ));
    }
    Ok((Seq2Seq::load(config, &dir.join("model.octo"))?, vocab))
}

#[derive(Serialize, Deserialize)]
struct TrainerState {
    step: u64,
    optimizer_step: u64,
    config: TrainConfig,
}

/// Summary of a finished run.
#[derive(Clone, Debug, Default)]
pub struct TrainReport {
    pub losses: Vec<f64>,
    pub checkpoints: Vec<CheckpointMeta>,
    pub best: Option<usize>,
}

/// Owns the model and optimizer for one training run.
pub struct Trainer {
    pub model: Seq2Seq<f32>,
    pub vocab: Vocabulary,
    cfg: TrainConfig,
    data: Datasets,
    optimizer: OptimizerState<f32>,
    mixer: Option<TaskMixer>,
    unlabeled: Vec<Vec<TokenId>>,
    step: u64,
    max_len: usize,
}

impl Trainer {
    pub fn new(model: Seq2Seq<f32>, vocab: Vocabulary, cfg: TrainConfig, data: Datasets) -> Result<Self> {
        cfg.validate()?;
        if vocab.size() != model.config().vocab_size {
            return Err(Error::invalid("vocabulary and model disagree on size"));
        }
        match cfg.strategy {
            Strategy::Pretrain if data.unlabeled.is_empty() => return Err(Error::invalid("pretraining needs unlabeled text")),
            Strategy::SingleTask | Strategy::Multitask if data.labeled.is_empty() => {
                return Err(Error::invalid("finetuning needs labeled examples"))
            }
            Strategy::Joint if data.unlabeled.is_empty() => return Err(Error::invalid("joint training needs unlabeled text")),
            Strategy::Joint if data.labeled.is_empty() && cfg.labeled_ratio > 0.0 => {
                return Err(Error::invalid("joint training with labeled_ratio > 0 needs labeled examples"))
            }
            _ => {}
        }
        if cfg.strategy == Strategy::SingleTask && data.labeled.iter().any(|e| e.task != data.labeled[0].task) {
            return Err(Error::invalid("single_task training data mixes tasks"));
        }
        let mixer = if data.labeled.is_empty() {
            None
        } else {
            Some(TaskMixer::new(&data.labeled, cfg.task_weights.as_ref())?)
        };
        let unlabeled: Vec<Vec<TokenId>> = data.unlabeled.iter().map(|t| vocab.encode(t)).filter(|t| !t.is_empty()).collect();
        if matches!(cfg.strategy, Strategy::Pretrain | Strategy::Joint) && unlabeled.is_empty() {
            return Err(Error::invalid("unlabeled text encodes to nothing"));
        }
        let max_len = cfg.max_len.unwrap_or(usize::MAX).min(model.config().max_seq_len);
        let optimizer = OptimizerState::new(model.params(), cfg.optimizer)?;
        Ok(Trainer {
            model,
            vocab,
            cfg,
            data,
            optimizer,
            mixer,
            unlabeled,
            step: 0,
            max_len,
        })
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    fn pool_size(&self) -> usize {
        match self.cfg.strategy {
            Strategy::Pretrain => self.unlabeled.len(),
            Strategy::SingleTask | Strategy::Multitask => self.data.labeled.len(),
            Strategy::Joint => self.unlabeled.len() + self.data.labeled.len(),
        }
    }

    pub fn steps_per_epoch(&self) -> u64 {
        self.pool_size().div_ceil(self.cfg.batch_size) as u64
    }

    pub fn total_steps(&self) -> u64 {
        match (self.cfg.max_steps, self.cfg.max_epochs) {
            (Some(s), _) => s,
            (None, Some(e)) => e * self.steps_per_epoch(),
            (None, None) => 0,
        }
    }

    /// Learning rate applied by the update at `step` (0-based).
    pub fn learning_rate_at(&self, step: u64) -> f64 {
        let base = self.cfg.optimizer.learning_rate;
        let total = self.total_steps();
        if !self.cfg.linear_decay || total == 0 {
            return base;
        }
        base * (total.saturating_sub(step) as f64 / total as f64)
    }

    fn labeled_pair(&self, i: usize) -> (Vec<TokenId>, Vec<TokenId>) {
        let e = &self.data.labeled[i];
        (terminate(self.vocab.encode(&e.source), self.max_len), terminate(self.vocab.encode(&e.target), self.max_len))
    }

    /// The batch used at a given step.
    pub fn batch_at(&self, step: u64) -> Result<Seq2SeqBatch> {
        let (seed, bs) = (self.cfg.seed, self.cfg.batch_size);
        let mut pairs = Vec::with_capacity(bs);
        match self.cfg.strategy {
            Strategy::SingleTask => {
                let spe = self.steps_per_epoch();
                let (epoch, k) = (step / spe, (step % spe) as usize);
                let mut perm: Vec<usize> = (0..self.data.labeled.len()).collect();
                perm.shuffle(&mut stream(seed, epoch, Purpose::Epoch));
                for &i in perm.iter().skip(k * bs).take(bs) {
                    pairs.push(self.labeled_pair(i));
                }
            }
            Strategy::Multitask => {
                let mixer = self.mixer.as_ref().expect("labeled data present");
                let (_, idx) = mixer.sample_task_batch(&mut stream(seed, step, Purpose::Labeled), bs);
                pairs.extend(idx.into_iter().map(|i| self.labeled_pair(i)));
            }
            Strategy::Pretrain | Strategy::Joint => {
                let mut mix = stream(seed, step, Purpose::Mix);
                let mut pick = stream(seed, step, Purpose::Unlabeled);
                let mut corrupt = stream(seed, step, Purpose::Corrupt);
                let mut labeled = stream(seed, step, Purpose::Labeled);
                for _ in 0..bs {
                    let use_labeled = self.cfg.strategy == Strategy::Joint
                        && self.cfg.labeled_ratio > 0.0
                        && mix.random::<f64>() < self.cfg.labeled_ratio;
                    if use_labeled {
                        let mixer = self.mixer.as_ref().expect("labeled data present");
                        pairs.push(self.labeled_pair(mixer.sample_example(&mut labeled)));
                    } else {
                        let text = &self.unlabeled[pick.random_range(0..self.unlabeled.len())];
                        pairs.push(denoising_pair(text, &self.cfg.denoising, &self.vocab, self.max_len, &mut corrupt)?);
                    }
                }
            }
        }
        Seq2SeqBatch::from_sequences(&pairs)
    }

    /// Runs one optimizer step and returns the batch loss.
    pub fn train_step(&mut self) -> Result<f64> {
        let batch = self.batch_at(self.step)?;
        let mut rng = stream(self.cfg.seed, self.step, Purpose::Dropout);
        let dropout_seed = rng.random::<u64>();
        let mut s = self.model.train_session(dropout_seed);
        let loss = s.seq2seq_loss(&batch.src, &batch.dec_in, &batch.targets)?;
        let value = s.graph.value(loss)[0].to_f64();
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("training loss at step {}", self.step + 1)));
        }
        let graph = s.into_graph();
        self.model.params_mut().zero_grad();
        graph.backward_into(loss, self.model.params_mut())?;
        self.optimizer.config.learning_rate = self.learning_rate_at(self.step);
        self.optimizer.step(self.model.params_mut())?;
        self.step += 1;
        Ok(value)
    }

    /// Scores the current model on the dev data. Single-task runs use the
    /// task metric; other strategies use dev loss (lower is better).
    pub fn evaluate(&self) -> Result<(f64, String, Direction)> {
        if self.cfg.strategy == Strategy::SingleTask && !self.data.dev.is_empty() {
            let r = evaluate_dev(&self.model, &self.vocab, &self.data.dev, self.max_len, &self.data.gold_edits)?;
            return Ok((r.score, r.metric, r.direction));
        }
        let mut pairs: Vec<(Vec<TokenId>, Vec<TokenId>)> = self
            .data
            .dev
            .iter()
            .map(|e| (terminate(self.vocab.encode(&e.source), self.max_len), terminate(self.vocab.encode(&e.target), self.max_len)))
            .collect();
        if pairs.is_empty() {
            // no labeled dev data: fixed corruptions of the first unlabeled texts
            let mut rng = stream(self.cfg.seed, 0, Purpose::Dev);
            for t in self.unlabeled.iter().take(64) {
                pairs.push(denoising_pair(t, &self.cfg.denoising, &self.vocab, self.max_len, &mut rng)?);
            }
        }
        Ok((sequence_loss(&self.model, &pairs)?, "loss".into(), Direction::Lower))
    }

    /// Trains to the configured budget. With `out`, appends to
    /// `loss.log`, writes `step-NNNNNN/` checkpoints with
    /// `checkpoints.jsonl`, and copies the best one to `best/`.
    pub fn run(&mut self, out: Option<&Path>) -> Result<TrainReport> {
        let total = self.total_steps();
        let start = Instant::now();
        let mut log = match out {
            Some(dir) => {
                fs::create_dir_all(dir)?;
                Some(fs::OpenOptions::new().create(true).append(true).open(dir.join("loss.log"))?)
            }
            None => None,
        };
        let mut report = TrainReport::default();
        if let Some(dir) = out {
            report.checkpoints = read_metas(dir)?;
        }
        while self.step < total {
            let loss = self.train_step()?;
            report.losses.push(loss);
            if let Some(f) = log.as_mut() {
                writeln!(f, "{}\t{}\t{}", self.step, loss, start.elapsed().as_millis())?;
            }
            let every = self.cfg.eval_every;
            if every > 0 && (self.step % every == 0 || self.step == total) {
                let (score, metric, direction) = self.evaluate()?;
                let path = match out {
                    Some(dir) => {
                        let p = dir.join(format!("step-{:06}", self.step));
                        self.save_checkpoint(&p)?;
                        p.display().to_string()
                    }
                    None => String::new(),
                };
                let meta = CheckpointMeta {
                    step: self.step,
                    score,
                    metric,
                    direction,
                    path,
                };
                if let Some(dir) = out {
                    let mut f = fs::OpenOptions::new().create(true).append(true).open(dir.join("checkpoints.jsonl"))?;
                    writeln!(f, "{}", serde_json::to_string(&meta)?)?;
                }
                report.checkpoints.push(meta);
            }
        }
        if !report.checkpoints.is_empty() {
            let best = select_best_checkpoint(&report.checkpoints)?;
            report.best = Some(best);
            if let Some(dir) = out {
                let src = PathBuf::from(&report.checkpoints[best].path);
                let dst = dir.join("best");
                fs::create_dir_all(&dst)?;
                for f in ["model.octo", "config.json", "vocab.txt"] {
                    fs::copy(src.join(f), dst.join(f))?;
                }
            }
        } else if let Some(dir) = out {
            save_bundle(&dir.join("best"), &self.model, &self.vocab)?;
        }
        Ok(report)
    }

    /// Writes the model bundle plus optimizer moments and trainer state.
    pub fn save_checkpoint(&self, dir: &Path) -> Result<()> {
        save_bundle(dir, &self.model, &self.vocab)?;
        let mut arrays = Vec::with_capacity(2 * self.optimizer.first_moment.len());
        for (id, (name, t)) in self.model.params().iter().enumerate() {
            for (tag, m) in [("m", &self.optimizer.first_moment[id]), ("v", &self.optimizer.second_moment[id])] {
                arrays.push(NamedArray {
                    name: format!("{tag}.{name}"),
                    shape: t.shape().to_vec(),
                    data: m.clone(),
                });
            }
        }
        checkpoint::write_file(&dir.join("optimizer.octo"), &arrays)?;
        let state = TrainerState {
            step: self.step,
            optimizer_step: self.optimizer.step,
            config: self.cfg.clone(),
        };
        fs::write(dir.join("state.json"), serde_json::to_string_pretty(&state)?)?;
        Ok(())
    }

    /// Restores a run saved by [`Trainer::save_checkpoint`]. The stored
    /// configuration is used.
    pub fn resume(dir: &Path, data: Datasets) -> Result<Self> {
        let (model, vocab) = load_bundle(dir)?;
        let state: TrainerState = serde_json::from_str(&fs::read_to_string(dir.join("state.json"))?)?;
        let mut trainer = Trainer::new(model, vocab, state.config, data)?;
        let arrays = checkpoint::read_file(&dir.join("optimizer.octo"))?;
        let n = trainer.model.params().len();
        if arrays.len() != 2 * n {
            return Err(Error::format("optimizer state", format!("expected {} arrays, found {}", 2 * n, arrays.len())));
        }
        for (id, pair) in arrays.chunks(2).enumerate() {
            let name = trainer.model.params().name(id);
            let len = trainer.model.params().tensor(id).len();
            if pair[0].name != format!("m.{name}") || pair[1].name != format!("v.{name}") || pair[0].data.len() != len || pair[1].data.len() != len {
                return Err(Error::format("optimizer state", format!("moments for {name} do not match the model")));
            }
            trainer.optimizer.first_moment[id] = pair[0].data.clone();
            trainer.optimizer.second_moment[id] = pair[1].data.clone();
        }
        trainer.optimizer.step = state.optimizer_step;
        trainer.step = state.step;
        Ok(trainer)
    }
}

fn read_metas(dir: &Path) -> Result<Vec<CheckpointMeta>> {
    let path = dir.join("checkpoints.jsonl");
    if !path.exists() {
        return Ok(Vec::new());
    }
    fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}

/// Parses `loss.log` into `(step, loss)` pairs, ignoring wall-clock time.
pub fn read_loss_log(path: &Path) -> Result<Vec<(u64, f64)>> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .map(|(i, l)| {
            let err = |m: &str| Error::Parse { line: i + 1, msg: m.to_string() };
            let mut f = l.split('\t');
            let step = f.next().and_then(|s| s.parse().ok()).ok_or_else(|| err("bad step"))?;
            let loss = f.next().and_then(|s| s.parse().ok()).ok_or_else(|| err("bad loss"))?;
            f.next().ok_or_else(|| err("missing wallclock"))?;
            Ok((step, loss))
        })
        .collect()
}

/// Trailing moving average with the given window.
pub fn smooth(values: &[f64], window: usize) -> Vec<f64> {
    let w = window.max(1);
    let mut out = Vec::with_capacity(values.len());
    let mut sum = 0.0;
    for (i, v) in values.iter().enumerate() {
        sum += v;
        if i >= w {
            sum -= values[i - w];
        }
        out.push(sum / (i + 1).min(w) as f64);
    }
    out
}
