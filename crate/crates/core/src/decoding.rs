//! Inference-time search: greedy, beam, and top-k / nucleus sampling, with
//! n-best output and n-gram repetition blocking.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Seq2Seq, TokenMatrix};
use crate::numerics::{log_softmax, Real, Tensor};
use crate::tokenizer::{TokenId, EOS_ID, PAD_ID};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecodeMethod {
    Greedy,
    Beam,
    Sampling,
}

impl FromStr for DecodeMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "greedy" => Ok(DecodeMethod::Greedy),
            "beam" => Ok(DecodeMethod::Beam),
            "sampling" => Ok(DecodeMethod::Sampling),
            other => Err(Error::invalid(format!(
                "unknown search method '{other}' (expected greedy, beam or sampling)"
            ))),
        }
    }
}

impl fmt::Display for DecodeMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DecodeMethod::Greedy => "greedy",
            DecodeMethod::Beam => "beam",
            DecodeMethod::Sampling => "sampling",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecodeConfig {
    pub method: DecodeMethod,
    pub nbeam: usize,
    pub max_outputs: usize,
    /// Maximum generated tokens, eos included.
    pub seq_length: usize,
    pub no_repeat_ngram_size: usize,
    pub top_k: usize,
    pub top_p: f64,
    pub seed: u64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            method: DecodeMethod::Beam,
            nbeam: 5,
            max_outputs: 3,
            seq_length: 2048,
            no_repeat_ngram_size: 0,
            top_k: 0,
            top_p: 1.0,
            seed: 0,
        }
    }
}

impl DecodeConfig {
    /// Settings used by the interactive session.
    pub fn interactive() -> Self {
        DecodeConfig {
            seq_length: 300,
            max_outputs: 3,
            ..Self::default()
        }
    }

    pub fn greedy(seq_length: usize) -> Self {
        DecodeConfig {
            method: DecodeMethod::Greedy,
            max_outputs: 1,
            seq_length,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seq_length == 0 {
            return Err(Error::invalid("seq_length must be at least 1"));
        }
        if self.max_outputs == 0 {
            return Err(Error::invalid("max_outputs must be at least 1"));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(Error::invalid(format!("top_p {} outside (0, 1]", self.top_p)));
        }
        if self.method == DecodeMethod::Beam && self.nbeam < self.max_outputs {
            return Err(Error::invalid(format!(
                "nbeam {} is smaller than max_outputs {}",
                self.nbeam, self.max_outputs
            )));
        }
        Ok(())
    }
}

/// A generated sequence. `tokens` includes the final eos when `finished`.
#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    pub tokens: Vec<TokenId>,
    pub logprob: f64,
    pub finished: bool,
}

impl Hypothesis {
    /// Log-probability per generated token.
    pub fn score(&self) -> f64 {
        self.logprob / self.tokens.len().max(1) as f64
    }

    /// Tokens without the trailing eos.
    pub fn content(&self) -> &[TokenId] {
        self.tokens.strip_suffix(&[EOS_ID]).unwrap_or(&self.tokens)
    }
}

/// Sets to −∞ every token that would complete an n-gram already present in
/// `history`.
pub fn block_repeat_ngrams(logprobs: &mut [f64], history: &[TokenId], n: usize) {
    if n == 0 || history.len() + 1 < n {
        return;
    }
    if n == 1 {
        for &t in history {
            if let Some(v) = logprobs.get_mut(t as usize) {
                *v = f64::NEG_INFINITY;
            }
        }
        return;
    }
    let suffix = &history[history.len() - (n - 1)..];
    for w in history.windows(n) {
        if &w[..n - 1] == suffix {
            if let Some(v) = logprobs.get_mut(w[n - 1] as usize) {
                *v = f64::NEG_INFINITY;
            }
        }
    }
}

/// Token ids ordered by descending value; ties go to the lower id.
fn ranked(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).filter(|&i| values[i] > f64::NEG_INFINITY).collect();
    order.sort_by(|&a, &b| values[b].partial_cmp(&values[a]).unwrap_or(Ordering::Equal).then(a.cmp(&b)));
    order
}

/// Token ids and renormalized probabilities left after the top-k filter
/// followed by the nucleus filter.
pub fn sampling_support(logprobs: &[f64], top_k: usize, top_p: f64) -> Result<Vec<(TokenId, f64)>> {
    let order = ranked(logprobs);
    if order.is_empty() {
        return Err(Error::invalid("no token has finite log-probability"));
    }
    let keep = if top_k == 0 { order.len() } else { top_k.min(order.len()) };
    let best = logprobs[order[0]];
    let weights: Vec<f64> = order[..keep].iter().map(|&i| (logprobs[i] - best).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut support = Vec::with_capacity(keep);
    let mut mass = 0.0;
    for (&i, w) in order.iter().zip(&weights) {
        let p = w / total;
        support.push((i as TokenId, p));
        mass += p;
        if top_p < 1.0 && mass >= top_p - 1e-12 {
            break;
        }
    }
    let kept: f64 = support.iter().map(|(_, p)| p).sum();
    for (_, p) in &mut support {
        *p /= kept;
    }
    Ok(support)
}

/// Draws one token after top-k and nucleus filtering.
pub fn sample_step<R: Rng + ?Sized>(logprobs: &[f64], top_k: usize, top_p: f64, rng: &mut R) -> Result<TokenId> {
    let support = sampling_support(logprobs, top_k, top_p)?;
    let mut u = rng.random::<f64>();
    for &(t, p) in &support {
        if u < p {
            return Ok(t);
        }
        u -= p;
    }
    Ok(support.last().expect("non-empty").0)
}

fn check_rows(rows: &[Vec<f64>], expected: usize) -> Result<()> {
    if rows.len() != expected {
        return Err(Error::shape(format!("step function returned {} rows for {expected} prefixes", rows.len())));
    }
    Ok(())
}

/// Beam search over a batched step function mapping generated prefixes to
/// next-token log-probabilities. Returns all retired hypotheses (and the
/// live beams if `max_len` is reached first), best first by
/// [`Hypothesis::score`].
pub fn beam_search<F>(mut step_fn: F, nbeam: usize, max_len: usize, no_repeat: usize) -> Result<Vec<Hypothesis>>
where
    F: FnMut(&[Vec<TokenId>]) -> Result<Vec<Vec<f64>>>,
{
    if nbeam == 0 || max_len == 0 {
        return Err(Error::invalid("beam search needs nbeam ≥ 1 and max_len ≥ 1"));
    }
    let mut live = vec![Hypothesis {
        tokens: Vec::new(),
        logprob: 0.0,
        finished: false,
    }];
    let mut pool: Vec<Hypothesis> = Vec::new();
    for _ in 0..max_len {
        let prefixes: Vec<Vec<TokenId>> = live.iter().map(|h| h.tokens.clone()).collect();
        let rows = step_fn(&prefixes)?;
        check_rows(&rows, live.len())?;
        let mut cands: Vec<(f64, usize, usize)> = Vec::new();
        for (b, (h, mut row)) in live.iter().zip(rows).enumerate() {
            block_repeat_ngrams(&mut row, &h.tokens, no_repeat);
            for (t, &lp) in row.iter().enumerate() {
                if lp > f64::NEG_INFINITY {
                    cands.push((h.logprob + lp, t, b));
                }
            }
        }
        cands.sort_by(|a, b| {
            b.0.partial_cmp(&a.0)
                .unwrap_or(Ordering::Equal)
                .then(a.1.cmp(&b.1))
                .then(a.2.cmp(&b.2))
        });
        cands.truncate(nbeam);
        let mut next = Vec::with_capacity(nbeam);
        for (lp, t, b) in cands {
            let mut tokens = live[b].tokens.clone();
            tokens.push(t as TokenId);
            let finished = t as TokenId == EOS_ID;
            let h = Hypothesis {
                tokens,
                logprob: lp,
                finished,
            };
            if finished {
                pool.push(h);
            } else {
                next.push(h);
            }
        }
        live = next;
        if pool.len() >= nbeam || live.is_empty() {
            break;
        }
    }
    if pool.len() < nbeam {
        pool.extend(live);
    }
    pool.sort_by(|a, b| b.score().partial_cmp(&a.score()).unwrap_or(Ordering::Equal));
    Ok(pool)
}

/// Argmax decoding; stops at eos, at `max_len`, or when every token is
/// blocked.
pub fn greedy_search<F>(mut step_fn: F, max_len: usize, no_repeat: usize) -> Result<Hypothesis>
where
    F: FnMut(&[Vec<TokenId>]) -> Result<Vec<Vec<f64>>>,
{
    let mut h = Hypothesis {
        tokens: Vec::new(),
        logprob: 0.0,
        finished: false,
    };
    while h.tokens.len() < max_len {
        let mut rows = step_fn(std::slice::from_ref(&h.tokens))?;
        check_rows(&rows, 1)?;
        let row = &mut rows[0];
        block_repeat_ngrams(row, &h.tokens, no_repeat);
        let Some(&best) = ranked(row).first() else { break };
        h.tokens.push(best as TokenId);
        h.logprob += row[best];
        if best as TokenId == EOS_ID {
            h.finished = true;
            break;
        }
    }
    Ok(h)
}

/// Draws `count` independent sequences, in order, from one RNG.
pub fn sample_search<F, R>(
    mut step_fn: F,
    max_len: usize,
    no_repeat: usize,
    top_k: usize,
    top_p: f64,
    count: usize,
    rng: &mut R,
) -> Result<Vec<Hypothesis>>
where
    F: FnMut(&[Vec<TokenId>]) -> Result<Vec<Vec<f64>>>,
    R: Rng + ?Sized,
{
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let mut h = Hypothesis {
            tokens: Vec::new(),
            logprob: 0.0,
            finished: false,
        };
        while h.tokens.len() < max_len {
            let mut rows = step_fn(std::slice::from_ref(&h.tokens))?;
            check_rows(&rows, 1)?;
            let row = &mut rows[0];
            block_repeat_ngrams(row, &h.tokens, no_repeat);
            if row.iter().all(|&v| v == f64::NEG_INFINITY) {
                break;
            }
            let t = sample_step(row, top_k, top_p, rng)?;
            h.tokens.push(t);
            h.logprob += row[t as usize];
            if t == EOS_ID {
                h.finished = true;
                break;
            }
        }
        out.push(h);
    }
    Ok(out)
}

/// Next-token log-probabilities from a model for several encoder inputs.
/// Each prefix row is paired with encoder row `source_of[i]`.
pub struct ModelStepper<'m, T: Real> {
    model: &'m Seq2Seq<T>,
    enc: Vec<T>,
    src_len: usize,
    src_mask: Vec<bool>,
}

impl<'m, T: Real> ModelStepper<'m, T> {
    /// Runs the encoder once over terminated source sequences.
    pub fn new(model: &'m Seq2Seq<T>, sources: &[Vec<TokenId>]) -> Result<Self> {
        let src = TokenMatrix::from_rows(sources, PAD_ID)?;
        let mut s = model.eval_session();
        let enc = s.encode(&src)?;
        Ok(ModelStepper {
            model,
            enc: s.graph.value(enc).to_vec(),
            src_len: src.cols,
            src_mask: src.mask,
        })
    }

    /// Longest generation the model can condition on.
    pub fn max_len(&self) -> usize {
        self.model.config().max_seq_len
    }

    /// `prefixes[i]` continues source `source_of[i]`; all prefixes have the
    /// same length.
    pub fn step(&self, source_of: &[usize], prefixes: &[Vec<TokenId>]) -> Result<Vec<Vec<f64>>> {
        let d = self.model.config().d_model;
        let (l, b) = (self.src_len, prefixes.len());
        let t = prefixes.first().map_or(0, Vec::len) + 1;
        if prefixes.iter().any(|p| p.len() + 1 != t) || source_of.len() != b {
            return Err(Error::shape("prefixes must share one length and have one source each"));
        }
        let mut enc = Vec::with_capacity(b * l * d);
        let mut mask = Vec::with_capacity(b * l);
        for &s in source_of {
            enc.extend_from_slice(&self.enc[s * l * d..(s + 1) * l * d]);
            mask.extend_from_slice(&self.src_mask[s * l..(s + 1) * l]);
        }
        let dec: Vec<Vec<TokenId>> = prefixes
            .iter()
            .map(|p| std::iter::once(PAD_ID).chain(p.iter().copied()).collect())
            .collect();
        let dec = TokenMatrix::from_rows(&dec, PAD_ID)?;
        let mut s = self.model.eval_session();
        let enc = s.graph.leaf(&Tensor::new(vec![b, l, d], enc)?);
        let logits = s.decode_logits(enc, &mask, &dec)?;
        let v = self.model.config().vocab_size;
        let values = s.graph.value(logits);
        Ok((0..b)
            .map(|r| {
                let last = (r * t + t - 1) * v;
                let row: Vec<f64> = values[last..last + v].iter().map(|x| x.to_f64()).collect();
                log_softmax(&row)
            })
            .collect())
    }
}

/// Decodes one terminated source sequence with the configured method.
pub fn generate<T: Real>(model: &Seq2Seq<T>, source: &[TokenId], cfg: &DecodeConfig) -> Result<Vec<Hypothesis>> {
    cfg.validate()?;
    let stepper = ModelStepper::new(model, &[source.to_vec()])?;
    let max_len = cfg.seq_length.min(stepper.max_len());
    let step = |p: &[Vec<TokenId>]| stepper.step(&vec![0; p.len()], p);
    match cfg.method {
        DecodeMethod::Greedy => Ok(vec![greedy_search(step, max_len, cfg.no_repeat_ngram_size)?]),
        DecodeMethod::Beam => {
            let mut out = beam_search(step, cfg.nbeam, max_len, cfg.no_repeat_ngram_size)?;
            out.truncate(cfg.max_outputs);
            Ok(out)
        }
        DecodeMethod::Sampling => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            sample_search(step, max_len, cfg.no_repeat_ngram_size, cfg.top_k, cfg.top_p, cfg.max_outputs, &mut rng)
        }
    }
}

/// Greedy decoding of many sources at once, one hypothesis per source.
pub fn greedy_batch<T: Real>(model: &Seq2Seq<T>, sources: &[Vec<TokenId>], max_len: usize) -> Result<Vec<Hypothesis>> {
    if sources.is_empty() {
        return Ok(Vec::new());
    }
    let stepper = ModelStepper::new(model, sources)?;
    let max_len = max_len.min(stepper.max_len());
    let n = sources.len();
    let all: Vec<usize> = (0..n).collect();
    let mut prefixes: Vec<Vec<TokenId>> = vec![Vec::new(); n];
    let mut hyps: Vec<Hypothesis> = vec![
        Hypothesis {
            tokens: Vec::new(),
            logprob: 0.0,
            finished: false,
        };
        n
    ];
    for _ in 0..max_len {
        let active: Vec<usize> = all.iter().copied().filter(|&i| !hyps[i].finished).collect();
        if active.is_empty() {
            break;
        }
        let rows = stepper.step(&active, &active.iter().map(|&i| prefixes[i].clone()).collect::<Vec<_>>())?;
        for (&i, row) in active.iter().zip(rows) {
            let best = ranked(&row)[0];
            prefixes[i].push(best as TokenId);
            let h = &mut hyps[i];
            h.tokens.push(best as TokenId);
            h.logprob += row[best];
            h.finished = best as TokenId == EOS_ID;
        }
    }
    Ok(hyps)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ln(p: &[f64]) -> Vec<f64> {
        p.iter().map(|v| v.ln()).collect()
    }

    // V = {eos=1, A=3, B=4} padded to 5 entries
    fn toy(prefix: &[TokenId]) -> Vec<f64> {
        let mut p = [0.0; 5];
        match prefix {
            [] => {
                p[3] = 0.6;
                p[4] = 0.4;
            }
            [3] => {
                p[1] = 0.5;
                p[3] = 0.25;
                p[4] = 0.25;
            }
            [4] => {
                p[1] = 0.9;
                p[3] = 0.05;
                p[4] = 0.05;
            }
            _ => p[1] = 1.0,
        }
        ln(&p)
    }

    fn toy_step(p: &[Vec<TokenId>]) -> Result<Vec<Vec<f64>>> {
        Ok(p.iter().map(|x| toy(x)).collect())
    }

    #[test]
    fn toy_beam_prefers_b_eos() {
        let out = beam_search(toy_step, 2, 4, 0).unwrap();
        assert_eq!(out[0].tokens, vec![4, EOS_ID]);
        assert!((out[0].logprob - 0.36f64.ln()).abs() < 1e-12);
        assert_eq!(out[1].tokens, vec![3, EOS_ID]);
        assert!((out[1].logprob - 0.30f64.ln()).abs() < 1e-12);
        let g = greedy_search(toy_step, 4, 0).unwrap();
        assert_eq!(g.tokens, vec![3, EOS_ID]);
        assert_eq!(beam_search(toy_step, 1, 4, 0).unwrap()[0].tokens, g.tokens);
    }

    #[test]
    fn certain_path_is_unique() {
        let step = |p: &[Vec<TokenId>]| -> Result<Vec<Vec<f64>>> {
            Ok(p.iter()
                .map(|x| {
                    let mut r = vec![f64::NEG_INFINITY; 6];
                    r[if x.len() < 3 { 5 - x.len() } else { 1 }] = 0.0;
                    r
                })
                .collect())
        };
        for nbeam in 1..5 {
            let out = beam_search(step, nbeam, 10, 0).unwrap();
            assert_eq!(out.len(), 1);
            assert_eq!(out[0].tokens, vec![5, 4, 3, EOS_ID]);
        }
    }

    #[test]
    fn respects_max_len() {
        let step = |p: &[Vec<TokenId>]| -> Result<Vec<Vec<f64>>> { Ok(p.iter().map(|_| ln(&[0.0, 0.1, 0.0, 0.9])).collect()) };
        let g = greedy_search(step, 5, 0).unwrap();
        assert_eq!(g.tokens.len(), 5);
        assert!(!g.finished);
        for h in beam_search(step, 3, 5, 0).unwrap() {
            assert!(h.tokens.len() <= 5);
        }
    }

    #[test]
    fn ngram_blocking_examples() {
        let mut lp = vec![0.0; 5];
        block_repeat_ngrams(&mut lp, &[3, 4, 3], 2);
        assert_eq!(lp[4], f64::NEG_INFINITY);
        assert_eq!(lp.iter().filter(|v| v.is_finite()).count(), 4);
        let mut lp = vec![0.0; 5];
        block_repeat_ngrams(&mut lp, &[3, 4, 3], 0);
        assert!(lp.iter().all(|v| v.is_finite()));
        block_repeat_ngrams(&mut lp, &[3], 3);
        assert!(lp.iter().all(|v| v.is_finite()));
        block_repeat_ngrams(&mut lp, &[3, 4], 1);
        assert_eq!(lp[3], f64::NEG_INFINITY);
        assert_eq!(lp[4], f64::NEG_INFINITY);
    }

    #[test]
    fn nucleus_support() {
        let lp = ln(&[0.5, 0.3, 0.2]);
        let ids: Vec<TokenId> = sampling_support(&lp, 0, 0.7).unwrap().iter().map(|s| s.0).collect();
        assert_eq!(ids, vec![0, 1]);
        let ids: Vec<TokenId> = sampling_support(&lp, 0, 0.5).unwrap().iter().map(|s| s.0).collect();
        assert_eq!(ids, vec![0]);
        let s = sampling_support(&lp, 2, 1.0).unwrap();
        assert!((s[0].1 - 0.625).abs() < 1e-12);
        let tie = sampling_support(&ln(&[0.25; 4]), 2, 1.0).unwrap();
        assert_eq!(tie.iter().map(|s| s.0).collect::<Vec<_>>(), vec![0, 1]);
    }

    #[test]
    fn top_k_one_is_argmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let lp = ln(&[0.2, 0.1, 0.4, 0.3]);
        for _ in 0..200 {
            assert_eq!(sample_step(&lp, 1, 1.0, &mut rng).unwrap(), 2);
        }
    }

    #[test]
    fn sampling_is_reproducible() {
        let step = |p: &[Vec<TokenId>]| -> Result<Vec<Vec<f64>>> { Ok(p.iter().map(|_| ln(&[0.0, 0.2, 0.3, 0.5])).collect()) };
        let a = sample_search(step, 20, 0, 0, 1.0, 3, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = sample_search(step, 20, 0, 0, 1.0, 3, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn config_validation() {
        assert!(DecodeConfig::default().validate().is_ok());
        let bad = DecodeConfig {
            nbeam: 2,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = DecodeConfig {
            top_p: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        assert_eq!("beam".parse::<DecodeMethod>().unwrap(), DecodeMethod::Beam);
        assert!("topk".parse::<DecodeMethod>().is_err());
    }

    #[test]
    fn batched_greedy_matches_single() {
        use crate::model::ModelConfig;
        let model = Seq2Seq::<f32>::new(ModelConfig::tiny(12), 4).unwrap();
        let sources = vec![vec![3, 4, 5, EOS_ID], vec![6, EOS_ID], vec![7, 8, 9, 10, 11, EOS_ID]];
        let batch = greedy_batch(&model, &sources, 8).unwrap();
        for (src, h) in sources.iter().zip(&batch) {
            let single = generate(&model, src, &DecodeConfig::greedy(8)).unwrap();
            assert_eq!(single[0].tokens, h.tokens);
        }
    }
}
