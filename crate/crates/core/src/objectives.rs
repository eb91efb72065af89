//! Training example construction: span-corruption denoising and
//! teacher-forced sequence pairs.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::TokenMatrix;
use crate::tokenizer::{TokenId, Vocabulary, EOS_ID, PAD_ID};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenoisingConfig {
    pub corruption_rate: f64,
    pub mean_span_length: f64,
    /// Forces the number of spans; `Some(0)` disables corruption.
    #[serde(default)]
    pub n_spans_override: Option<usize>,
}

impl Default for DenoisingConfig {
    fn default() -> Self {
        DenoisingConfig {
            corruption_rate: 0.15,
            mean_span_length: 3.0,
            n_spans_override: None,
        }
    }
}

impl DenoisingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.corruption_rate > 0.0 && self.corruption_rate <= 1.0) {
            return Err(Error::invalid(format!("corruption_rate {} outside (0, 1]", self.corruption_rate)));
        }
        if !(self.mean_span_length >= 1.0 && self.mean_span_length.is_finite()) {
            return Err(Error::invalid(format!("mean_span_length {} below 1", self.mean_span_length)));
        }
        Ok(())
    }

    /// `(noise tokens, spans)` for a sequence of length `len`.
    pub fn budget(&self, len: usize) -> Result<(usize, usize)> {
        self.validate()?;
        let expected = self.corruption_rate * len as f64;
        let spans = match self.n_spans_override {
            Some(0) => return Ok((0, 0)),
            Some(n) => n,
            None => ((expected / self.mean_span_length).round() as usize).max(1),
        };
        let noise = (expected.round() as usize).max(spans);
        // every pair of neighbouring spans needs a kept token between them
        if noise + spans - 1 > len {
            return Err(Error::invalid(format!(
                "over-corruption: {noise} masked tokens in {spans} spans do not fit in {len} tokens"
            )));
        }
        Ok((noise, spans))
    }
}

/// Sorted `k` distinct values from `0..n`.
fn sorted_sample<R: Rng + ?Sized>(rng: &mut R, n: usize, k: usize) -> Vec<usize> {
    let mut v = sample(rng, n, k).into_vec();
    v.sort_unstable();
    v
}

/// Uniform composition of `total` into `parts` positive integers.
fn positive_composition<R: Rng + ?Sized>(rng: &mut R, total: usize, parts: usize) -> Vec<usize> {
    let cuts = sorted_sample(rng, total - 1, parts - 1);
    let mut out = Vec::with_capacity(parts);
    let mut prev = 0;
    for c in cuts {
        out.push(c + 1 - prev);
        prev = c + 1;
    }
    out.push(total - prev);
    out
}

/// Uniform composition of `total` into `parts` non-negative integers.
fn weak_composition<R: Rng + ?Sized>(rng: &mut R, total: usize, parts: usize) -> Vec<usize> {
    positive_composition(rng, total + parts, parts).into_iter().map(|p| p - 1).collect()
}

/// Replaces random non-adjacent spans with sentinels.
///
/// Returns `(input, target)`: the input keeps unmasked tokens with span `i`
/// replaced by sentinel `i`; the target lists each sentinel followed by the
/// tokens it hides and ends with eos. The layout is drawn uniformly among
/// all placements of the chosen span count and masked total.
pub fn corrupt_spans<R: Rng + ?Sized>(
    tokens: &[TokenId],
    cfg: &DenoisingConfig,
    vocab: &Vocabulary,
    rng: &mut R,
) -> Result<(Vec<TokenId>, Vec<TokenId>)> {
    if tokens.is_empty() {
        return Err(Error::invalid("cannot corrupt an empty sequence"));
    }
    if let Some(&s) = tokens.iter().find(|&&t| vocab.sentinel_index(t).is_some()) {
        return Err(Error::invalid(format!("input already contains sentinel id {s}")));
    }
    let (noise, spans) = cfg.budget(tokens.len())?;
    if spans == 0 {
        return Ok((tokens.to_vec(), vec![EOS_ID]));
    }
    if spans > vocab.num_sentinels() {
        return Err(Error::invalid(format!(
            "{spans} spans need more than the {} available sentinels",
            vocab.num_sentinels()
        )));
    }
    let span_lens = positive_composition(rng, noise, spans);
    // spans+1 gaps; the inner ones must keep at least one token
    let slack = tokens.len() - noise - (spans - 1);
    let mut gaps = weak_composition(rng, slack, spans + 1);
    for g in &mut gaps[1..spans] {
        *g += 1;
    }

    let mut input = Vec::with_capacity(tokens.len() - noise + spans);
    let mut target = Vec::with_capacity(noise + spans + 1);
    let mut pos = 0;
    for (i, &span) in span_lens.iter().enumerate() {
        input.extend_from_slice(&tokens[pos..pos + gaps[i]]);
        pos += gaps[i];
        let sentinel = vocab.sentinel(i)?;
        input.push(sentinel);
        target.push(sentinel);
        target.extend_from_slice(&tokens[pos..pos + span]);
        pos += span;
    }
    input.extend_from_slice(&tokens[pos..]);
    target.push(EOS_ID);
    Ok((input, target))
}

/// Inverse of [`corrupt_spans`]: fills each sentinel in `input` with the
/// target segment that follows the same sentinel.
pub fn splice(input: &[TokenId], target: &[TokenId], vocab: &Vocabulary) -> Result<Vec<TokenId>> {
    let body = target.strip_suffix(&[EOS_ID]).unwrap_or(target);
    let mut segments: Vec<&[TokenId]> = Vec::new();
    let mut start = None;
    for (pos, &t) in body.iter().enumerate() {
        if let Some(i) = vocab.sentinel_index(t) {
            if i != segments.len() + usize::from(start.is_some()) {
                return Err(Error::invalid(format!("target sentinel {i} out of order")));
            }
            if let Some(s) = start {
                segments.push(&body[s..pos]);
            }
            start = Some(pos + 1);
        } else if start.is_none() {
            return Err(Error::invalid("target does not start with a sentinel"));
        }
    }
    if let Some(s) = start {
        segments.push(&body[s..]);
    }

    let mut out = Vec::with_capacity(input.len() + target.len());
    let mut used = 0;
    for &t in input {
        match vocab.sentinel_index(t) {
            Some(i) if i == used && i < segments.len() => {
                out.extend_from_slice(segments[i]);
                used += 1;
            }
            Some(i) => return Err(Error::invalid(format!("input sentinel {i} has no matching target segment"))),
            None => out.push(t),
        }
    }
    if used != segments.len() {
        return Err(Error::invalid(format!(
            "target has {} segments but input uses {used}",
            segments.len()
        )));
    }
    Ok(out)
}

/// Padded teacher-forcing batch. `targets.mask` is the loss mask.
#[derive(Clone, Debug, PartialEq)]
pub struct Seq2SeqBatch {
    pub src: TokenMatrix,
    pub dec_in: TokenMatrix,
    pub targets: TokenMatrix,
}

impl Seq2SeqBatch {
    /// Pads finished sequences (eos already appended) and builds the
    /// shifted-right decoder inputs.
    pub fn from_sequences(pairs: &[(Vec<TokenId>, Vec<TokenId>)]) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        if pairs.iter().any(|(s, t)| s.is_empty() || t.is_empty()) {
            return Err(Error::invalid("empty source or target sequence"));
        }
        let srcs: Vec<Vec<TokenId>> = pairs.iter().map(|(s, _)| s.clone()).collect();
        let tgts: Vec<Vec<TokenId>> = pairs.iter().map(|(_, t)| t.clone()).collect();
        let dec: Vec<Vec<TokenId>> = tgts
            .iter()
            .map(|t| std::iter::once(PAD_ID).chain(t[..t.len() - 1].iter().copied()).collect())
            .collect();
        let mut dec_in = TokenMatrix::from_rows(&dec, PAD_ID)?;
        // the start token is pad but still a real decoder position
        dec_in.mask = TokenMatrix::from_rows(&tgts, PAD_ID)?.mask;
        Ok(Seq2SeqBatch {
            src: TokenMatrix::from_rows(&srcs, PAD_ID)?,
            dec_in,
            targets: TokenMatrix::from_rows(&tgts, PAD_ID)?,
        })
    }

    pub fn len(&self) -> usize {
        self.src.rows
    }

    pub fn is_empty(&self) -> bool {
        self.src.rows == 0
    }

    /// Number of target positions that contribute to the loss.
    pub fn num_target_tokens(&self) -> usize {
        self.targets.mask.iter().filter(|&&m| m).count()
    }
}

/// Truncates to `max_len − 1` tokens and appends eos.
pub fn terminate(mut ids: Vec<TokenId>, max_len: usize) -> Vec<TokenId> {
    ids.truncate(max_len.saturating_sub(1));
    ids.push(EOS_ID);
    ids
}

/// Encodes text pairs into a teacher-forcing batch. Sources and targets
/// are both truncated and terminated with eos.
pub fn make_batch<S: AsRef<str>, T: AsRef<str>>(pairs: &[(S, T)], vocab: &Vocabulary, max_len: usize) -> Result<Seq2SeqBatch> {
    if max_len < 2 {
        return Err(Error::invalid("max_len must leave room for eos"));
    }
    let mut seqs = Vec::with_capacity(pairs.len());
    for (src, tgt) in pairs {
        let s = vocab.encode(src.as_ref());
        if s.is_empty() {
            return Err(Error::invalid(format!("source {:?} encodes to nothing", src.as_ref())));
        }
        seqs.push((terminate(s, max_len), terminate(vocab.encode(tgt.as_ref()), max_len)));
    }
    Seq2SeqBatch::from_sequences(&seqs)
}

/// Builds a denoising example from raw text tokens.
pub fn denoising_pair<R: Rng + ?Sized>(
    tokens: &[TokenId],
    cfg: &DenoisingConfig,
    vocab: &Vocabulary,
    max_len: usize,
    rng: &mut R,
) -> Result<(Vec<TokenId>, Vec<TokenId>)> {
    let cut = &tokens[..tokens.len().min(max_len.saturating_sub(1))];
    let (input, mut target) = corrupt_spans(cut, cfg, vocab, rng)?;
    target.truncate(max_len);
    if target.last() != Some(&EOS_ID) {
        *target.last_mut().expect("non-empty") = EOS_ID;
    }
    Ok((terminate(input, max_len), target))
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::model::{ModelConfig, Seq2Seq};
    use crate::numerics::{cross_entropy, log_softmax, Tensor};
    use crate::tokenizer::TokenMode;

    fn vocab() -> Vocabulary {
        let chars: Vec<String> = "abcdefghijklmnopqrstuvwxyz".chars().map(String::from).collect();
        Vocabulary::from_tokens(chars, 100, TokenMode::Char).unwrap()
    }

    fn run(len: usize, cfg: &DenoisingConfig, seed: u64) -> (Vec<TokenId>, Vec<TokenId>, Vec<TokenId>) {
        let v = vocab();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tokens: Vec<TokenId> = (0..len).map(|_| rng.random_range(3..29)).collect();
        let (i, t) = corrupt_spans(&tokens, cfg, &v, &mut rng).unwrap();
        (tokens, i, t)
    }

    #[test]
    fn disabled_corruption_is_identity() {
        let cfg = DenoisingConfig {
            n_spans_override: Some(0),
            ..Default::default()
        };
        let (tokens, input, target) = run(10, &cfg, 0);
        assert_eq!(input, tokens);
        assert_eq!(target, vec![EOS_ID]);
    }

    #[test]
    fn pinned_seed_regression() {
        let cfg = DenoisingConfig {
            corruption_rate: 0.3,
            mean_span_length: 3.0,
            n_spans_override: None,
        };
        let v = vocab();
        let tokens: Vec<TokenId> = (3..13).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(1234);
        let (input, target) = corrupt_spans(&tokens, &cfg, &v, &mut rng).unwrap();
        let s0 = v.sentinel(0).unwrap();
        assert_eq!(input.len(), 8);
        assert_eq!(target.len(), 5);
        assert_eq!(input, PINNED_INPUT.iter().map(|&t| if t == 0 { s0 } else { t }).collect::<Vec<_>>());
        assert_eq!(target, vec![s0, PINNED_SPAN[0], PINNED_SPAN[1], PINNED_SPAN[2], EOS_ID]);
    }

    // recorded once from seed 1234; 0 stands for the first sentinel
    const PINNED_INPUT: [TokenId; 8] = [3, 4, 5, 6, 7, 0, 11, 12];
    const PINNED_SPAN: [TokenId; 3] = [8, 9, 10];

    #[test]
    fn full_mask() {
        let cfg = DenoisingConfig {
            corruption_rate: 1.0,
            mean_span_length: 7.0,
            n_spans_override: None,
        };
        let (tokens, input, target) = run(7, &cfg, 3);
        let s0 = vocab().sentinel(0).unwrap();
        assert_eq!(input, vec![s0]);
        let mut want = vec![s0];
        want.extend(&tokens);
        want.push(EOS_ID);
        assert_eq!(target, want);
    }

    #[test]
    fn over_corruption_is_an_error() {
        let v = vocab();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cfg = DenoisingConfig {
            corruption_rate: 0.9,
            mean_span_length: 1.0,
            n_spans_override: None,
        };
        assert!(corrupt_spans(&[3, 4, 5, 6, 7, 8, 9, 10, 11, 12], &cfg, &v, &mut rng).is_err());
        assert!(corrupt_spans(&[], &DenoisingConfig::default(), &v, &mut rng).is_err());
        let s = v.sentinel(0).unwrap();
        assert!(corrupt_spans(&[3, s, 4], &DenoisingConfig::default(), &v, &mut rng).is_err());
    }

    #[test]
    fn splice_examples() {
        let v = vocab();
        let s0 = v.sentinel(0).unwrap();
        let s1 = v.sentinel(1).unwrap();
        assert_eq!(splice(&[s0], &[s0, 5, 6, EOS_ID], &v).unwrap(), vec![5, 6]);
        assert_eq!(splice(&[3, s0, 4, s1], &[s0, 5, s1, 6, 7, EOS_ID], &v).unwrap(), vec![3, 5, 4, 6, 7]);
        assert!(splice(&[3, s0, 4, s1], &[s0, 5, 6, 7, EOS_ID], &v).is_err());
        assert!(splice(&[3, s0], &[s1, 5, EOS_ID], &v).is_err());
        assert!(splice(&[3, s1, s0], &[s0, 5, s1, 6, EOS_ID], &v).is_err());
    }

    #[test]
    fn sentinels_increase_and_appear_once() {
        let v = vocab();
        for seed in 0..200 {
            let (_, input, target) = run(60, &DenoisingConfig::default(), seed);
            let ins: Vec<usize> = input.iter().filter_map(|&t| v.sentinel_index(t)).collect();
            let outs: Vec<usize> = target.iter().filter_map(|&t| v.sentinel_index(t)).collect();
            assert_eq!(ins, (0..ins.len()).collect::<Vec<_>>());
            assert_eq!(ins, outs);
            assert_eq!(ins.len(), 3);
            // spans are never adjacent
            assert!(input.windows(2).all(|w| !(v.sentinel_index(w[0]).is_some() && v.sentinel_index(w[1]).is_some())));
        }
    }

    #[test]
    fn compositions_are_valid() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..500 {
            let total = rng.random_range(1..40);
            let parts = rng.random_range(1..=total);
            let c = positive_composition(&mut rng, total, parts);
            assert_eq!(c.len(), parts);
            assert_eq!(c.iter().sum::<usize>(), total);
            assert!(c.iter().all(|&p| p >= 1));
            let w = weak_composition(&mut rng, total - 1, parts + 1);
            assert_eq!(w.iter().sum::<usize>(), total - 1);
        }
    }

    proptest! {
        #[test]
        fn splice_inverts_corruption(len in 1usize..80, seed in any::<u64>(), rate in 0.05f64..0.5, mu in 1.0f64..5.0) {
            let cfg = DenoisingConfig { corruption_rate: rate, mean_span_length: mu, n_spans_override: None };
            let v = vocab();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let tokens: Vec<TokenId> = (0..len).map(|_| rng.random_range(3..29)).collect();
            if let Ok((i, t)) = corrupt_spans(&tokens, &cfg, &v, &mut rng) {
                prop_assert_eq!(splice(&i, &t, &v).unwrap(), tokens);
            }
        }
    }

    #[test]
    fn make_batch_shifts_right() {
        let v = vocab();
        let b = make_batch(&[("ab", "cd")], &v, 16).unwrap();
        let (c, d) = (v.token_id("c").unwrap(), v.token_id("d").unwrap());
        assert_eq!(b.targets.ids, vec![c, d, EOS_ID]);
        assert_eq!(b.dec_in.ids, vec![PAD_ID, c, d]);
        assert_eq!(b.src.ids.last(), Some(&EOS_ID));
    }

    #[test]
    fn make_batch_pads_and_masks() {
        let v = vocab();
        let b = make_batch(&[("abc", "d"), ("a", "efgh")], &v, 16).unwrap();
        assert_eq!(b.targets.cols, 5);
        assert_eq!(b.targets.mask, vec![true, true, false, false, false, true, true, true, true, true]);
        assert_eq!(b.src.mask, vec![true, true, true, true, true, true, false, false]);
        assert_eq!(b.num_target_tokens(), 7);
        for r in 0..2 {
            let (d, t) = (b.dec_in.row(r), b.targets.row(r));
            assert_eq!(d[0], PAD_ID);
            for k in 1..t.len() {
                if b.targets.mask[r * 5 + k] {
                    assert_eq!(d[k], t[k - 1]);
                }
            }
        }
        assert!(make_batch(&[("", "a")], &v, 16).is_err());
        let truncated = make_batch(&[("abcdefgh", "abcdefgh")], &v, 4).unwrap();
        assert_eq!(truncated.src.cols, 4);
        assert_eq!(truncated.targets.ids[3], EOS_ID);
    }

    #[test]
    fn batch_loss_matches_hand_cross_entropy() {
        let v = vocab();
        let model = Seq2Seq::<f64>::new(ModelConfig::tiny(v.size()), 8).unwrap();
        let b = make_batch(&[("abc", "de"), ("f", "ghij")], &v, 16).unwrap();
        let mut s = model.eval_session();
        let loss = s.seq2seq_loss(&b.src, &b.dec_in, &b.targets).unwrap();
        let got = s.graph.value(loss)[0];

        let mut s = model.eval_session();
        let enc = s.encode(&b.src).unwrap();
        let logits = s.decode_logits(enc, &b.src.mask, &b.dec_in).unwrap();
        let lv = s.graph.value(logits).to_vec();
        let vs = v.size();
        let mut total = 0.0;
        let mut count = 0;
        for (pos, (&t, &m)) in b.targets.ids.iter().zip(&b.targets.mask).enumerate() {
            if m {
                total -= log_softmax(&lv[pos * vs..(pos + 1) * vs])[t as usize];
                count += 1;
            }
        }
        assert!((got - total / count as f64).abs() < 1e-12);
        let targets: Vec<usize> = b.targets.ids.iter().map(|&t| t as usize).collect();
        let eager = cross_entropy(&Tensor::new(vec![lv.len() / vs, vs], lv).unwrap(), &targets, 0).unwrap();
        assert!((got - eager).abs() < 1e-12);
    }
}
