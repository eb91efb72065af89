//! Evaluation metrics: BLEU, ROUGE-L, CER, token F1, M² F0.5, the H/L macro
//! aggregates, and diacritization fidelity.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Higher,
    Lower,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Metric {
    #[serde(rename = "bleu")]
    Bleu,
    #[serde(rename = "rouge_l")]
    RougeL,
    #[serde(rename = "cer")]
    Cer,
    #[serde(rename = "f1")]
    TokenF1,
    #[serde(rename = "f0.5")]
    F05,
}

impl Metric {
    pub fn direction(self) -> Direction {
        match self {
            Metric::Cer => Direction::Lower,
            _ => Direction::Higher,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Metric::Bleu => "bleu",
            Metric::RougeL => "rouge_l",
            Metric::Cer => "cer",
            Metric::TokenF1 => "f1",
            Metric::F05 => "f0.5",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Metric::Bleu, Metric::RougeL, Metric::Cer, Metric::TokenF1, Metric::F05]
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown metric '{s}'")))
    }
}

/// One dataset's score in the metric's native scale (percent, or a
/// fraction for CER).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub dataset: String,
    pub metric: Metric,
    pub score: f64,
}

impl MetricReport {
    pub fn direction(&self) -> Direction {
        self.metric.direction()
    }
}

/// Unit-cost Levenshtein distance.
pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Length of the longest common subsequence.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0; b.len() + 1];
    let mut cur = vec![0; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

fn words(s: &str) -> Vec<&str> {
    s.split_whitespace().collect()
}

/// Character error rate of one pair.
pub fn cer(hypothesis: &str, reference: &str) -> Result<f64> {
    cer_corpus(&[hypothesis], &[reference])
}

/// Corpus CER: total character edits over total reference characters.
pub fn cer_corpus<H: AsRef<str>, R: AsRef<str>>(hypotheses: &[H], references: &[R]) -> Result<f64> {
    same_length(hypotheses.len(), references.len())?;
    let (mut edits, mut chars) = (0usize, 0usize);
    for (h, r) in hypotheses.iter().zip(references) {
        let r: Vec<char> = r.as_ref().chars().collect();
        if r.is_empty() {
            return Err(Error::invalid("CER needs non-empty references"));
        }
        let h: Vec<char> = h.as_ref().chars().collect();
        edits += edit_distance(&h, &r);
        chars += r.len();
    }
    Ok(edits as f64 / chars as f64)
}

fn same_length(h: usize, r: usize) -> Result<()> {
    if h != r {
        return Err(Error::invalid(format!("{h} hypotheses for {r} references")));
    }
    if h == 0 {
        return Err(Error::invalid("empty corpus"));
    }
    Ok(())
}

fn ngram_counts<'s, 'a>(toks: &'s [&'a str], n: usize) -> HashMap<&'s [&'a str], usize> {
    let mut m = HashMap::new();
    for w in toks.windows(n) {
        *m.entry(w).or_insert(0) += 1;
    }
    m
}

/// Corpus BLEU (percent) with 1–4-gram precisions and brevity penalty, no
/// smoothing.
pub fn bleu<H: AsRef<str>, R: AsRef<str>>(hypotheses: &[H], references: &[R]) -> Result<f64> {
    same_length(hypotheses.len(), references.len())?;
    let mut matches = [0usize; 4];
    let mut totals = [0usize; 4];
    let (mut hyp_len, mut ref_len) = (0usize, 0usize);
    for (h, r) in hypotheses.iter().zip(references) {
        let (h, r) = (words(h.as_ref()), words(r.as_ref()));
        hyp_len += h.len();
        ref_len += r.len();
        for n in 1..=4 {
            let hc = ngram_counts(&h, n);
            let rc = ngram_counts(&r, n);
            for (g, &c) in &hc {
                matches[n - 1] += c.min(rc.get(g).copied().unwrap_or(0));
            }
            totals[n - 1] += h.len().saturating_sub(n - 1);
        }
    }
    if matches.iter().zip(&totals).any(|(&m, &t)| m == 0 || t == 0) {
        return Ok(0.0);
    }
    let log_p: f64 = matches.iter().zip(&totals).map(|(&m, &t)| (m as f64 / t as f64).ln()).sum::<f64>() / 4.0;
    let bp = if hyp_len > ref_len { 1.0 } else { (1.0 - ref_len as f64 / hyp_len as f64).exp() };
    Ok(100.0 * bp * log_p.exp())
}

/// ROUGE-L F1 (percent) over whitespace tokens.
pub fn rouge_l(hypothesis: &str, reference: &str) -> Result<f64> {
    let (h, r) = (words(hypothesis), words(reference));
    if r.is_empty() {
        return Err(Error::invalid("ROUGE-L needs a non-empty reference"));
    }
    let l = lcs_len(&h, &r);
    if l == 0 {
        return Ok(0.0);
    }
    let (p, rc) = (l as f64 / h.len() as f64, l as f64 / r.len() as f64);
    Ok(100.0 * 2.0 * p * rc / (p + rc))
}

/// Mean ROUGE-L F1 over pairs.
pub fn rouge_l_corpus<H: AsRef<str>, R: AsRef<str>>(hypotheses: &[H], references: &[R]) -> Result<f64> {
    same_length(hypotheses.len(), references.len())?;
    let mut sum = 0.0;
    for (h, r) in hypotheses.iter().zip(references) {
        sum += rouge_l(h.as_ref(), r.as_ref())?;
    }
    Ok(sum / hypotheses.len() as f64)
}

/// Bag-of-tokens F1 (percent), SQuAD style.
pub fn token_f1(prediction: &str, gold: &str) -> f64 {
    let (p, g) = (words(prediction), words(gold));
    if p.is_empty() && g.is_empty() {
        return 100.0;
    }
    let mut counts: HashMap<&str, isize> = HashMap::new();
    for w in &g {
        *counts.entry(w).or_insert(0) += 1;
    }
    let mut overlap = 0;
    for w in &p {
        if let Some(c) = counts.get_mut(w) {
            if *c > 0 {
                *c -= 1;
                overlap += 1;
            }
        }
    }
    if overlap == 0 {
        return 0.0;
    }
    let (pr, rc) = (overlap as f64 / p.len() as f64, overlap as f64 / g.len() as f64);
    100.0 * 2.0 * pr * rc / (pr + rc)
}

pub fn token_f1_corpus<H: AsRef<str>, R: AsRef<str>>(predictions: &[H], golds: &[R]) -> Result<f64> {
    same_length(predictions.len(), golds.len())?;
    let sum: f64 = predictions.iter().zip(golds).map(|(p, g)| token_f1(p.as_ref(), g.as_ref())).sum();
    Ok(sum / predictions.len() as f64)
}

/// Fraction of pairs that match exactly.
pub fn exact_match<H: AsRef<str>, R: AsRef<str>>(hypotheses: &[H], references: &[R]) -> Result<f64> {
    same_length(hypotheses.len(), references.len())?;
    let hits = hypotheses.iter().zip(references).filter(|(h, r)| h.as_ref() == r.as_ref()).count();
    Ok(hits as f64 / hypotheses.len() as f64)
}

/// Replaces source words `start..end` with `replacement`; `start == end`
/// is an insertion.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Edit {
    pub start: usize,
    pub end: usize,
    pub replacement: Vec<String>,
}

/// Sorted, non-overlapping edits against one tokenized source.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditSet(pub Vec<Edit>);

impl EditSet {
    /// Sorts and checks the edits against a source of `source_len` words.
    pub fn new(mut edits: Vec<Edit>, source_len: usize) -> Result<Self> {
        edits.sort_by_key(|e| (e.start, e.end));
        for e in &edits {
            if e.end < e.start || e.end > source_len {
                return Err(Error::invalid(format!("edit {}..{} outside a {source_len}-word source", e.start, e.end)));
            }
        }
        for w in edits.windows(2) {
            let (a, b) = (&w[0], &w[1]);
            if b.start < a.end || (a.start == a.end && b.start == a.start) {
                return Err(Error::invalid(format!(
                    "overlapping edits {}..{} and {}..{}",
                    a.start, a.end, b.start, b.end
                )));
            }
        }
        Ok(EditSet(edits))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn apply(&self, source: &[&str]) -> Vec<String> {
        let mut out = Vec::with_capacity(source.len());
        let mut pos = 0;
        for e in &self.0 {
            out.extend(source[pos..e.start].iter().map(|s| s.to_string()));
            out.extend(e.replacement.iter().cloned());
            pos = e.end;
        }
        out.extend(source[pos..].iter().map(|s| s.to_string()));
        out
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Step {
    Keep,
    Sub,
    Del,
    Ins,
}

/// Word-level shortest edit script from `source` to `hypothesis`, with
/// adjacent non-matching operations merged into span edits. Backtrace ties
/// prefer substitution, then deletion, then insertion.
pub fn extract_edits(source: &[&str], hypothesis: &[&str]) -> EditSet {
    let (n, m) = (source.len(), hypothesis.len());
    let mut d = vec![vec![0usize; m + 1]; n + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=m {
        d[0][j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let diag = d[i - 1][j - 1] + usize::from(source[i - 1] != hypothesis[j - 1]);
            d[i][j] = diag.min(d[i - 1][j] + 1).min(d[i][j - 1] + 1);
        }
    }
    let mut steps = Vec::with_capacity(n + m);
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        if i > 0 && j > 0 {
            let same = source[i - 1] == hypothesis[j - 1];
            if d[i][j] == d[i - 1][j - 1] + usize::from(!same) {
                steps.push(if same { Step::Keep } else { Step::Sub });
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && d[i][j] == d[i - 1][j] + 1 {
            steps.push(Step::Del);
            i -= 1;
        } else {
            steps.push(Step::Ins);
            j -= 1;
        }
    }
    steps.reverse();

    let mut edits = Vec::new();
    let (mut i, mut j) = (0, 0);
    let mut open: Option<Edit> = None;
    for s in steps {
        if s == Step::Keep {
            edits.extend(open.take());
            i += 1;
            j += 1;
            continue;
        }
        let e = open.get_or_insert_with(|| Edit {
            start: i,
            end: i,
            replacement: Vec::new(),
        });
        if matches!(s, Step::Sub | Step::Del) {
            i += 1;
            e.end = i;
        }
        if matches!(s, Step::Sub | Step::Ins) {
            e.replacement.push(hypothesis[j].to_string());
            j += 1;
        }
    }
    edits.extend(open);
    EditSet(edits)
}

/// Edit counts behind an M² score.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct EditCounts {
    pub true_positives: usize,
    pub system: usize,
    pub gold: usize,
}

impl EditCounts {
    pub fn add(&mut self, other: EditCounts) {
        self.true_positives += other.true_positives;
        self.system += other.system;
        self.gold += other.gold;
    }

    /// F0.5 in percent, with the empty-set conventions.
    pub fn f05(&self) -> f64 {
        match (self.system, self.gold) {
            (0, 0) => return 100.0,
            (0, _) | (_, 0) => return 0.0,
            _ => {}
        }
        let p = self.true_positives as f64 / self.system as f64;
        let r = self.true_positives as f64 / self.gold as f64;
        if p + r == 0.0 {
            return 0.0;
        }
        100.0 * 1.25 * p * r / (0.25 * p + r)
    }
}

pub fn m2_counts(source: &str, hypothesis: &str, gold: &EditSet) -> EditCounts {
    let sys = extract_edits(&words(source), &words(hypothesis));
    let tp = sys.0.iter().filter(|e| gold.0.contains(e)).count();
    EditCounts {
        true_positives: tp,
        system: sys.len(),
        gold: gold.len(),
    }
}

/// Sentence-level M² F0.5 (percent).
pub fn m2_f05(source: &str, hypothesis: &str, gold: &EditSet) -> f64 {
    m2_counts(source, hypothesis, gold).f05()
}

/// Corpus M² F0.5 from summed edit counts.
pub fn m2_corpus<S: AsRef<str>, H: AsRef<str>>(sources: &[S], hypotheses: &[H], golds: &[EditSet]) -> Result<f64> {
    same_length(hypotheses.len(), sources.len())?;
    same_length(golds.len(), sources.len())?;
    let mut total = EditCounts::default();
    for ((s, h), g) in sources.iter().zip(hypotheses).zip(golds) {
        total.add(m2_counts(s.as_ref(), h.as_ref(), g));
    }
    Ok(total.f05())
}

/// One sentence of a gold-edit file.
#[derive(Clone, Debug, PartialEq)]
pub struct M2Sentence {
    pub source: String,
    pub edits: EditSet,
}

/// Parses the M² gold format: `S` lines followed by `A start end|||…`
/// lines, blocks separated by blank lines. Both the short
/// `A s e|||replacement` form and the scorer's full six-field form are
/// accepted; only annotator 0 is kept and `noop` edits are skipped.
pub fn parse_m2(text: &str) -> Result<Vec<M2Sentence>> {
    let mut out = Vec::new();
    let mut current: Option<(String, Vec<Edit>)> = None;
    let finish = |cur: Option<(String, Vec<Edit>)>, out: &mut Vec<M2Sentence>, line: usize| -> Result<()> {
        if let Some((source, edits)) = cur {
            let n = words(&source).len();
            let edits = EditSet::new(edits, n).map_err(|e| Error::Parse { line, msg: e.to_string() })?;
            out.push(M2Sentence { source, edits });
        }
        Ok(())
    };
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let err = |msg: &str| Error::Parse { line, msg: msg.to_string() };
        let l = raw.trim_end_matches('\r');
        if l.trim().is_empty() {
            finish(current.take(), &mut out, line)?;
            continue;
        }
        if let Some(src) = l.strip_prefix("S ").or_else(|| (l == "S").then_some("")) {
            finish(current.take(), &mut out, line)?;
            current = Some((src.split_whitespace().collect::<Vec<_>>().join(" "), Vec::new()));
        } else if let Some(rest) = l.strip_prefix("A ") {
            let (_, edits) = current.as_mut().ok_or_else(|| err("edit line before any S line"))?;
            let fields: Vec<&str> = rest.split("|||").collect();
            let span: Vec<&str> = fields[0].split_whitespace().collect();
            if span.len() != 2 {
                return Err(err("expected 'A start end'"));
            }
            let (kind, repl, annotator) = match fields.len() {
                2 => ("", fields[1], "0"),
                3 => (fields[1], fields[2], "0"),
                6 => (fields[1], fields[2], fields[5]),
                _ => return Err(err("expected 2, 3 or 6 '|||' fields")),
            };
            if annotator.trim() != "0" || kind.eq_ignore_ascii_case("noop") || span[0] == "-1" {
                continue;
            }
            let start: usize = span[0].parse().map_err(|_| err("bad start index"))?;
            let end: usize = span[1].parse().map_err(|_| err("bad end index"))?;
            let replacement = if repl.trim() == "-NONE-" {
                Vec::new()
            } else {
                repl.split_whitespace().map(String::from).collect()
            };
            edits.push(Edit { start, end, replacement });
        } else {
            return Err(err("expected an 'S' or 'A' line"));
        }
    }
    finish(current.take(), &mut out, text.lines().count() + 1)?;
    Ok(out)
}

/// Writes sentences in the short M² form accepted by [`parse_m2`].
pub fn write_m2(sentences: &[M2Sentence]) -> String {
    let mut out = String::new();
    for s in sentences {
        out.push_str("S ");
        out.push_str(&s.source);
        out.push('\n');
        for e in &s.edits.0 {
            let repl = if e.replacement.is_empty() { "-NONE-".to_string() } else { e.replacement.join(" ") };
            out.push_str(&format!("A {} {}|||{}\n", e.start, e.end, repl));
        }
        out.push('\n');
    }
    out
}

/// Unweighted means of the higher-better and lower-better reports.
pub fn macro_scores(reports: &[MetricReport]) -> (Option<f64>, Option<f64>) {
    let mean = |dir: Direction| {
        let v: Vec<f64> = reports.iter().filter(|r| r.direction() == dir).map(|r| r.score).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    };
    (mean(Direction::Higher), mean(Direction::Lower))
}

/// Fraction of source words the hypothesis reproduces in order once
/// `diacritics` are removed.
pub fn diacritization_fidelity(source: &str, hypothesis: &str, diacritics: &[char]) -> f64 {
    let stripped: String = hypothesis.chars().filter(|c| !diacritics.contains(c)).collect();
    let (s, h) = (words(source), words(&stripped));
    if s.is_empty() {
        return if h.is_empty() { 1.0 } else { 0.0 };
    }
    lcs_len(&s, &h) as f64 / s.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-9
    }

    #[test]
    fn cer_examples() {
        assert_eq!(cer("kitab", "kitab").unwrap(), 0.0);
        assert!(close(cer("kitob", "kitab").unwrap(), 0.2));
        assert_eq!(cer("", "ab").unwrap(), 1.0);
        assert!(cer("a", "").is_err());
        assert!(close(cer_corpus(&["ab", "c"], &["abc", "d"]).unwrap(), 0.5));
    }

    #[test]
    fn bleu_examples() {
        assert!(close(bleu(&["a b c d"], &["a b c d"]).unwrap(), 100.0));
        let want = 100.0 * (0.8f64 * 0.75 * (2.0 / 3.0) * 0.5).powf(0.25);
        assert!(close(bleu(&["a b c d e"], &["a b c d"]).unwrap(), want));
        assert!((want - 66.87).abs() < 0.01);
        assert_eq!(bleu(&["a b x c d"], &["a b c d"]).unwrap(), 0.0);
        assert!(bleu::<&str, &str>(&[], &[]).is_err());
        // short hypothesis pays the brevity penalty
        let short = bleu(&["a b c d"], &["a b c d e"]).unwrap();
        assert!(close(short, 100.0 * (1.0f64 - 5.0 / 4.0).exp()));
    }

    #[test]
    fn rouge_examples() {
        assert!(close(rouge_l("a b c", "a b c").unwrap(), 100.0));
        assert!(close(rouge_l("a b c", "a c").unwrap(), 80.0));
        assert_eq!(rouge_l("x y", "a c").unwrap(), 0.0);
        assert!(rouge_l("a", "").is_err());
    }

    #[test]
    fn token_f1_examples() {
        assert!(close(token_f1("the cat", "the cat"), 100.0));
        assert!(close(token_f1("the cat", "cat"), 200.0 / 3.0));
        assert_eq!(token_f1("", ""), 100.0);
        assert_eq!(token_f1("dog", "cat"), 0.0);
    }

    fn edit(start: usize, end: usize, repl: &str) -> Edit {
        Edit {
            start,
            end,
            replacement: words(repl).iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn m2_examples() {
        let src = "he go to school every days";
        let gold = EditSet::new(vec![edit(1, 2, "goes"), edit(5, 6, "day")], 6).unwrap();
        assert!(close(m2_f05(src, "he goes to school every day", &gold), 100.0));
        assert!(close(m2_f05(src, "he goes to school every days", &gold), 62.5 / 0.75));
        assert_eq!(m2_f05(src, src, &gold), 0.0);
        assert_eq!(m2_f05(src, src, &EditSet::default()), 100.0);
        assert!(EditSet::new(vec![edit(1, 3, "x"), edit(2, 4, "y")], 6).is_err());
    }

    #[test]
    fn extraction_merges_and_prefers_substitution() {
        let e = extract_edits(&["a", "b", "c"], &["a", "x", "y", "c"]);
        assert_eq!(e.0, vec![edit(1, 2, "x y")]);
        let e = extract_edits(&["a", "b", "c", "d"], &["a", "d"]);
        assert_eq!(e.0, vec![edit(1, 3, "")]);
        let e = extract_edits(&["a", "b"], &["a", "b", "c"]);
        assert_eq!(e.0, vec![edit(2, 2, "c")]);
        let e = extract_edits(&["a", "b"], &["c", "d"]);
        assert_eq!(e.0, vec![edit(0, 2, "c d")]);
    }

    #[test]
    fn extracted_edits_rebuild_hypothesis() {
        let src = ["the", "cat", "sat", "on", "mat"];
        for hyp in [&["the", "cat", "sits", "on", "the", "mat"][..], &["a", "dog"], &[], &src] {
            let e = extract_edits(&src, hyp);
            assert_eq!(e.apply(&src), hyp.iter().map(|s| s.to_string()).collect::<Vec<_>>());
            assert!(EditSet::new(e.0.clone(), src.len()).is_ok());
        }
    }

    #[test]
    fn m2_file_round_trip() {
        let text = "S he go to school\nA 1 2|||goes\nA 3 3|||-NONE-\n\nS fine\n\n";
        let parsed = parse_m2(text).unwrap();
        assert_eq!(parsed.len(), 2);
        assert_eq!(parsed[0].edits.0, vec![edit(1, 2, "goes"), edit(3, 3, "")]);
        assert!(parsed[1].edits.is_empty());
        assert_eq!(parse_m2(&write_m2(&parsed)).unwrap(), parsed);
        let full = "S a b c\nA 1 2|||R:NOUN|||x|||REQUIRED|||-NONE-|||0\nA 0 1|||R:NOUN|||y|||REQUIRED|||-NONE-|||1\nA -1 -1|||noop|||-NONE-|||REQUIRED|||-NONE-|||0\n";
        let parsed = parse_m2(full).unwrap();
        assert_eq!(parsed[0].edits.0, vec![edit(1, 2, "x")]);
        assert!(parse_m2("A 1 2|||x\n").is_err());
        assert!(parse_m2("S a b\nA 1 9|||x\n").is_err());
        assert!(parse_m2("S a b c\nA 0 2|||x\nA 1 3|||y\n").is_err());
        assert!(parse_m2("X what\n").is_err());
    }

    #[test]
    fn macro_examples() {
        let r = |m: Metric, s: f64| MetricReport {
            dataset: "d".into(),
            metric: m,
            score: s,
        };
        let all = [r(Metric::Bleu, 50.0), r(Metric::RougeL, 70.0), r(Metric::Cer, 2.0), r(Metric::Cer, 4.0)];
        assert_eq!(macro_scores(&all), (Some(60.0), Some(3.0)));
        assert_eq!(macro_scores(&all[..2]), (Some(60.0), None));
        assert_eq!(macro_scores(&[r(Metric::F05, 7.0), r(Metric::Cer, 0.5)]), (Some(7.0), Some(0.5)));
    }

    #[test]
    fn fidelity_examples() {
        let d = ['a', 'e', 'i', 'o', 'u'];
        assert_eq!(diacritization_fidelity("ktb drs", "kataba darasa", &d), 1.0);
        assert_eq!(diacritization_fidelity("ktb drs qlm bb", "katab daras qalam xaby", &d), 0.75);
        assert_eq!(diacritization_fidelity("ktb", "", &d), 0.0);
    }

    #[test]
    fn metric_names_round_trip() {
        for m in [Metric::Bleu, Metric::RougeL, Metric::Cer, Metric::TokenF1, Metric::F05] {
            assert_eq!(m.name().parse::<Metric>().unwrap(), m);
        }
        assert_eq!(Metric::Cer.direction(), Direction::Lower);
    }
}
