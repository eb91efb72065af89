//! Task registry, input templates, JSONL datasets and synthetic corpora.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{self, Direction, Edit, EditSet, M2Sentence, Metric};

/// How raw fields become the model input payload.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Template {
    Text,
    QuestionContext,
    AnswerContext,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct TaskSpec {
    /// Canonical task family; both transliteration directions share one.
    pub name: &'static str,
    /// Exact prefix token, also the CLI `--prefix` value.
    pub prefix: &'static str,
    pub template: Template,
    pub metric: Metric,
    pub direction: Direction,
    pub max_seq_len: Option<usize>,
}

const fn spec(name: &'static str, prefix: &'static str, template: Template, metric: Metric, max: Option<usize>) -> TaskSpec {
    let direction = match metric {
        Metric::Cer => Direction::Lower,
        _ => Direction::Higher,
    };
    TaskSpec {
        name,
        prefix,
        template,
        metric,
        direction,
        max_seq_len: max,
    }
}

pub const REGISTRY: [TaskSpec; 9] = [
    spec("diacritization", "diacritize", Template::Text, Metric::Cer, None),
    spec("grammatical_error_correction", "correct_grammar", Template::Text, Metric::F05, Some(1024)),
    spec("paraphrase", "paraphrase", Template::Text, Metric::Bleu, None),
    spec("question_answering", "answer_question", Template::QuestionContext, Metric::TokenF1, None),
    spec("question_generation", "generate_question", Template::AnswerContext, Metric::Bleu, None),
    spec("summarization", "summarize", Template::Text, Metric::RougeL, None),
    spec("title_generation", "generate_title", Template::Text, Metric::Bleu, None),
    spec("transliteration", "translitrate_ar2en", Template::Text, Metric::Cer, None),
    spec("transliteration", "translitrate_en2ar", Template::Text, Metric::Cer, None),
];

pub fn registry() -> &'static [TaskSpec] {
    &REGISTRY
}

/// Stable JSON rendering of the registry.
pub fn registry_json() -> String {
    serde_json::to_string_pretty(&REGISTRY[..]).expect("registry serializes")
}

/// Comma-separated list of valid prefixes.
pub fn prefix_list() -> String {
    REGISTRY.iter().map(|t| t.prefix).collect::<Vec<_>>().join(", ")
}

/// Finds a task by prefix. Hyphens may stand in for underscores and the
/// spelling `transliterate_*` is accepted for `translitrate_*`.
pub fn lookup(name: &str) -> Result<&'static TaskSpec> {
    let norm = name.trim().replace('-', "_");
    let norm = norm.replace("transliterate_", "translitrate_");
    REGISTRY
        .iter()
        .find(|t| t.prefix == norm)
        .ok_or_else(|| Error::UnknownTask(name.trim().to_string()))
}

/// Raw per-example fields before templating.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawFields {
    #[serde(default, skip_serializing_if = "Option::is_none", rename = "source")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<String>,
}

impl RawFields {
    pub fn text(s: impl Into<String>) -> Self {
        RawFields {
            text: Some(s.into()),
            ..Default::default()
        }
    }
}

fn required<'a>(v: &'a Option<String>, name: &str) -> Result<&'a str> {
    match v.as_deref().map(str::trim) {
        Some(s) if !s.is_empty() => Ok(s),
        _ => Err(Error::MissingField(name.to_string())),
    }
}

/// Builds `"<prefix>: <payload>"` for a task.
pub fn format_input(task: &TaskSpec, fields: &RawFields) -> Result<String> {
    let payload = match task.template {
        Template::Text => required(&fields.text, "source")?.to_string(),
        Template::QuestionContext => format!(
            "question: {} context: {}",
            required(&fields.question, "question")?,
            required(&fields.context, "context")?
        ),
        Template::AnswerContext => format!(
            "answer: {} context: {}",
            required(&fields.answer, "answer")?,
            required(&fields.context, "context")?
        ),
    };
    Ok(format!("{}: {payload}", task.prefix))
}

/// Prefixes free text for a task whose template is plain text; other
/// templates take the text as an already formatted payload.
pub fn format_text(task: &TaskSpec, text: &str) -> Result<String> {
    match task.template {
        Template::Text => format_input(task, &RawFields::text(text)),
        _ if text.trim().is_empty() => Err(Error::MissingField("source".into())),
        _ => Ok(format!("{}: {}", task.prefix, text.trim())),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    /// Canonical prefix of the task.
    pub task: String,
    /// Formatted model input.
    pub source: String,
    pub target: String,
    pub fields: RawFields,
}

impl Example {
    pub fn new(task: &TaskSpec, fields: RawFields, target: impl Into<String>) -> Result<Self> {
        let target = target.into();
        if target.trim().is_empty() {
            return Err(Error::MissingField("target".into()));
        }
        Ok(Example {
            task: task.prefix.to_string(),
            source: format_input(task, &fields)?,
            target,
            fields,
        })
    }

    pub fn spec(&self) -> &'static TaskSpec {
        lookup(&self.task).expect("examples always carry a registered task")
    }

    /// Same payload presented under another task's prefix.
    pub fn with_prefix(&self, task: &TaskSpec) -> Result<String> {
        format_input(task, &self.fields)
    }
}

#[derive(Serialize, Deserialize)]
struct JsonRecord {
    task: String,
    #[serde(default)]
    target: Option<String>,
    #[serde(flatten)]
    fields: RawFields,
}

/// Parses one JSONL record.
pub fn parse_jsonl_line(line: &str, line_no: usize) -> Result<Example> {
    let err = |msg: String| Error::Parse { line: line_no, msg };
    let rec: JsonRecord = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
    let task = lookup(&rec.task).map_err(|e| err(e.to_string()))?;
    let target = rec.target.ok_or_else(|| err("missing field 'target'".into()))?;
    Example::new(task, rec.fields, target).map_err(|e| err(e.to_string()))
}

/// Parses a JSONL dataset; blank lines are skipped.
pub fn parse_jsonl(text: &str) -> Result<Vec<Example>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse_jsonl_line(l, i + 1))
        .collect()
}

pub fn load_jsonl(path: &Path) -> Result<Vec<Example>> {
    parse_jsonl(&std::fs::read_to_string(path)?)
}

pub fn to_jsonl(examples: &[Example]) -> String {
    let mut out = String::new();
    for ex in examples {
        let rec = JsonRecord {
            task: ex.task.clone(),
            target: Some(ex.target.clone()),
            fields: ex.fields.clone(),
        };
        out.push_str(&serde_json::to_string(&rec).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub fn write_jsonl(path: &Path, examples: &[Example]) -> Result<()> {
    std::fs::write(path, to_jsonl(examples))?;
    Ok(())
}

/// Scores hypotheses with the task's metric. Edit-scored tasks need the
/// unprefixed sources and gold edits.
pub fn score(task: &TaskSpec, hypotheses: &[String], references: &[String], gec: Option<(&[String], &[EditSet])>) -> Result<f64> {
    match task.metric {
        Metric::Bleu => metrics::bleu(hypotheses, references),
        Metric::RougeL => metrics::rouge_l_corpus(hypotheses, references),
        Metric::Cer => metrics::cer_corpus(hypotheses, references),
        Metric::TokenF1 => metrics::token_f1_corpus(hypotheses, references),
        Metric::F05 => {
            let (sources, golds) = gec.ok_or_else(|| Error::MissingField("gold edits".into()))?;
            metrics::m2_corpus(sources, hypotheses, golds)
        }
    }
}

/// Latin side of the synthetic transliteration bijection.
pub const CIPHER_LATIN: &str = "abcdefghijklmnopqrstuvwx";
/// Greek side, in the same order (final sigma omitted).
pub const CIPHER_GREEK: &str = "αβγδεζηθικλμνξοπρστυφχψω";

fn cipher_map(forward: bool) -> HashMap<char, char> {
    let (a, b) = (CIPHER_LATIN.chars(), CIPHER_GREEK.chars());
    if forward {
        a.zip(b).collect()
    } else {
        b.zip(a).collect()
    }
}

/// Applies the bijection (`forward`: latin to Greek); unmapped characters
/// pass through.
pub fn encipher(text: &str, forward: bool) -> String {
    let m = cipher_map(forward);
    text.chars().map(|c| m.get(&c).copied().unwrap_or(c)).collect()
}

/// `n` distinct random latin words of 3–8 letters, each emitted in both
/// directions: `translitrate_ar2en` maps latin to Greek and
/// `translitrate_en2ar` maps back.
pub fn synth_cipher(n: usize, seed: u64) -> Result<Vec<Example>> {
    synth_cipher_lengths(n, seed, 3, 8)
}

pub fn synth_cipher_lengths(n: usize, seed: u64, min_len: usize, max_len: usize) -> Result<Vec<Example>> {
    if n == 0 || min_len == 0 || max_len < min_len {
        return Err(Error::invalid("synth_cipher needs n ≥ 1 and 1 ≤ min_len ≤ max_len"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let letters: Vec<char> = CIPHER_LATIN.chars().collect();
    let (fwd, back) = (lookup("translitrate_ar2en")?, lookup("translitrate_en2ar")?);
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(2 * n);
    while seen.len() < n {
        let len = rng.random_range(min_len..=max_len);
        let word: String = (0..len).map(|_| *letters.choose(&mut rng).expect("non-empty")).collect();
        if !seen.insert(word.clone()) {
            continue;
        }
        let greek = encipher(&word, true);
        out.push(Example::new(fwd, RawFields::text(&word), &greek)?);
        out.push(Example::new(back, RawFields::text(&greek), &word)?);
    }
    Ok(out)
}

/// Vowel set removed by the devowel task.
pub const VOWELS: [char; 5] = ['a', 'e', 'i', 'o', 'u'];

/// Default voweled lexicon; every entry has a distinct consonant skeleton.
pub const DEFAULT_LEXICON: [&str; 32] = [
    "banara", "kitab", "darasa", "qalam", "madina", "salam", "kabir", "jamil", "nur", "bahr", "shams", "qamar",
    "walad", "bint", "bayt", "sayara", "tarik", "fikra", "luga", "huruf", "samak", "zahra", "jabal", "wadi", "sahil",
    "gurfa", "mifta", "dafir", "ramel", "sukar", "tuffah", "milh",
];

pub fn strip_chars(text: &str, remove: &[char]) -> String {
    text.chars().filter(|c| !remove.contains(c)).collect()
}

/// Sentences of 3–8 lexicon words; the source is the target with vowels
/// removed.
pub fn synth_devowel(n: usize, seed: u64, lexicon: &[&str]) -> Result<Vec<Example>> {
    if n == 0 || lexicon.is_empty() {
        return Err(Error::invalid("synth_devowel needs n ≥ 1 and a non-empty lexicon"));
    }
    let mut skeletons = HashMap::new();
    for w in lexicon {
        let s = strip_chars(w, &VOWELS);
        if s.is_empty() {
            return Err(Error::invalid(format!("lexicon word '{w}' has no consonants")));
        }
        if let Some(prev) = skeletons.insert(s.clone(), *w) {
            if prev != *w {
                return Err(Error::invalid(format!("lexicon words '{prev}' and '{w}' share the skeleton '{s}'")));
            }
        }
    }
    let task = lookup("diacritize")?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let len = rng.random_range(3..=8);
            let words: Vec<&str> = (0..len).map(|_| *lexicon.choose(&mut rng).expect("non-empty")).collect();
            let target = words.join(" ");
            Example::new(task, RawFields::text(strip_chars(&target, &VOWELS)), target)
        })
        .collect()
}

#[derive(Clone, Copy, Debug)]
enum Corruption {
    Swap,
    Drop,
    Duplicate,
}

/// Clean sentences with one or two word-level corruptions (adjacent swap,
/// drop, duplicate). Sources are corrupted, targets clean, and the gold
/// edits come from the construction; samples whose edits the extractor
/// would describe differently are redrawn.
pub fn synth_gec(n: usize, seed: u64, lexicon: &[&str]) -> Result<(Vec<Example>, Vec<M2Sentence>)> {
    if n == 0 || lexicon.len() < 2 {
        return Err(Error::invalid("synth_gec needs n ≥ 1 and at least two lexicon words"));
    }
    let task = lookup("correct_grammar")?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut examples = Vec::with_capacity(n);
    let mut gold = Vec::with_capacity(n);
    while examples.len() < n {
        let len = rng.random_range(4..=9);
        let clean: Vec<&str> = (0..len).map(|_| *lexicon.choose(&mut rng).expect("non-empty")).collect();
        let k = rng.random_range(1..=2);
        // corruption sites at least three words apart
        let mut sites: Vec<usize> = (0..len - 1).collect();
        sites.shuffle(&mut rng);
        let mut chosen: Vec<usize> = Vec::new();
        for s in sites {
            if chosen.len() < k && chosen.iter().all(|&c| c.abs_diff(s) >= 3) {
                chosen.push(s);
            }
        }
        chosen.sort_unstable();
        let mut corrupted: Vec<&str> = Vec::with_capacity(len + k);
        let mut edits = Vec::with_capacity(k);
        let mut i = 0;
        for &site in &chosen {
            corrupted.extend_from_slice(&clean[i..site]);
            let at = corrupted.len();
            let kind = *[Corruption::Swap, Corruption::Drop, Corruption::Duplicate].choose(&mut rng).expect("non-empty");
            match kind {
                Corruption::Swap => {
                    corrupted.push(clean[site + 1]);
                    corrupted.push(clean[site]);
                    edits.push(Edit {
                        start: at,
                        end: at + 2,
                        replacement: vec![clean[site].to_string(), clean[site + 1].to_string()],
                    });
                    i = site + 2;
                }
                Corruption::Drop => {
                    edits.push(Edit {
                        start: at,
                        end: at,
                        replacement: vec![clean[site].to_string()],
                    });
                    i = site + 1;
                }
                Corruption::Duplicate => {
                    corrupted.push(clean[site]);
                    corrupted.push(clean[site]);
                    edits.push(Edit {
                        start: at,
                        end: at + 1,
                        replacement: Vec::new(),
                    });
                    i = site + 1;
                }
            }
        }
        corrupted.extend_from_slice(&clean[i..]);
        let Ok(edits) = EditSet::new(edits, corrupted.len()) else { continue };
        if corrupted.is_empty() || metrics::extract_edits(&corrupted, &clean) != edits {
            continue;
        }
        let source = corrupted.join(" ");
        examples.push(Example::new(task, RawFields::text(&source), clean.join(" "))?);
        gold.push(M2Sentence { source, edits });
    }
    Ok((examples, gold))
}
