//! Character (or whitespace-word) vocabularies with a sentinel block.
//!
//! Id layout: `0 = pad`, `1 = eos`, `2 = unk`, then content tokens densely
//! from 3 in descending corpus frequency, then `S` sentinels occupying the
//! top of the id space with `sentinel(i) = vocab_size − 1 − i`.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type TokenId = u32;

pub const PAD_ID: TokenId = 0;
pub const EOS_ID: TokenId = 1;
pub const UNK_ID: TokenId = 2;
pub const NUM_SPECIALS: usize = 3;
pub const DEFAULT_SENTINELS: usize = 100;

/// Rendering of the unknown token. Re-encoding it yields `unk` again.
pub const UNK_GLYPH: char = '\u{FFFD}';

const HEADER_TAG: &str = "#octopus-vocab";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TokenMode {
    #[default]
    Char,
    Word,
}

impl TokenMode {
    fn as_str(self) -> &'static str {
        match self {
            TokenMode::Char => "char",
            TokenMode::Word => "word",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    mode: TokenMode,
    content: Vec<String>,
    index: HashMap<String, TokenId>,
    num_sentinels: usize,
}

fn units(text: &str, mode: TokenMode) -> Box<dyn Iterator<Item = &str> + '_> {
    match mode {
        TokenMode::Char => Box::new(text.char_indices().map(move |(i, c)| &text[i..i + c.len_utf8()])),
        TokenMode::Word => Box::new(text.split_whitespace()),
    }
}

impl Vocabulary {
    /// Builds a vocabulary from the most frequent units of `corpus`, capped so
    /// that the total size including specials and sentinels is `max_size`.
    pub fn build<'a, I>(corpus: I, max_size: usize, num_sentinels: usize, mode: TokenMode) -> Result<Self>
    where
        I: IntoIterator<Item = &'a str>,
    {
        if max_size <= NUM_SPECIALS + num_sentinels {
            return Err(Error::invalid(format!(
                "max_size {max_size} leaves no room for content beyond {} reserved ids",
                NUM_SPECIALS + num_sentinels
            )));
        }
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for text in corpus {
            for u in units(text, mode) {
                *counts.entry(u).or_default() += 1;
            }
        }
        if counts.is_empty() {
            return Err(Error::invalid("cannot build a vocabulary from an empty corpus"));
        }
        let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        ranked.truncate(max_size - NUM_SPECIALS - num_sentinels);
        Self::from_tokens(ranked.into_iter().map(|(t, _)| t.to_string()).collect(), num_sentinels, mode)
    }

    /// Assembles a vocabulary from an explicit content token list (ids 3..).
    pub fn from_tokens(content: Vec<String>, num_sentinels: usize, mode: TokenMode) -> Result<Self> {
        let mut index = HashMap::with_capacity(content.len());
        for (i, tok) in content.iter().enumerate() {
            if tok.is_empty() {
                return Err(Error::invalid("empty content token"));
            }
            if mode == TokenMode::Char && tok.chars().count() != 1 {
                return Err(Error::invalid(format!("char vocabulary token {tok:?} is not one character")));
            }
            if mode == TokenMode::Word && tok.chars().any(char::is_whitespace) {
                return Err(Error::invalid(format!("word token {tok:?} contains whitespace")));
            }
            if index.insert(tok.clone(), (i + NUM_SPECIALS) as TokenId).is_some() {
                return Err(Error::invalid(format!("duplicate token {tok:?}")));
            }
        }
        Ok(Vocabulary {
            mode,
            content,
            index,
            num_sentinels,
        })
    }

    pub fn mode(&self) -> TokenMode {
        self.mode
    }

    pub fn size(&self) -> usize {
        NUM_SPECIALS + self.content.len() + self.num_sentinels
    }

    pub fn num_sentinels(&self) -> usize {
        self.num_sentinels
    }

    pub fn content_tokens(&self) -> &[String] {
        &self.content
    }

    pub fn sentinel(&self, i: usize) -> Result<TokenId> {
        if i >= self.num_sentinels {
            return Err(Error::invalid(format!(
                "sentinel index {i} out of range for {} sentinels",
                self.num_sentinels
            )));
        }
        Ok((self.size() - 1 - i) as TokenId)
    }

    /// Sentinel index of `id`, if it lies in the sentinel block.
    pub fn sentinel_index(&self, id: TokenId) -> Option<usize> {
        let id = id as usize;
        let first = NUM_SPECIALS + self.content.len();
        (id >= first && id < self.size()).then(|| self.size() - 1 - id)
    }

    pub fn is_content(&self, id: TokenId) -> bool {
        let id = id as usize;
        id >= NUM_SPECIALS && id < NUM_SPECIALS + self.content.len()
    }

    pub fn token_id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn encode(&self, text: &str) -> Vec<TokenId> {
        units(text, self.mode)
            .map(|u| self.index.get(u).copied().unwrap_or(UNK_ID))
            .collect()
    }

    /// Renders ids as text. Pad and eos are dropped, sentinels print as
    /// `<extra_id_i>`, and unk prints as U+FFFD.
    pub fn decode(&self, ids: &[TokenId]) -> Result<String> {
        let mut pieces: Vec<String> = Vec::with_capacity(ids.len());
        for &id in ids {
            let i = id as usize;
            if i >= self.size() {
                return Err(Error::invalid(format!("token id {id} outside vocabulary of {}", self.size())));
            }
            match id {
                PAD_ID | EOS_ID => {}
                UNK_ID => pieces.push(UNK_GLYPH.to_string()),
                _ if self.is_content(id) => pieces.push(self.content[i - NUM_SPECIALS].clone()),
                _ => pieces.push(format!("<extra_id_{}>", self.size() - 1 - i)),
            }
        }
        Ok(match self.mode {
            TokenMode::Char => pieces.concat(),
            TokenMode::Word => pieces.join(" "),
        })
    }

    /// Serializes to the line-oriented vocabulary file format: a header line
    /// with size, sentinel count and mode, then one escaped content token per
    /// line in id order.
    pub fn to_file_string(&self) -> String {
        let mut out = format!(
            "{HEADER_TAG} vocab_size={} sentinels={} mode={}\n",
            self.size(),
            self.num_sentinels,
            self.mode.as_str()
        );
        for tok in &self.content {
            let _ = writeln!(out, "{}", escape(tok));
        }
        out
    }

    pub fn from_file_str(text: &str) -> Result<Self> {
        let mut lines = text.split('\n');
        let header = lines.next().unwrap_or_default();
        let fields: Vec<&str> = header.split(' ').collect();
        if fields.first() != Some(&HEADER_TAG) || fields.len() != 4 {
            return Err(Error::Parse {
                line: 1,
                msg: "missing vocabulary header".into(),
            });
        }
        let field = |key: &str| -> Result<&str> {
            fields[1..]
                .iter()
                .find_map(|f| f.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
                .ok_or_else(|| Error::Parse {
                    line: 1,
                    msg: format!("header lacks {key}"),
                })
        };
        let num = |key: &str| -> Result<usize> {
            field(key)?.parse().map_err(|_| Error::Parse {
                line: 1,
                msg: format!("bad {key}"),
            })
        };
        let vocab_size = num("vocab_size")?;
        let num_sentinels = num("sentinels")?;
        let mode = match field("mode")? {
            "char" => TokenMode::Char,
            "word" => TokenMode::Word,
            other => {
                return Err(Error::Parse {
                    line: 1,
                    msg: format!("unknown mode {other}"),
                })
            }
        };
        let mut content = Vec::new();
        let body: Vec<&str> = lines.collect();
        // The file ends with a newline, leaving one empty trailing piece.
        let body = match body.split_last() {
            Some((last, rest)) if last.is_empty() => rest,
            _ => {
                return Err(Error::Parse {
                    line: body.len() + 1,
                    msg: "vocabulary file must end with a newline".into(),
                })
            }
        };
        for (i, line) in body.iter().enumerate() {
            content.push(unescape(line).ok_or_else(|| Error::Parse {
                line: i + 2,
                msg: "invalid escape sequence".into(),
            })?);
        }
        let vocab = Self::from_tokens(content, num_sentinels, mode)?;
        if vocab.size() != vocab_size {
            return Err(Error::Parse {
                line: 1,
                msg: format!("header vocab_size {vocab_size} but file defines {}", vocab.size()),
            });
        }
        Ok(vocab)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_file_string())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_file_str(&std::fs::read_to_string(path)?)
    }
}

fn escape(tok: &str) -> String {
    let mut out = String::with_capacity(tok.len());
    for c in tok.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            _ => out.push(c),
        }
    }
    out
}

fn unescape(line: &str) -> Option<String> {
    let mut out = String::with_capacity(line.len());
    let mut chars = line.chars();
    while let Some(c) = chars.next() {
        if c == '\r' {
            return None;
        }
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next()? {
            '\\' => out.push('\\'),
            'n' => out.push('\n'),
            'r' => out.push('\r'),
            _ => return None,
        }
    }
    Some(out)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn char_vocab(corpus: &str) -> Vocabulary {
        Vocabulary::build([corpus], 200, DEFAULT_SENTINELS, TokenMode::Char).unwrap()
    }

    #[test]
    fn content_ordered_by_frequency_then_lexically() {
        assert_eq!(char_vocab("aab").content_tokens(), ["a", "b"]);
        assert_eq!(char_vocab("x").content_tokens(), ["x"]);
        assert_eq!(char_vocab("ba").content_tokens(), ["a", "b"]);
        assert_eq!(char_vocab("cbbccc").content_tokens(), ["c", "b"]);
    }

    #[test]
    fn build_errors() {
        assert!(Vocabulary::build(std::iter::empty(), 200, 100, TokenMode::Char).is_err());
        assert!(Vocabulary::build([""], 200, 100, TokenMode::Char).is_err());
        assert!(Vocabulary::build(["abc"], 103, 100, TokenMode::Char).is_err());
    }

    #[test]
    fn max_size_caps_content() {
        let v = Vocabulary::build(["aaabbc"], 105, 100, TokenMode::Char).unwrap();
        assert_eq!(v.content_tokens(), ["a", "b"]);
        assert_eq!(v.size(), 105);
    }

    #[test]
    fn sentinel_block_sits_at_the_top() {
        let content: Vec<String> = (0..153).map(|i| char::from_u32(0x100 + i).unwrap().to_string()).collect();
        let v = Vocabulary::from_tokens(content, 100, TokenMode::Char).unwrap();
        assert_eq!(v.size(), 256);
        assert_eq!(v.sentinel(0).unwrap(), 255);
        assert_eq!(v.sentinel(1).unwrap(), 254);
        assert!(v.sentinel(100).is_err());
        assert_eq!(v.sentinel_index(254), Some(1));
        assert_eq!(v.sentinel_index(156), Some(99));
        assert_eq!(v.sentinel_index(155), None);
        for i in 0..100 {
            let id = v.sentinel(i).unwrap();
            assert!(!v.is_content(id) && id > UNK_ID);
        }
    }

    #[test]
    fn encode_decode_rules() {
        let v = char_vocab("abc ");
        assert!(v.encode("").is_empty());
        assert_eq!(v.encode("a☃b")[1], UNK_ID);
        assert_eq!(v.decode(&[PAD_ID, PAD_ID]).unwrap(), "");
        assert_eq!(v.decode(&[v.sentinel(0).unwrap()]).unwrap(), "<extra_id_0>");
        assert_eq!(v.decode(&[v.token_id("a").unwrap(), EOS_ID]).unwrap(), "a");
        assert!(v.decode(&[v.size() as TokenId]).is_err());
        let ids = v.encode("a☃ b");
        assert_eq!(v.encode(&v.decode(&ids).unwrap()), ids);
    }

    #[test]
    fn word_mode() {
        let v = Vocabulary::build(["the cat the dog"], 200, 4, TokenMode::Word).unwrap();
        assert_eq!(v.content_tokens(), ["the", "cat", "dog"]);
        let ids = v.encode("the  dog cow");
        assert_eq!(ids, vec![3, 5, UNK_ID]);
        assert_eq!(v.decode(&ids[..2]).unwrap(), "the dog");
    }

    #[test]
    fn file_round_trip_and_errors() {
        let v = Vocabulary::from_tokens(
            vec!["a".into(), "\n".into(), "\\".into(), " ".into(), "\r".into()],
            7,
            TokenMode::Char,
        )
        .unwrap();
        let text = v.to_file_string();
        assert!(text.starts_with("#octopus-vocab vocab_size=15 sentinels=7 mode=char\n"));
        let back = Vocabulary::from_file_str(&text).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.to_file_string(), text);
        assert!(Vocabulary::from_file_str("").is_err());
        assert!(Vocabulary::from_file_str("#octopus-vocab vocab_size=6 sentinels=1 mode=char\na\n").is_err());
        assert!(Vocabulary::from_file_str("#octopus-vocab vocab_size=5 sentinels=1 mode=char\na\n").is_ok());
        assert!(Vocabulary::from_file_str("#octopus-vocab vocab_size=5 sentinels=1 mode=char\na\nb").is_err());
        assert!(Vocabulary::from_file_str("#octopus-vocab vocab_size=5 sentinels=1 mode=char\na\\q\n").is_err());
        assert!(Vocabulary::from_file_str("#octopus-vocab vocab_size=6 sentinels=1 mode=char\na\na\n").is_err());
    }

    proptest! {
        #[test]
        fn round_trip_over_alphabet(text in "[a-z αβγ\\n]{0,40}") {
            let v = char_vocab("abcdefghijklmnopqrstuvwxyz αβγ\n");
            prop_assert_eq!(v.decode(&v.encode(&text)).unwrap(), text);
        }

        #[test]
        fn file_round_trip(chars in proptest::collection::hash_set(any::<char>(), 1..40), s in 0usize..20) {
            let content: Vec<String> = chars.into_iter().map(String::from).collect();
            let v = Vocabulary::from_tokens(content, s, TokenMode::Char).unwrap();
            let text = v.to_file_string();
            let back = Vocabulary::from_file_str(&text).unwrap();
            prop_assert_eq!(back.to_file_string(), text);
            prop_assert_eq!(back, v);
        }
    }
}
