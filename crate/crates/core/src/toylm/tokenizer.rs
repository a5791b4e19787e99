use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};

/// Ids of the special tokens. They always occupy the first ids of a vocab.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpecialIds {
    pub pad: u32,
    pub unk: u32,
    pub cls: u32,
    pub sep: u32,
    pub mask: u32,
    pub insep: u32,
    pub bos: u32,
}

pub const SPECIAL_TOKENS: [&str; 7] = [
    "<pad>", "<unk>", "<cls>", "<sep>", "<mask>", "<insep>", "<bos>",
];

impl SpecialIds {
    pub const DEFAULT: SpecialIds = SpecialIds {
        pad: 0,
        unk: 1,
        cls: 2,
        sep: 3,
        mask: 4,
        insep: 5,
        bos: 6,
    };

    pub fn is_special(&self, id: u32) -> bool {
        (id as usize) < SPECIAL_TOKENS.len()
    }
}

/// Lowercasing whitespace tokenizer with a frequency-ranked vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tokenizer {
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, u32>,
}

impl Tokenizer {
    fn from_tokens(tokens: Vec<String>) -> Tokenizer {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Tokenizer { tokens, index }
    }

    pub fn specials(&self) -> SpecialIds {
        SpecialIds::DEFAULT
    }

    pub fn vocab_size(&self) -> usize {
        self.tokens.len()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    /// Word ids of `text`; no special tokens are added.
    pub fn encode(&self, text: &str) -> Vec<u32> {
        let unk = self.specials().unk;
        text.split_whitespace()
            .map(|w| {
                let w = w.to_lowercase();
                match self.index.get(&w) {
                    Some(&id) if !self.specials().is_special(id) => id,
                    _ => unk,
                }
            })
            .collect()
    }

    pub fn decode(&self, ids: &[u32]) -> String {
        ids.iter()
            .map(|&id| self.token(id).unwrap_or(SPECIAL_TOKENS[1]))
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).expect("tokenizer serializes");
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Tokenizer> {
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let t: Tokenizer = serde_json::from_str(&raw).map_err(|e| Error::Data(e.to_string()))?;
        if t.tokens.len() < SPECIAL_TOKENS.len()
            || t.tokens[..SPECIAL_TOKENS.len()] != SPECIAL_TOKENS.map(String::from)
        {
            return Err(Error::Data(
                "tokenizer file lacks the special tokens".into(),
            ));
        }
        Ok(Tokenizer::from_tokens(t.tokens))
    }
}

/// Specials followed by the `max_vocab − 7` most frequent lowercased words,
/// frequency ties broken lexicographically.
pub fn build_tokenizer(corpus: &Corpus, max_vocab: usize) -> Result<Tokenizer> {
    build_tokenizer_from_texts(
        corpus.documents().iter().map(|d| d.text.as_str()),
        max_vocab,
    )
}

pub fn build_tokenizer_from_texts<'a>(
    texts: impl IntoIterator<Item = &'a str>,
    max_vocab: usize,
) -> Result<Tokenizer> {
    if max_vocab <= SPECIAL_TOKENS.len() {
        return Err(Error::Config(format!(
            "max_vocab {max_vocab} leaves no room beyond {} special tokens",
            SPECIAL_TOKENS.len()
        )));
    }
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    let mut any = false;
    for text in texts {
        any = true;
        for w in text.split_whitespace() {
            let w = w.to_lowercase();
            if SPECIAL_TOKENS.contains(&w.as_str()) {
                continue;
            }
            *counts.entry(w).or_default() += 1;
        }
    }
    if !any {
        return Err(Error::Data(
            "cannot build a tokenizer from an empty corpus".into(),
        ));
    }
    let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let mut tokens: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
    tokens.extend(
        ranked
            .into_iter()
            .take(max_vocab - SPECIAL_TOKENS.len())
            .map(|(w, _)| w),
    );
    Ok(Tokenizer::from_tokens(tokens))
}
