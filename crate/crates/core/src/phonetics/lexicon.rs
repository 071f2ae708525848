use std::collections::HashMap;
use std::path::Path;

use super::classes::{normalize_symbol, phone_info};
use crate::{Error, Result};

const BUILTIN: &str = include_str!("../../data/lexicon.dict");

/// Word to pronunciations, CMUdict style. The first pronunciation listed for
/// a word is the one used by [`Lexicon::g2p`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Lexicon {
    entries: HashMap<String, Vec<Vec<String>>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Token {
    Phone(String),
    WordBoundary,
    Oov(String),
}

/// Phonemes with word-boundary markers; out-of-vocabulary words are kept as
/// [`Token::Oov`] markers.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PhonemeSequence {
    pub tokens: Vec<Token>,
}

impl PhonemeSequence {
    pub fn from_phones<S: AsRef<str>>(phones: &[S]) -> Self {
        Self {
            tokens: phones
                .iter()
                .map(|p| Token::Phone(p.as_ref().to_string()))
                .collect(),
        }
    }

    pub fn phones(&self) -> Vec<&str> {
        self.tokens
            .iter()
            .filter_map(|t| match t {
                Token::Phone(p) => Some(p.as_str()),
                _ => None,
            })
            .collect()
    }

    pub fn oov_words(&self) -> Vec<&str> {
        self.tokens
            .iter()
            .filter_map(|t| match t {
                Token::Oov(w) => Some(w.as_str()),
                _ => None,
            })
            .collect()
    }

    pub fn oov_count(&self) -> usize {
        self.oov_words().len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Uppercase word key with surrounding punctuation removed. Apostrophes
/// inside words are kept (`KNIGHT'S`).
pub fn normalize_word(w: &str) -> String {
    w.trim_matches(|c: char| !c.is_alphanumeric())
        .replace('\u{2019}', "'")
        .to_ascii_uppercase()
}

impl Lexicon {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries: HashMap<String, Vec<Vec<String>>> = HashMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim_end();
            if line.is_empty() || line.starts_with(";;;") {
                continue;
            }
            let (word, pron) = line
                .split_once("  ")
                .ok_or_else(|| Error::Format(format!("lexicon line {}: expected two spaces", n + 1)))?;
            // homograph variants are written WORD(2)
            let word = match word.find('(') {
                Some(i) if word.ends_with(')') => &word[..i],
                _ => word,
            };
            let phones = pron
                .split_whitespace()
                .map(|p| {
                    let sym = normalize_symbol(p);
                    phone_info(&sym).map(|_| sym).ok_or_else(|| {
                        Error::Format(format!("lexicon line {}: unknown phoneme {p:?}", n + 1))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            entries
                .entry(normalize_word(word))
                .or_default()
                .push(phones);
        }
        Ok(Self { entries })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// The lexicon shipped with the crate.
    pub fn builtin() -> Self {
        Self::parse(BUILTIN).expect("built-in lexicon is well formed")
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn pronunciations(&self, word: &str) -> Option<&[Vec<String>]> {
        self.entries.get(&normalize_word(word)).map(Vec::as_slice)
    }

    pub fn contains(&self, word: &str) -> bool {
        self.pronunciations(word).is_some()
    }

    pub fn g2p(&self, text: &str) -> PhonemeSequence {
        let mut tokens = Vec::new();
        for (i, raw) in text.split_whitespace().enumerate() {
            let word = normalize_word(raw);
            if word.is_empty() {
                continue;
            }
            if i > 0 && !tokens.is_empty() {
                tokens.push(Token::WordBoundary);
            }
            match self.entries.get(&word) {
                Some(prons) => tokens.extend(prons[0].iter().cloned().map(Token::Phone)),
                None => tokens.push(Token::Oov(word)),
            }
        }
        PhonemeSequence { tokens }
    }
}
