//! Pluggable tokenizers and a growable vocabulary.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

/// Splits text into surface pieces. Token counts and training ids are both
/// derived from these pieces.
pub trait Tokenizer: Send + Sync {
    fn tokenize<'a>(&self, text: &'a str) -> Vec<&'a str>;

    fn count(&self, text: &str) -> usize {
        self.tokenize(text).len()
    }
}

/// One token per run of ASCII alphanumerics, one per CJK character and one per
/// any other non-whitespace character. Whitespace is dropped.
#[derive(Debug, Clone, Copy, Default)]
pub struct MixedScriptTokenizer;

impl Tokenizer for MixedScriptTokenizer {
    fn tokenize<'a>(&self, text: &'a str) -> Vec<&'a str> {
        let mut out = Vec::new();
        let mut run_start: Option<usize> = None;
        for (i, c) in text.char_indices() {
            if c.is_ascii_alphanumeric() {
                run_start.get_or_insert(i);
                continue;
            }
            if let Some(start) = run_start.take() {
                out.push(&text[start..i]);
            }
            if !c.is_whitespace() {
                out.push(&text[i..i + c.len_utf8()]);
            }
        }
        if let Some(start) = run_start {
            out.push(&text[start..]);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct WhitespaceTokenizer;

impl Tokenizer for WhitespaceTokenizer {
    fn tokenize<'a>(&self, text: &'a str) -> Vec<&'a str> {
        text.split_whitespace().collect()
    }
}

/// Maps token pieces to ids in first-seen order.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    pieces: Vec<String>,
    index: HashMap<String, u32>,
}

impl From<Vec<String>> for Vocab {
    fn from(pieces: Vec<String>) -> Self {
        let mut vocab = Vocab::new();
        for p in &pieces {
            vocab.id(p);
        }
        vocab
    }
}

impl From<Vocab> for Vec<String> {
    fn from(vocab: Vocab) -> Self {
        vocab.pieces
    }
}

impl Vocab {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn id(&mut self, piece: &str) -> u32 {
        if let Some(&id) = self.index.get(piece) {
            return id;
        }
        let id = self.pieces.len() as u32;
        self.pieces.push(piece.to_string());
        self.index.insert(piece.to_string(), id);
        id
    }

    pub fn encode(&mut self, tokenizer: &dyn Tokenizer, text: &str) -> Vec<u32> {
        tokenizer.tokenize(text).into_iter().map(|p| self.id(p)).collect()
    }

    pub fn piece(&self, id: u32) -> Option<&str> {
        self.pieces.get(id as usize).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }
}
