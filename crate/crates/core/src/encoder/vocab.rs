use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const BOS_ID: u32 = 2;
pub const RESERVED: [&str; 3] = ["[PAD]", "[UNK]", "[BOS]"];

/// Lowercases `text` and splits it into runs of alphanumeric characters and
/// single punctuation characters. Whitespace only separates.
pub fn split_tokens(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut word = String::new();
    for ch in text.chars().flat_map(char::to_lowercase) {
        if ch.is_alphanumeric() {
            word.push(ch);
            continue;
        }
        if !word.is_empty() {
            out.push(std::mem::take(&mut word));
        }
        if !ch.is_whitespace() {
            out.push(ch.to_string());
        }
    }
    if !word.is_empty() {
        out.push(word);
    }
    out
}

/// Token ↔ id mapping with `[PAD]`, `[UNK]`, `[BOS]` at ids 0, 1, 2.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    /// Builds a vocabulary holding at most `vocab_size` entries (reserved
    /// ids included). Tokens are ranked by descending frequency; ties keep
    /// first-occurrence order, so the result depends only on corpus order.
    pub fn build<I, S>(corpus: I, vocab_size: usize) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        if vocab_size <= RESERVED.len() {
            return Err(Error::Input(format!(
                "vocab_size must exceed the {} reserved ids",
                RESERVED.len()
            )));
        }
        let mut counts: HashMap<String, (usize, usize)> = HashMap::new();
        let mut docs = 0usize;
        for text in corpus {
            docs += 1;
            for tok in split_tokens(text.as_ref()) {
                let next = counts.len();
                counts.entry(tok).or_insert((0, next)).0 += 1;
            }
        }
        if docs == 0 {
            return Err(Error::Input(
                "cannot build a vocabulary from an empty corpus".into(),
            ));
        }
        let mut ranked: Vec<(String, usize, usize)> = counts
            .into_iter()
            .map(|(t, (c, first))| (t, c, first))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)));
        ranked.truncate(vocab_size - RESERVED.len());
        Self::from_tokens(
            RESERVED
                .iter()
                .map(|s| s.to_string())
                .chain(ranked.into_iter().map(|(t, _, _)| t))
                .collect(),
        )
    }

    /// `tokens[i]` receives id `i`; the first three must be the reserved tokens.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < RESERVED.len() || tokens[..RESERVED.len()] != RESERVED {
            return Err(Error::Input(format!(
                "vocabulary must start with reserved tokens {RESERVED:?}"
            )));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(Error::Input(format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        split_tokens(text).iter().map(|t| self.id(t)).collect()
    }

    /// One token per line; line `i` (0-based) holds id `i`.
    pub fn to_file_string(&self) -> String {
        let mut s = String::new();
        for t in &self.tokens {
            s.push_str(t);
            s.push('\n');
        }
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_file_string()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_tokens(text.lines().map(str::to_string).collect())
    }
}

/// Token ids and attention mask for a single text, padded to `max_len`.
pub fn tokenize(text: &str, vocab: &Vocabulary, max_len: usize) -> Result<(Vec<u32>, Vec<u8>)> {
    if max_len < 2 {
        return Err(Error::Contract(format!(
            "max_len must be at least 2, got {max_len}"
        )));
    }
    let mut ids = Vec::with_capacity(max_len);
    ids.push(BOS_ID);
    ids.extend(vocab.encode(text).into_iter().take(max_len - 1));
    let mut mask = vec![1u8; ids.len()];
    ids.resize(max_len, PAD_ID);
    mask.resize(max_len, 0);
    Ok((ids, mask))
}
