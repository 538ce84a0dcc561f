//! Tokenization, vocabulary construction, frequency counting and the
//! sensitive / non-sensitive vocabulary split.

use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;

/// Dense token identifier, `0..|V|`.
pub type TokenId = u32;

/// A normalized token surface form.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Token(String);

impl Token {
    /// Wraps an already-normalized surface form. Returns `None` for empty or
    /// whitespace-containing strings.
    pub fn new(surface: impl Into<String>) -> Option<Self> {
        let s = surface.into();
        if s.is_empty() || s.chars().any(char::is_whitespace) {
            None
        } else {
            Some(Token(s))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn into_string(self) -> String {
        self.0
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl AsRef<str> for Token {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenizerMode {
    /// Lowercase, split on Unicode whitespace, then trim leading and trailing
    /// characters that are not alphanumeric. A piece made only of such
    /// characters (`"."`, `"--"`) is kept as-is.
    #[default]
    Whitespace,
    /// Input is already tokenized: lowercase and split on whitespace only.
    Pretokenized,
}

impl std::str::FromStr for TokenizerMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "whitespace" => Ok(TokenizerMode::Whitespace),
            "pretokenized" => Ok(TokenizerMode::Pretokenized),
            other => Err(Error::config(format!("unknown tokenizer mode `{other}`"))),
        }
    }
}

pub fn tokenize(text: &str, mode: TokenizerMode) -> Vec<Token> {
    text.split_whitespace()
        .map(|piece| {
            let lower = piece.to_lowercase();
            let surface = match mode {
                TokenizerMode::Pretokenized => lower,
                TokenizerMode::Whitespace => {
                    let trimmed = lower.trim_matches(|c: char| !c.is_alphanumeric());
                    if trimmed.is_empty() {
                        lower
                    } else {
                        trimmed.to_owned()
                    }
                }
            };
            Token(surface)
        })
        .collect()
}

/// Ordered token list with its inverse index.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<Token>,
    index: HashMap<String, TokenId>,
}

impl Vocabulary {
    /// Builds a vocabulary from an ordered list. Duplicates keep their first id.
    pub fn from_tokens(tokens: impl IntoIterator<Item = Token>) -> Self {
        let mut vocab = Vocabulary::default();
        for token in tokens {
            vocab.push(token);
        }
        vocab
    }

    fn push(&mut self, token: Token) -> TokenId {
        if let Some(&id) = self.index.get(token.as_str()) {
            return id;
        }
        let id = self.tokens.len() as TokenId;
        self.index.insert(token.0.clone(), id);
        self.tokens.push(token);
        id
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> &Token {
        &self.tokens[id as usize]
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn ids(&self) -> impl Iterator<Item = TokenId> {
        0..self.tokens.len() as TokenId
    }

    /// SHA-256 over the newline-joined token list.
    pub fn content_hash(&self) -> [u8; 32] {
        use sha2::{Digest, Sha256};
        let mut hasher = Sha256::new();
        for token in &self.tokens {
            hasher.update(token.as_str().as_bytes());
            hasher.update(b"\n");
        }
        hasher.finalize().into()
    }

    /// One token per line; the id is the zero-based line number.
    pub fn write_to(&self, mut out: impl Write) -> std::io::Result<()> {
        for token in &self.tokens {
            writeln!(out, "{token}")?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = std::io::BufWriter::new(file);
        self.write_to(&mut out)
            .and_then(|_| out.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut vocab = Vocabulary::default();
        for (lineno, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            let token = Token::new(line.trim_end_matches('\r')).ok_or_else(|| Error::Parse {
                path: path.into(),
                line: lineno + 1,
                message: "vocabulary entries must be non-empty and contain no whitespace".into(),
            })?;
            if vocab.index.contains_key(token.as_str()) {
                return Err(Error::Parse {
                    path: path.into(),
                    line: lineno + 1,
                    message: format!("duplicate vocabulary entry `{token}`"),
                });
            }
            vocab.push(token);
        }
        Ok(vocab)
    }
}

/// Occurrence counts aligned with vocabulary ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FrequencyTable {
    counts: Vec<u64>,
    /// Corpus tokens that fell outside the vocabulary.
    oov: u64,
}

impl FrequencyTable {
    pub fn from_counts(counts: Vec<u64>) -> Self {
        FrequencyTable { counts, oov: 0 }
    }

    pub fn count(&self, id: TokenId) -> u64 {
        self.counts[id as usize]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn oov_count(&self) -> u64 {
        self.oov
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// Re-indexes counts onto `to`, a sub-vocabulary of `from`. Counts of
    /// dropped tokens move to the OOV total.
    pub fn restrict(&self, from: &Vocabulary, to: &Vocabulary) -> FrequencyTable {
        let mut counts = vec![0u64; to.len()];
        let mut oov = self.oov;
        for (id, &c) in self.counts.iter().enumerate() {
            match to.id(from.token(id as TokenId).as_str()) {
                Some(new) => counts[new as usize] = c,
                None => oov += c,
            }
        }
        FrequencyTable { counts, oov }
    }

    /// `token<TAB>count`, one line per vocabulary id.
    pub fn write_to(&self, vocab: &Vocabulary, mut out: impl Write) -> std::io::Result<()> {
        for (token, count) in vocab.tokens().iter().zip(&self.counts) {
            writeln!(out, "{token}\t{count}")?;
        }
        Ok(())
    }

    pub fn save(&self, vocab: &Vocabulary, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = std::io::BufWriter::new(file);
        self.write_to(vocab, &mut out)
            .and_then(|_| out.flush())
            .map_err(|e| Error::io(path, e))
    }

    /// Reads a frequency dump, checking it against `vocab` line by line.
    pub fn load(path: &Path, vocab: &Vocabulary) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut counts = vec![0u64; vocab.len()];
        let mut seen = 0usize;
        for (lineno, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            let parse_err = |message: String| Error::Parse {
                path: path.into(),
                line: lineno + 1,
                message,
            };
            let (token, count) = line
                .split_once('\t')
                .ok_or_else(|| parse_err("expected `token<TAB>count`".into()))?;
            let id = vocab
                .id(token)
                .ok_or_else(|| parse_err(format!("token `{token}` not in vocabulary")))?;
            counts[id as usize] = count
                .trim()
                .parse()
                .map_err(|e| parse_err(format!("bad count `{count}`: {e}")))?;
            seen += 1;
        }
        if seen != vocab.len() {
            return Err(Error::Parse {
                path: path.into(),
                line: seen,
                message: format!("expected {} entries, found {seen}", vocab.len()),
            });
        }
        Ok(FrequencyTable { counts, oov: 0 })
    }
}

/// Documents per work unit when counting in parallel.
const COUNT_CHUNK: usize = 1024;

/// Builds the vocabulary and frequency table from tokenized documents.
///
/// With `external_vocab`, the vocabulary is exactly that list and corpus
/// tokens outside it are counted as OOV. Otherwise the vocabulary is every
/// distinct corpus token accepted by `keep` (typically "has an embedding"),
/// in order of first appearance.
pub fn build_vocab<D, F>(
    corpus: &[D],
    external_vocab: Option<&[Token]>,
    keep: F,
) -> Result<(Vocabulary, FrequencyTable)>
where
    D: AsRef<[Token]> + Sync,
    F: Fn(&Token) -> bool + Sync + Send,
{
    if let Some(list) = external_vocab {
        let vocab = Vocabulary::from_tokens(list.iter().cloned());
        if vocab.is_empty() {
            return Err(Error::config("external vocabulary is empty"));
        }
        let chunks: Vec<&[D]> = corpus.chunks(COUNT_CHUNK).collect();
        let partials = par::map_slice(&chunks, |chunk| {
            let mut counts = vec![0u64; vocab.len()];
            let mut oov = 0u64;
            for doc in chunk.iter() {
                for token in doc.as_ref() {
                    match vocab.index.get(token.as_str()) {
                        Some(&id) => counts[id as usize] += 1,
                        None => oov += 1,
                    }
                }
            }
            (counts, oov)
        });
        let mut counts = vec![0u64; vocab.len()];
        let mut oov = 0;
        for (partial, partial_oov) in partials {
            for (c, p) in counts.iter_mut().zip(partial) {
                *c += p;
            }
            oov += partial_oov;
        }
        return Ok((vocab, FrequencyTable { counts, oov }));
    }

    if corpus.is_empty() {
        return Err(Error::config(
            "corpus is empty and no external vocabulary was given",
        ));
    }

    // Each chunk records its distinct tokens in first-appearance order; merging
    // chunks in order reproduces the sequential first-appearance order.
    let chunks: Vec<&[D]> = corpus.chunks(COUNT_CHUNK).collect();
    let partials = par::map_slice(&chunks, |chunk| {
        let mut order: Vec<Token> = Vec::new();
        let mut counts: HashMap<&Token, u64> = HashMap::new();
        let mut oov = 0u64;
        for doc in chunk.iter() {
            for token in doc.as_ref() {
                if let Some(c) = counts.get_mut(token) {
                    *c += 1;
                } else if keep(token) {
                    counts.insert(token, 1);
                    order.push(token.clone());
                } else {
                    oov += 1;
                }
            }
        }
        let counts: Vec<u64> = order.iter().map(|t| counts[t]).collect();
        (order, counts, oov)
    });

    let mut vocab = Vocabulary::default();
    let mut counts: Vec<u64> = Vec::new();
    let mut oov = 0;
    for (order, partial, partial_oov) in partials {
        for (token, c) in order.into_iter().zip(partial) {
            let id = vocab.push(token) as usize;
            if id == counts.len() {
                counts.push(0);
            }
            counts[id] += c;
        }
        oov += partial_oov;
    }
    if vocab.is_empty() {
        return Err(Error::config(
            "vocabulary is empty: no corpus token has an embedding",
        ));
    }
    Ok((vocab, FrequencyTable { counts, oov }))
}

/// The sensitive (`V_S`, equal to the protected output set `V_P`) and
/// non-sensitive (`V_N`, equal to the unprotected set `V_U`) split.
#[derive(Clone, Debug, PartialEq)]
pub struct SensitivityPartition {
    sensitive_ids: Vec<TokenId>,
    nonsensitive_ids: Vec<TokenId>,
    is_sensitive: Vec<bool>,
    w: f64,
}

impl SensitivityPartition {
    /// Builds a partition from a per-id membership mask.
    pub fn from_mask(is_sensitive: Vec<bool>, w: f64) -> Self {
        let (mut sensitive_ids, mut nonsensitive_ids) = (Vec::new(), Vec::new());
        for (id, &s) in is_sensitive.iter().enumerate() {
            if s {
                sensitive_ids.push(id as TokenId);
            } else {
                nonsensitive_ids.push(id as TokenId);
            }
        }
        SensitivityPartition {
            sensitive_ids,
            nonsensitive_ids,
            is_sensitive,
            w,
        }
    }

    /// Every token sensitive.
    pub fn all_sensitive(vocab_len: usize) -> Self {
        Self::from_mask(vec![true; vocab_len], 1.0)
    }

    /// Sensitive ids in ascending order.
    pub fn sensitive_ids(&self) -> &[TokenId] {
        &self.sensitive_ids
    }

    /// Non-sensitive ids in ascending order.
    pub fn nonsensitive_ids(&self) -> &[TokenId] {
        &self.nonsensitive_ids
    }

    pub fn is_sensitive(&self, id: TokenId) -> bool {
        self.is_sensitive[id as usize]
    }

    pub fn vocab_len(&self) -> usize {
        self.is_sensitive.len()
    }

    pub fn w(&self) -> f64 {
        self.w
    }

    pub fn content_hash(&self) -> [u8; 32] {
        use sha2::{Digest, Sha256};
        let mut hasher = Sha256::new();
        hasher.update((self.is_sensitive.len() as u64).to_le_bytes());
        for &id in &self.sensitive_ids {
            hasher.update(id.to_le_bytes());
        }
        hasher.finalize().into()
    }
}

/// Marks the lowest-frequency `floor(w * |V|)` tokens sensitive.
///
/// Ids are ordered by `(count, token string)` ascending. After taking the
/// target number, any further id tied with the count of the last one taken is
/// also marked sensitive, so a boundary tie never splits across the partition.
pub fn partition_sensitivity(
    vocab: &Vocabulary,
    freq: &FrequencyTable,
    w: f64,
) -> Result<SensitivityPartition> {
    if !(0.0..=1.0).contains(&w) {
        return Err(Error::config(format!("w must lie in [0, 1], got {w}")));
    }
    if freq.len() != vocab.len() {
        return Err(Error::config(format!(
            "frequency table has {} entries but vocabulary has {}",
            freq.len(),
            vocab.len()
        )));
    }
    let n = vocab.len();
    // 1e-9 absorbs representation error such as 0.29 * 100 = 28.999999999999996.
    let target = ((w * n as f64) + 1e-9).floor().min(n as f64) as usize;

    let mut order: Vec<TokenId> = vocab.ids().collect();
    order.sort_by(|&a, &b| {
        freq.count(a)
            .cmp(&freq.count(b))
            .then_with(|| vocab.token(a).cmp(vocab.token(b)))
    });

    let mut mask = vec![false; n];
    if target > 0 {
        let boundary = freq.count(order[target - 1]);
        for &id in &order[..target] {
            mask[id as usize] = true;
        }
        for &id in &order[target..] {
            if freq.count(id) != boundary {
                break;
            }
            mask[id as usize] = true;
        }
    }
    Ok(SensitivityPartition::from_mask(mask, w))
}

/// A tokenized document as vocabulary ids.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Document {
    pub tokens: Vec<TokenId>,
    /// Source record id; also selects the document's random stream.
    pub provenance: u64,
}

impl Document {
    pub fn new(tokens: Vec<TokenId>, provenance: u64) -> Self {
        Document { tokens, provenance }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}
