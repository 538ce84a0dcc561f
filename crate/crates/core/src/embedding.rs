//! Token embeddings and the Euclidean metric between them.

use std::collections::{HashMap, HashSet};
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::vocab::{Token, TokenId, Vocabulary};

/// One `m`-dimensional vector per vocabulary id, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl EmbeddingMatrix {
    /// Builds a matrix from row-major data. Fails unless `data.len()` is a
    /// multiple of a positive `dim` and every component is finite.
    pub fn from_rows(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || !data.len().is_multiple_of(dim) {
            return Err(Error::config(format!(
                "embedding data of length {} is not a whole number of {dim}-dim rows",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::config(format!(
                "non-finite embedding component in row {}",
                pos / dim
            )));
        }
        Ok(EmbeddingMatrix { dim, data })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn vector(&self, id: TokenId) -> &[f64] {
        let start = id as usize * self.dim;
        &self.data[start..start + self.dim]
    }

    /// Euclidean distance between the embeddings of `x` and `y`.
    #[inline]
    pub fn distance(&self, x: TokenId, y: TokenId) -> f64 {
        euclidean(self.vector(x), self.vector(y))
    }

    /// Largest pairwise distance. Quadratic; intended for small vocabularies.
    pub fn max_distance(&self) -> f64 {
        let n = self.len() as TokenId;
        let mut best = 0.0f64;
        for x in 0..n {
            for y in x + 1..n {
                best = best.max(self.distance(x, y));
            }
        }
        best
    }

    /// Number of ids whose vector exactly repeats an earlier id's vector.
    pub fn duplicate_count(&self) -> usize {
        let mut seen: HashSet<Vec<u64>> = HashSet::with_capacity(self.len());
        let mut dups = 0;
        for row in self.data.chunks_exact(self.dim) {
            // +0.0 and -0.0 compare equal as vectors
            let key: Vec<u64> = row.iter().map(|v| (v + 0.0).to_bits()).collect();
            if !seen.insert(key) {
                dups += 1;
            }
        }
        dups
    }

    pub fn content_hash(&self) -> [u8; 32] {
        use sha2::{Digest, Sha256};
        let mut hasher = Sha256::new();
        hasher.update((self.dim as u64).to_le_bytes());
        for v in &self.data {
            hasher.update(v.to_le_bytes());
        }
        hasher.finalize().into()
    }

    /// Keeps the rows for `ids`, in that order.
    pub fn select(&self, ids: &[TokenId]) -> EmbeddingMatrix {
        let mut data = Vec::with_capacity(ids.len() * self.dim);
        for &id in ids {
            data.extend_from_slice(self.vector(id));
        }
        EmbeddingMatrix {
            dim: self.dim,
            data,
        }
    }
}

#[inline]
pub(crate) fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(p, q)| {
            let d = p - q;
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// Result of loading embeddings for a vocabulary.
#[derive(Clone, Debug)]
pub struct LoadedEmbeddings {
    /// The input vocabulary minus the tokens missing from the file, order kept.
    pub vocab: Vocabulary,
    pub matrix: EmbeddingMatrix,
    /// Vocabulary tokens with no vector in the file.
    pub missing: Vec<Token>,
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.into(),
        line,
        message: message.into(),
    }
}

/// Iterates `(line number, token, rest-of-line)` over a GloVe text file,
/// skipping a leading word2vec-style `count dim` header if present.
fn glove_lines(path: &Path, mut visit: impl FnMut(usize, &str, &str) -> Result<()>) -> Result<()> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    let mut line = String::new();
    let mut lineno = 0usize;
    loop {
        line.clear();
        let read = reader
            .read_line(&mut line)
            .map_err(|e| Error::io(path, e))?;
        if read == 0 {
            break;
        }
        lineno += 1;
        let trimmed = line.trim_end_matches(['\n', '\r']);
        if trimmed.trim().is_empty() {
            continue;
        }
        let (token, rest) = trimmed
            .split_once(' ')
            .ok_or_else(|| parse_err(path, lineno, "expected a token followed by floats"))?;
        if lineno == 1 {
            let fields: Vec<&str> = trimmed.split_whitespace().collect();
            if fields.len() == 2 && fields.iter().all(|f| f.parse::<u64>().is_ok()) {
                continue;
            }
        }
        visit(lineno, token, rest)?;
    }
    Ok(())
}

/// Collects the token column of a GloVe file.
pub fn read_embedding_tokens(path: &Path) -> Result<HashSet<String>> {
    let mut tokens = HashSet::new();
    glove_lines(path, |_, token, _| {
        tokens.insert(token.to_owned());
        Ok(())
    })?;
    Ok(tokens)
}

/// Loads the vectors for `vocab` from a GloVe text file.
///
/// Every line is validated: a dimensionality change or an unparseable float
/// is fatal and reports the line. Repeated tokens keep their first vector.
pub fn load_embeddings(path: &Path, vocab: &Vocabulary) -> Result<LoadedEmbeddings> {
    let mut dim: Option<usize> = None;
    let mut found: HashMap<TokenId, Vec<f64>> = HashMap::with_capacity(vocab.len());
    let mut scratch: Vec<f64> = Vec::new();
    glove_lines(path, |lineno, token, rest| {
        scratch.clear();
        for field in rest.split_ascii_whitespace() {
            let v: f64 = field
                .parse()
                .map_err(|_| parse_err(path, lineno, format!("unparseable float `{field}`")))?;
            if !v.is_finite() {
                return Err(parse_err(
                    path,
                    lineno,
                    format!("non-finite value `{field}`"),
                ));
            }
            scratch.push(v);
        }
        match dim {
            None if scratch.is_empty() => {
                return Err(parse_err(path, lineno, "line has no vector components"))
            }
            None => dim = Some(scratch.len()),
            Some(m) if m != scratch.len() => {
                return Err(parse_err(
                    path,
                    lineno,
                    format!("expected {m} components, found {}", scratch.len()),
                ))
            }
            Some(_) => {}
        }
        if let Some(id) = vocab.id(token) {
            found.entry(id).or_insert_with(|| scratch.clone());
        }
        Ok(())
    })?;

    let dim = dim.ok_or_else(|| parse_err(path, 0, "embedding file contains no vectors"))?;
    let mut kept = Vec::with_capacity(found.len());
    let mut missing = Vec::new();
    let mut data = Vec::with_capacity(found.len() * dim);
    for id in vocab.ids() {
        match found.remove(&id) {
            Some(v) => {
                data.extend_from_slice(&v);
                kept.push(vocab.token(id).clone());
            }
            None => missing.push(vocab.token(id).clone()),
        }
    }
    let matrix = EmbeddingMatrix { dim, data };
    let dups = matrix.duplicate_count();
    if dups > 0 {
        log::warn!(
            "{dups} vocabulary tokens share an identical embedding vector with another token"
        );
    }
    Ok(LoadedEmbeddings {
        vocab: Vocabulary::from_tokens(kept),
        matrix,
        missing,
    })
}

const CACHE_MAGIC: &[u8; 8] = b"STXEMBED";
const CACHE_VERSION: u32 = 1;

/// Binary cache layout (all integers little-endian):
/// magic `STXEMBED`, version `u32`, `|V|` `u64`, `m` `u64`,
/// SHA-256 of the vocabulary (32 bytes), then `|V| * m` `f64` values row-major.
pub fn write_cache(matrix: &EmbeddingMatrix, vocab: &Vocabulary, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    let write = |out: &mut std::io::BufWriter<std::fs::File>| -> std::io::Result<()> {
        out.write_all(CACHE_MAGIC)?;
        out.write_all(&CACHE_VERSION.to_le_bytes())?;
        out.write_all(&(matrix.len() as u64).to_le_bytes())?;
        out.write_all(&(matrix.dim as u64).to_le_bytes())?;
        out.write_all(&vocab.content_hash())?;
        for v in &matrix.data {
            out.write_all(&v.to_le_bytes())?;
        }
        out.flush()
    };
    write(&mut out).map_err(|e| Error::io(path, e))
}

/// Reads a cache written by [`write_cache`], rejecting it if it was built for
/// a different vocabulary.
pub fn read_cache(path: &Path, vocab: &Vocabulary) -> Result<EmbeddingMatrix> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut input = BufReader::new(file);
    let mut header = [0u8; 8 + 4 + 8 + 8 + 32];
    input
        .read_exact(&mut header)
        .map_err(|e| Error::io(path, e))?;
    if &header[..8] != CACHE_MAGIC {
        return Err(Error::StaleCache("bad magic bytes".into()));
    }
    let version = u32::from_le_bytes(header[8..12].try_into().unwrap());
    if version != CACHE_VERSION {
        return Err(Error::StaleCache(format!("unsupported version {version}")));
    }
    let n = u64::from_le_bytes(header[12..20].try_into().unwrap()) as usize;
    let dim = u64::from_le_bytes(header[20..28].try_into().unwrap()) as usize;
    if header[28..60] != vocab.content_hash() || n != vocab.len() {
        return Err(Error::StaleCache("vocabulary hash mismatch".into()));
    }
    let mut bytes = Vec::with_capacity(n * dim * 8);
    input
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() != n * dim * 8 {
        return Err(Error::StaleCache(format!(
            "expected {} payload bytes, found {}",
            n * dim * 8,
            bytes.len()
        )));
    }
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    EmbeddingMatrix::from_rows(dim, data)
}
