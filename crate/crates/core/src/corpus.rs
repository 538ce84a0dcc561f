//! Line-oriented corpus I/O and end-to-end text sanitization.
//!
//! A corpus is UTF-8 text with one document per line, or TSV where one
//! column holds the text and every other column (labels) passes through
//! untouched.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mechanism::ProbabilityModel;
use crate::par;
use crate::vocab::{tokenize, Document, Token, TokenId, TokenizerMode, Vocabulary};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum CorpusFormat {
    #[default]
    Lines,
    Tsv {
        text_column: usize,
        has_header: bool,
    },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Record {
    /// Zero-based index among data lines; the document's provenance id.
    pub id: u64,
    pub fields: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Corpus {
    pub format: CorpusFormat,
    pub header: Option<String>,
    pub records: Vec<Record>,
}

impl Corpus {
    pub fn from_lines<S: Into<String>>(lines: impl IntoIterator<Item = S>) -> Self {
        Corpus {
            format: CorpusFormat::Lines,
            header: None,
            records: lines
                .into_iter()
                .enumerate()
                .map(|(i, l)| Record {
                    id: i as u64,
                    fields: vec![l.into()],
                })
                .collect(),
        }
    }

    fn text_column(&self) -> usize {
        match self.format {
            CorpusFormat::Lines => 0,
            CorpusFormat::Tsv { text_column, .. } => text_column,
        }
    }

    pub fn text<'a>(&self, record: &'a Record) -> &'a str {
        record
            .fields
            .get(self.text_column())
            .map(String::as_str)
            .unwrap_or("")
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn tokenize(&self, mode: TokenizerMode) -> Vec<Vec<Token>> {
        par::map_slice(&self.records, |r| tokenize(self.text(r), mode))
    }

    /// Writes the header (if any) and one line per record, replacing the text
    /// column with `texts[i]`.
    pub fn write_with_texts(&self, texts: &[String], mut out: impl Write) -> std::io::Result<()> {
        if let Some(header) = &self.header {
            writeln!(out, "{header}")?;
        }
        let col = self.text_column();
        for (record, text) in self.records.iter().zip(texts) {
            let mut first = true;
            for (i, field) in record.fields.iter().enumerate() {
                if !first {
                    out.write_all(b"\t")?;
                }
                first = false;
                out.write_all(if i == col { text } else { field }.as_bytes())?;
            }
            if record.fields.len() <= col {
                if !first {
                    out.write_all(b"\t")?;
                }
                out.write_all(text.as_bytes())?;
            }
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

pub fn read_corpus(path: &Path, format: CorpusFormat) -> Result<Corpus> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut header = None;
    let mut records = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim_end_matches('\r').to_owned();
        match format {
            CorpusFormat::Lines => records.push(Record {
                id: records.len() as u64,
                fields: vec![line],
            }),
            CorpusFormat::Tsv {
                text_column,
                has_header,
            } => {
                if has_header && lineno == 0 {
                    header = Some(line);
                    continue;
                }
                let fields: Vec<String> = line.split('\t').map(str::to_owned).collect();
                if fields.len() <= text_column {
                    return Err(Error::Parse {
                        path: path.into(),
                        line: lineno + 1,
                        message: format!(
                            "expected at least {} tab-separated columns",
                            text_column + 1
                        ),
                    });
                }
                records.push(Record {
                    id: records.len() as u64,
                    fields,
                });
            }
        }
    }
    Ok(Corpus {
        format,
        header,
        records,
    })
}

/// A token position: either a vocabulary id or an out-of-vocabulary token
/// that is copied through unchanged.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Slot {
    Known(TokenId),
    Oov(Token),
}

pub fn encode(tokens: &[Token], vocab: &Vocabulary) -> Vec<Slot> {
    tokens
        .iter()
        .map(|t| match vocab.id(t.as_str()) {
            Some(id) => Slot::Known(id),
            None => Slot::Oov(t.clone()),
        })
        .collect()
}

/// Counters recorded alongside a sanitized corpus.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SanitizeStats {
    pub documents: u64,
    pub tokens: u64,
    pub oov_tokens: u64,
    /// In-vocabulary positions whose output equals the input.
    pub self_substitutions: u64,
    pub sanitize_seconds: f64,
}

/// Sanitized texts (space-joined tokens) and per-document token sequences.
#[derive(Clone, Debug)]
pub struct SanitizedCorpus {
    pub texts: Vec<String>,
    pub tokens: Vec<Vec<String>>,
    pub stats: SanitizeStats,
}

/// Tokenizes, sanitizes and detokenizes every record. The result depends
/// only on the inputs and `master_seed`, never on thread count.
pub fn sanitize_corpus(
    corpus: &Corpus,
    vocab: &Vocabulary,
    model: &ProbabilityModel,
    mode: TokenizerMode,
    master_seed: u64,
) -> SanitizedCorpus {
    let start = Instant::now();
    let per_doc = par::map_slice(&corpus.records, |record| {
        let tokens = tokenize(corpus.text(record), mode);
        let slots = encode(&tokens, vocab);
        let known: Vec<TokenId> = slots
            .iter()
            .filter_map(|s| match s {
                Slot::Known(id) => Some(*id),
                Slot::Oov(_) => None,
            })
            .collect();
        let doc = Document::new(known, record.id);
        let sanitized = model.sanitize_document(&doc, master_seed);
        let mut drawn = sanitized.tokens.into_iter();
        let mut out = Vec::with_capacity(slots.len());
        let (mut oov, mut same) = (0u64, 0u64);
        for slot in &slots {
            match slot {
                Slot::Known(x) => {
                    let y = drawn.next().expect("one draw per known token");
                    same += u64::from(y == *x);
                    out.push(vocab.token(y).as_str().to_owned());
                }
                Slot::Oov(t) => {
                    oov += 1;
                    out.push(t.as_str().to_owned());
                }
            }
        }
        (out, oov, same)
    });

    let mut stats = SanitizeStats {
        documents: corpus.len() as u64,
        ..Default::default()
    };
    let mut texts = Vec::with_capacity(per_doc.len());
    let mut tokens = Vec::with_capacity(per_doc.len());
    for (out, oov, same) in per_doc {
        stats.tokens += out.len() as u64;
        stats.oov_tokens += oov;
        stats.self_substitutions += same;
        texts.push(out.join(" "));
        tokens.push(out);
    }
    stats.sanitize_seconds = start.elapsed().as_secs_f64();
    SanitizedCorpus {
        texts,
        tokens,
        stats,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::EmbeddingMatrix;
    use crate::mechanism::{BuildOptions, MechanismConfig};
    use std::sync::Arc;

    #[test]
    fn tsv_round_trip_preserves_labels() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.tsv");
        std::fs::write(&path, "sentence\tlabel\nhello world\t1\nbad movie\t0\n").unwrap();
        let corpus = read_corpus(
            &path,
            CorpusFormat::Tsv {
                text_column: 0,
                has_header: true,
            },
        )
        .unwrap();
        assert_eq!(corpus.len(), 2);
        assert_eq!(corpus.text(&corpus.records[1]), "bad movie");
        let mut out = Vec::new();
        corpus
            .write_with_texts(&["x y".into(), "z".into()], &mut out)
            .unwrap();
        assert_eq!(
            String::from_utf8(out).unwrap(),
            "sentence\tlabel\nx y\t1\nz\t0\n"
        );
    }

    #[test]
    fn tsv_missing_column_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.tsv");
        std::fs::write(&path, "a\t1\nb\n").unwrap();
        let err = read_corpus(
            &path,
            CorpusFormat::Tsv {
                text_column: 1,
                has_header: false,
            },
        );
        assert!(matches!(err, Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn oov_tokens_pass_through_and_are_counted() {
        let vocab = Vocabulary::from_tokens(["a", "b"].map(|w| Token::new(w).unwrap()));
        let emb = Arc::new(EmbeddingMatrix::from_rows(1, vec![0.0, 1.0]).unwrap());
        let model = ProbabilityModel::build(
            &vocab,
            emb,
            None,
            &MechanismConfig::santext(1e6, 0).unwrap(),
            BuildOptions::default(),
        )
        .unwrap();
        let corpus = Corpus::from_lines(["a zz b", "", "qq"]);
        let out = sanitize_corpus(&corpus, &vocab, &model, TokenizerMode::Pretokenized, 3);
        assert_eq!(out.texts, vec!["a zz b", "", "qq"]);
        assert_eq!(out.stats.oov_tokens, 2);
        assert_eq!(out.stats.tokens, 4);
        assert_eq!(out.stats.self_substitutions, 2);
    }
}
