//! On-disk artifacts exchanged with the exporter and between CLI runs.
//!
//! Layouts:
//!
//! - Embedding matrix (`.emb1`): magic `EMB1`, `rows: u32 LE`, `dim: u32 LE`,
//!   then `rows * dim` IEEE-754 binary32 values, little-endian, row-major.
//! - Token table: UTF-8 lines `<id>\t<token_text>\n`, ids ascending from 0.
//!   The text is everything after the first tab, so it may itself contain tabs.
//! - Tokenized corpus: UTF-8 lines `<doc_id>\t<space-separated token ids>\n`.
//! - Qrels: whitespace-separated `query_id ignored doc_id grade` per line.
//! - Run: `query_id Q0 doc_id rank score run_tag` per line.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::sparse::RankedList;

pub const EMB_MAGIC: &[u8; 4] = b"EMB1";
const EMB_HEADER_LEN: usize = 12;

/// Dense row-major collection of `rows` vectors of length `dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    rows: usize,
    dim: usize,
    data: Vec<f32>,
}

impl EmbeddingMatrix {
    pub fn new(rows: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        if rows == 0 || dim == 0 {
            return Err(Error::Validation(format!(
                "embedding matrix must be non-empty, got {rows}x{dim}"
            )));
        }
        if rows > u32::MAX as usize || dim > u32::MAX as usize {
            return Err(Error::Validation(format!(
                "embedding matrix shape {rows}x{dim} exceeds the u32 header range"
            )));
        }
        let expected = rows.checked_mul(dim).ok_or_else(|| {
            Error::Validation(format!("embedding matrix shape {rows}x{dim} overflows"))
        })?;
        if data.len() != expected {
            return Err(Error::CountMismatch {
                what: "matrix element",
                expected,
                actual: data.len(),
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "non-finite value {} at row {}, column {}",
                data[pos],
                pos / dim,
                pos % dim
            )));
        }
        Ok(Self { rows, dim, data })
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R]) -> Result<Self> {
        let dim = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            let r = r.as_ref();
            if r.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), dim, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter_rows(&self) -> impl ExactSizeIterator<Item = &[f32]> + '_ {
        self.data.chunks_exact(self.dim)
    }

    /// Rows `start..end` as a new matrix.
    pub fn slice_rows(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.rows {
            return Err(Error::InvalidArgument(format!(
                "row range {start}..{end} invalid for {} rows",
                self.rows
            )));
        }
        Self::new(
            end - start,
            self.dim,
            self.data[start * self.dim..end * self.dim].to_vec(),
        )
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(EMB_HEADER_LEN + self.data.len() * 4);
        out.extend_from_slice(EMB_MAGIC);
        out.extend_from_slice(&(self.rows as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < EMB_HEADER_LEN {
            return Err(Error::Format(format!(
                "file too short for EMB1 header ({} bytes)",
                bytes.len()
            )));
        }
        if &bytes[..4] != EMB_MAGIC {
            return Err(Error::Format(format!(
                "bad magic {:?}, expected \"EMB1\"",
                String::from_utf8_lossy(&bytes[..4])
            )));
        }
        let rows = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let dim = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let payload = &bytes[EMB_HEADER_LEN..];
        let expected = rows as u64 * dim as u64 * 4;
        if payload.len() as u64 != expected {
            return Err(Error::LengthMismatch {
                expected,
                actual: payload.len() as u64,
            });
        }
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::new(rows, dim, data)
    }

    /// SHA-256 of the serialized matrix.
    pub fn checksum(&self) -> [u8; 32] {
        use sha2::{Digest, Sha256};
        Sha256::digest(self.to_bytes()).into()
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn read_embedding_matrix(path: impl AsRef<Path>) -> Result<EmbeddingMatrix> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    EmbeddingMatrix::from_bytes(&bytes)
}

pub fn write_embedding_matrix(m: &EmbeddingMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, m.to_bytes()).map_err(|e| Error::io(path, e))
}

/// Splits on `\n` only; a trailing newline does not produce an extra record.
/// `str::lines` is avoided because it also eats `\r`, which is legal token text.
fn records(text: &str) -> impl Iterator<Item = (usize, &str)> {
    let body = text.strip_suffix('\n').unwrap_or(text);
    (!text.is_empty())
        .then(|| body.split('\n'))
        .into_iter()
        .flatten()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
}

fn read_text(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    String::from_utf8(bytes).map_err(|e| Error::Format(format!("invalid UTF-8: {e}")))
}

/// Bijection between token ids `0..L` and token strings.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenTable {
    tokens: Vec<String>,
}

impl TokenTable {
    pub fn new(tokens: Vec<String>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::Validation("token table is empty".into()));
        }
        if let Some(id) = tokens.iter().position(|t| t.contains('\n')) {
            return Err(Error::Validation(format!(
                "token {id} contains the record separator"
            )));
        }
        Ok(Self { tokens })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn get(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &str)> {
        self.tokens.iter().map(String::as_str).enumerate()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut tokens = Vec::new();
        for (line, rec) in records(text) {
            let (id, tok) = rec.split_once('\t').ok_or_else(|| Error::Parse {
                line,
                message: "expected \"<id>\\t<token>\"".into(),
            })?;
            let id: usize = id.parse().map_err(|_| Error::Parse {
                line,
                message: format!("invalid token id {id:?}"),
            })?;
            let expected = tokens.len();
            if id < expected {
                return Err(Error::Duplicate {
                    what: "token id",
                    key: id.to_string(),
                });
            }
            if id > expected {
                return Err(Error::IdGap {
                    expected,
                    found: id,
                });
            }
            tokens.push(tok.to_owned());
        }
        Self::new(tokens)
    }

    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        for (id, tok) in self.iter() {
            writeln!(w, "{id}\t{tok}")?;
        }
        Ok(())
    }
}

pub fn read_token_table(path: impl AsRef<Path>) -> Result<TokenTable> {
    TokenTable::parse(&read_text(path.as_ref())?)
}

pub fn write_token_table(table: &TokenTable, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    table.write_to(&mut buf).map_err(|e| Error::io(path, e))?;
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// A tokenized document.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub doc_id: String,
    pub token_ids: Vec<u32>,
}

/// Per-document token-id sequences, in file order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizedCorpus {
    docs: Vec<Document>,
}

fn check_doc_id(doc_id: &str) -> Result<()> {
    if doc_id.is_empty() || doc_id.chars().any(char::is_whitespace) {
        return Err(Error::Validation(format!(
            "document id {doc_id:?} must be non-empty and free of whitespace"
        )));
    }
    Ok(())
}

impl TokenizedCorpus {
    /// Validates ids against a vocabulary of `vocab_size` tokens.
    pub fn new(docs: Vec<Document>, vocab_size: usize) -> Result<Self> {
        let mut seen = HashSet::with_capacity(docs.len());
        for doc in &docs {
            check_doc_id(&doc.doc_id)?;
            if !seen.insert(doc.doc_id.as_str()) {
                return Err(Error::Duplicate {
                    what: "document id",
                    key: doc.doc_id.clone(),
                });
            }
            if doc.token_ids.is_empty() {
                return Err(Error::Validation(format!(
                    "document {} has no tokens",
                    doc.doc_id
                )));
            }
            if let Some(&t) = doc.token_ids.iter().find(|&&t| t as usize >= vocab_size) {
                return Err(Error::OutOfVocabulary {
                    doc_id: doc.doc_id.clone(),
                    token_id: t as u64,
                    vocab_size,
                });
            }
        }
        Ok(Self { docs })
    }

    pub fn docs(&self) -> &[Document] {
        &self.docs
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn parse(text: &str, vocab_size: usize) -> Result<Self> {
        let mut docs = Vec::new();
        for (line, rec) in records(text) {
            let (doc_id, ids) = rec.split_once('\t').ok_or_else(|| Error::Parse {
                line,
                message: "expected \"<doc_id>\\t<token ids>\"".into(),
            })?;
            let token_ids = ids
                .split_ascii_whitespace()
                .map(|t| {
                    t.parse::<u64>().map_err(|_| Error::Parse {
                        line,
                        message: format!("invalid token id {t:?}"),
                    })
                })
                .map(|r| {
                    r.and_then(|t| {
                        u32::try_from(t).map_err(|_| Error::OutOfVocabulary {
                            doc_id: doc_id.to_owned(),
                            token_id: t,
                            vocab_size,
                        })
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            docs.push(Document {
                doc_id: doc_id.to_owned(),
                token_ids,
            });
        }
        Self::new(docs, vocab_size)
    }

    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        for doc in &self.docs {
            write!(w, "{}\t", doc.doc_id)?;
            for (i, t) in doc.token_ids.iter().enumerate() {
                if i > 0 {
                    w.write_all(b" ")?;
                }
                write!(w, "{t}")?;
            }
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

pub fn read_tokenized_corpus(path: impl AsRef<Path>, vocab_size: usize) -> Result<TokenizedCorpus> {
    TokenizedCorpus::parse(&read_text(path.as_ref())?, vocab_size)
}

pub fn write_tokenized_corpus(corpus: &TokenizedCorpus, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    corpus.write_to(&mut buf).map_err(|e| Error::io(path, e))?;
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Graded relevance judgments keyed by query id, then document id.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RelevanceJudgments {
    by_query: BTreeMap<String, BTreeMap<String, u32>>,
}

impl RelevanceJudgments {
    pub fn insert(&mut self, query_id: &str, doc_id: &str, grade: u32) -> Result<()> {
        let docs = self.by_query.entry(query_id.to_owned()).or_default();
        if docs.insert(doc_id.to_owned(), grade).is_some() {
            return Err(Error::Duplicate {
                what: "judgment",
                key: format!("({query_id}, {doc_id})"),
            });
        }
        Ok(())
    }

    pub fn grade(&self, query_id: &str, doc_id: &str) -> u32 {
        self.by_query
            .get(query_id)
            .and_then(|d| d.get(doc_id))
            .copied()
            .unwrap_or(0)
    }

    pub fn for_query(&self, query_id: &str) -> Option<&BTreeMap<String, u32>> {
        self.by_query.get(query_id)
    }

    pub fn queries(&self) -> impl Iterator<Item = &str> {
        self.by_query.keys().map(String::as_str)
    }

    /// Number of (query, doc) entries.
    pub fn len(&self) -> usize {
        self.by_query.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut qrels = Self::default();
        for (i, line) in text.lines().enumerate() {
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.is_empty() {
                continue;
            }
            let [qid, _, doc_id, grade] = fields[..] else {
                return Err(Error::Parse {
                    line: i + 1,
                    message: format!("expected 4 fields, found {}", fields.len()),
                });
            };
            let grade: u32 = grade.parse().map_err(|_| Error::Parse {
                line: i + 1,
                message: format!("relevance grade {grade:?} is not a non-negative integer"),
            })?;
            qrels.insert(qid, doc_id, grade)?;
        }
        Ok(qrels)
    }

    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        for (qid, docs) in &self.by_query {
            for (doc_id, grade) in docs {
                writeln!(w, "{qid} 0 {doc_id} {grade}")?;
            }
        }
        Ok(())
    }
}

pub fn read_qrels(path: impl AsRef<Path>) -> Result<RelevanceJudgments> {
    RelevanceJudgments::parse(&read_text(path.as_ref())?)
}

/// Writes ranked lists in TREC run format. Ranks are 1-based.
pub fn write_run(lists: &[RankedList], run_tag: &str, w: &mut impl Write) -> std::io::Result<()> {
    for list in lists {
        for (rank, (doc_id, score)) in list.entries.iter().enumerate() {
            writeln!(
                w,
                "{} Q0 {} {} {} {}",
                list.query_id,
                doc_id,
                rank + 1,
                score,
                run_tag
            )?;
        }
    }
    Ok(())
}

/// Parses a TREC run. Each query's entries are re-sorted by descending score
/// with ascending doc id on ties; the rank column is not trusted.
pub fn parse_run(text: &str) -> Result<Vec<RankedList>> {
    let mut by_query: BTreeMap<String, Vec<(String, f64)>> = BTreeMap::new();
    let mut seen = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        let [qid, _, doc_id, _rank, score, _tag] = fields[..] else {
            return Err(Error::Parse {
                line: i + 1,
                message: format!("expected 6 fields, found {}", fields.len()),
            });
        };
        let score: f64 = score
            .parse()
            .ok()
            .filter(|s: &f64| s.is_finite())
            .ok_or_else(|| Error::Parse {
                line: i + 1,
                message: format!("invalid score {score:?}"),
            })?;
        if !seen.insert((qid.to_owned(), doc_id.to_owned())) {
            return Err(Error::Duplicate {
                what: "run entry",
                key: format!("({qid}, {doc_id})"),
            });
        }
        by_query
            .entry(qid.to_owned())
            .or_default()
            .push((doc_id.to_owned(), score));
    }
    Ok(by_query
        .into_iter()
        .map(|(query_id, entries)| RankedList::from_scored(query_id, entries, None))
        .collect())
}

pub fn read_run(path: impl AsRef<Path>) -> Result<Vec<RankedList>> {
    parse_run(&read_text(path.as_ref())?)
}
