//! Training-free sparse retrieval over the token space.
//!
//! Each document keeps only its top-K aligned tokens, weighted by their logits
//! `w_t = e_t · h_d` (negative weights are kept). A query is represented by its
//! literal tokens plus its top-M aligned tokens, and
//!
//! ```text
//! similarity(q, d) = Σ_{t ∈ T̃_q ∩ T̂_d^K} w_t
//! ```
//!
//! Only document-side weights enter the sum; query tokens contribute
//! membership. Documents whose top-K set misses the expanded query entirely are
//! not scored at all (an empty sum is not a zero score).
//!
//! # Index file layout
//!
//! All integers little-endian.
//!
//! ```text
//! magic        b"SPX1"
//! k            u32
//! vocab (L)    u32
//! doc_count    u32
//! dim (d)      u32
//! checksum     [u8; 32]    SHA-256 of the EMB1 bytes of E_g
//! doc ids      doc_count × (len: u32, utf-8 bytes), ascending byte order
//! counts       L × u32     postings per token
//! postings     Σcounts × (doc index: u32, weight: f32), grouped by token
//!              ascending, each group sorted by doc index
//! ```

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::Serialize;

use crate::alignment::{score_tokens, top_k};
use crate::error::{Error, Result};
use crate::io::{EmbeddingMatrix, TokenizedCorpus};

pub const INDEX_MAGIC: &[u8; 4] = b"SPX1";

/// Default top-K for document vectors.
pub const DEFAULT_DOC_K: usize = 1000;
/// Default top-M for query expansion.
pub const DEFAULT_QUERY_M: usize = 50;

fn check_k(k: usize, vocab: usize, name: &str) -> Result<()> {
    if k > vocab {
        return Err(Error::InvalidArgument(format!(
            "{name} = {k} exceeds vocabulary size L = {vocab}"
        )));
    }
    Ok(())
}

/// Top-K aligned tokens of a document with their logits, sorted by token id.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseDocVector {
    pub doc_id: String,
    pub entries: Vec<(u32, f32)>,
}

impl SparseDocVector {
    pub fn weight(&self, token_id: u32) -> Option<f32> {
        self.entries
            .binary_search_by_key(&token_id, |&(t, _)| t)
            .ok()
            .map(|i| self.entries[i].1)
    }
}

pub fn build_sparse_doc(
    doc_id: &str,
    h: &[f32],
    token_embeddings: &EmbeddingMatrix,
    k: usize,
) -> Result<SparseDocVector> {
    check_k(k, token_embeddings.rows(), "K")?;
    let scores = score_tokens(h, token_embeddings)?;
    let mut entries: Vec<(u32, f32)> = top_k(&scores, k)
        .into_iter()
        .map(|t| (t, scores[t as usize]))
        .collect();
    entries.sort_unstable_by_key(|&(t, _)| t);
    Ok(SparseDocVector {
        doc_id: doc_id.to_owned(),
        entries,
    })
}

/// Inverted index over sparse document vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseIndex {
    k: usize,
    vocab: usize,
    dim: usize,
    token_checksum: [u8; 32],
    doc_ids: Vec<String>,
    /// `offsets[t]..offsets[t + 1]` indexes the postings of token `t`.
    offsets: Vec<usize>,
    postings: Vec<(u32, f32)>,
}

pub fn build_index(
    corpus: &TokenizedCorpus,
    embeddings: &EmbeddingMatrix,
    token_embeddings: &EmbeddingMatrix,
    k: usize,
) -> Result<SparseIndex> {
    if embeddings.rows() != corpus.len() {
        return Err(Error::CountMismatch {
            what: "document embedding",
            expected: corpus.len(),
            actual: embeddings.rows(),
        });
    }
    if k == 0 {
        return Err(Error::InvalidArgument("K must be at least 1".into()));
    }
    check_k(k, token_embeddings.rows(), "K")?;
    if embeddings.dim() != token_embeddings.dim() {
        return Err(Error::DimensionMismatch {
            expected: token_embeddings.dim(),
            actual: embeddings.dim(),
        });
    }
    let mut vectors = corpus
        .docs()
        .par_iter()
        .enumerate()
        .map(|(i, doc)| build_sparse_doc(&doc.doc_id, embeddings.row(i), token_embeddings, k))
        .collect::<Result<Vec<_>>>()?;
    vectors.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));
    if let Some(w) = vectors.windows(2).find(|w| w[0].doc_id == w[1].doc_id) {
        return Err(Error::Duplicate {
            what: "document id",
            key: w[0].doc_id.clone(),
        });
    }
    SparseIndex::from_vectors(vectors, token_embeddings, k)
}

impl SparseIndex {
    /// Assembles an index from document vectors already sorted by doc id.
    fn from_vectors(
        vectors: Vec<SparseDocVector>,
        token_embeddings: &EmbeddingMatrix,
        k: usize,
    ) -> Result<Self> {
        if vectors.len() > u32::MAX as usize {
            return Err(Error::InvalidArgument("too many documents".into()));
        }
        let vocab = token_embeddings.rows();
        let mut counts = vec![0usize; vocab];
        for v in &vectors {
            for &(t, _) in &v.entries {
                counts[t as usize] += 1;
            }
        }
        let mut offsets = Vec::with_capacity(vocab + 1);
        offsets.push(0);
        for c in &counts {
            offsets.push(offsets.last().unwrap() + c);
        }
        let mut cursor = offsets[..vocab].to_vec();
        let mut postings = vec![(0u32, 0.0f32); *offsets.last().unwrap()];
        // docs are visited in ascending order, so each posting list ends up sorted
        for (doc, v) in vectors.iter().enumerate() {
            for &(t, w) in &v.entries {
                postings[cursor[t as usize]] = (doc as u32, w);
                cursor[t as usize] += 1;
            }
        }
        Ok(Self {
            k,
            vocab,
            dim: token_embeddings.dim(),
            token_checksum: token_embeddings.checksum(),
            doc_ids: vectors.into_iter().map(|v| v.doc_id).collect(),
            offsets,
            postings,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn token_checksum(&self) -> &[u8; 32] {
        &self.token_checksum
    }

    /// Document ids in index order (ascending).
    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn num_docs(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn num_postings(&self) -> usize {
        self.postings.len()
    }

    /// `(doc index, weight)` pairs for `token_id`, sorted by doc index.
    pub fn postings(&self, token_id: u32) -> &[(u32, f32)] {
        let t = token_id as usize;
        if t >= self.vocab {
            return &[];
        }
        &self.postings[self.offsets[t]..self.offsets[t + 1]]
    }

    /// Reassembles the stored vector of one document.
    pub fn doc_vector(&self, doc_index: usize) -> SparseDocVector {
        let mut entries = Vec::with_capacity(self.k);
        for t in 0..self.vocab {
            let list = &self.postings[self.offsets[t]..self.offsets[t + 1]];
            if let Ok(i) = list.binary_search_by_key(&(doc_index as u32), |&(d, _)| d) {
                entries.push((t as u32, list[i].1));
            }
        }
        SparseDocVector {
            doc_id: self.doc_ids[doc_index].clone(),
            entries,
        }
    }

    /// Checks that `token_embeddings` is the matrix this index was built with.
    pub fn check_token_embeddings(&self, token_embeddings: &EmbeddingMatrix) -> Result<()> {
        if token_embeddings.rows() != self.vocab || token_embeddings.dim() != self.dim {
            return Err(Error::Validation(format!(
                "token embeddings are {}x{}, index was built with {}x{}",
                token_embeddings.rows(),
                token_embeddings.dim(),
                self.vocab,
                self.dim
            )));
        }
        if token_embeddings.checksum() != self.token_checksum {
            return Err(Error::Validation(
                "token embeddings differ from the ones the index was built with".into(),
            ));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(56 + self.vocab * 4 + self.postings.len() * 8);
        out.extend_from_slice(INDEX_MAGIC);
        for v in [self.k, self.vocab, self.doc_ids.len(), self.dim] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        out.extend_from_slice(&self.token_checksum);
        for id in &self.doc_ids {
            out.extend_from_slice(&(id.len() as u32).to_le_bytes());
            out.extend_from_slice(id.as_bytes());
        }
        for w in self.offsets.windows(2) {
            out.extend_from_slice(&((w[1] - w[0]) as u32).to_le_bytes());
        }
        for &(doc, weight) in &self.postings {
            out.extend_from_slice(&doc.to_le_bytes());
            out.extend_from_slice(&weight.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader { bytes, pos: 0 };
        if r.take(4)? != INDEX_MAGIC {
            return Err(Error::Format("bad magic, expected \"SPX1\"".into()));
        }
        let k = r.u32()? as usize;
        let vocab = r.u32()? as usize;
        let doc_count = r.u32()? as usize;
        let dim = r.u32()? as usize;
        let token_checksum: [u8; 32] = r.take(32)?.try_into().unwrap();
        if k == 0 || k > vocab || dim == 0 {
            return Err(Error::Format(format!(
                "invalid header: K = {k}, L = {vocab}, d = {dim}"
            )));
        }

        let mut doc_ids: Vec<String> = Vec::with_capacity(doc_count.min(bytes.len()));
        for _ in 0..doc_count {
            let len = r.u32()? as usize;
            let id = std::str::from_utf8(r.take(len)?)
                .map_err(|e| Error::Format(format!("document id is not UTF-8: {e}")))?;
            if let Some(prev) = doc_ids.last() {
                if prev.as_str() >= id {
                    return Err(Error::Format(format!(
                        "document ids not strictly ascending at {id:?}"
                    )));
                }
            }
            doc_ids.push(id.to_owned());
        }

        let mut offsets = Vec::with_capacity(vocab + 1);
        offsets.push(0usize);
        for _ in 0..vocab {
            let c = r.u32()? as usize;
            offsets.push(offsets.last().unwrap() + c);
        }
        let total = *offsets.last().unwrap();
        let expected_total = doc_count * k;
        let remaining = (bytes.len() - r.pos) as u64;
        if total != expected_total || remaining != total as u64 * 8 {
            return Err(Error::LengthMismatch {
                expected: expected_total as u64 * 8,
                actual: remaining,
            });
        }

        let mut postings = Vec::with_capacity(total);
        let mut per_doc = vec![0usize; doc_count];
        for t in 0..vocab {
            let mut prev: Option<u32> = None;
            for _ in offsets[t]..offsets[t + 1] {
                let doc = r.u32()?;
                let weight = f32::from_le_bytes(r.take(4)?.try_into().unwrap());
                if doc as usize >= doc_count || prev.is_some_and(|p| p >= doc) {
                    return Err(Error::Format(format!(
                        "postings of token {t} are not sorted document indices"
                    )));
                }
                if !weight.is_finite() {
                    return Err(Error::Validation(format!(
                        "non-finite weight in postings of token {t}"
                    )));
                }
                prev = Some(doc);
                per_doc[doc as usize] += 1;
                postings.push((doc, weight));
            }
        }
        if let Some(d) = per_doc.iter().position(|&c| c != k) {
            return Err(Error::Format(format!(
                "document {:?} has {} postings, expected K = {k}",
                doc_ids[d], per_doc[d]
            )));
        }
        Ok(Self {
            k,
            vocab,
            dim,
            token_checksum,
            doc_ids,
            offsets,
            postings,
        })
    }
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(Error::LengthMismatch {
                expected: (self.pos + n) as u64,
                actual: self.bytes.len() as u64,
            });
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// A query after expansion: `T̃_q = T_q ∪ T̂_q^M`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExpandedQuery {
    pub query_id: String,
    /// `T_q`, sorted.
    pub literal_tokens: Vec<u32>,
    /// `T̂_q^M` in aligned order.
    pub expansion_tokens: Vec<u32>,
    /// `T̃_q`, sorted.
    pub tokens: Vec<u32>,
}

pub fn expand_query(
    query_id: &str,
    query_tokens: &[u32],
    h_q: &[f32],
    token_embeddings: &EmbeddingMatrix,
    m: usize,
) -> Result<ExpandedQuery> {
    let vocab = token_embeddings.rows();
    check_k(m, vocab, "M")?;
    if let Some(&t) = query_tokens.iter().find(|&&t| t as usize >= vocab) {
        return Err(Error::OutOfVocabulary {
            doc_id: query_id.to_owned(),
            token_id: t as u64,
            vocab_size: vocab,
        });
    }
    let expansion_tokens = if m == 0 {
        Vec::new()
    } else {
        top_k(&score_tokens(h_q, token_embeddings)?, m)
    };
    let literal: BTreeSet<u32> = query_tokens.iter().copied().collect();
    let tokens = literal
        .iter()
        .copied()
        .chain(expansion_tokens.iter().copied())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    Ok(ExpandedQuery {
        query_id: query_id.to_owned(),
        literal_tokens: literal.into_iter().collect(),
        expansion_tokens,
        tokens,
    })
}

/// Expands every query of a tokenized query file; row `i` of
/// `query_embeddings` belongs to query `i`.
pub fn expand_queries(
    queries: &TokenizedCorpus,
    query_embeddings: &EmbeddingMatrix,
    token_embeddings: &EmbeddingMatrix,
    m: usize,
) -> Result<Vec<ExpandedQuery>> {
    if query_embeddings.rows() != queries.len() {
        return Err(Error::CountMismatch {
            what: "query embedding",
            expected: queries.len(),
            actual: query_embeddings.rows(),
        });
    }
    queries
        .docs()
        .par_iter()
        .enumerate()
        .map(|(i, q)| {
            expand_query(
                &q.doc_id,
                &q.token_ids,
                query_embeddings.row(i),
                token_embeddings,
                m,
            )
        })
        .collect()
}

fn desc_score(a: f64, b: f64) -> std::cmp::Ordering {
    b.partial_cmp(&a).unwrap_or(std::cmp::Ordering::Equal)
}

/// Documents ranked for one query: descending score, ascending doc id on ties.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedList {
    pub query_id: String,
    pub entries: Vec<(String, f64)>,
    pub cutoff: Option<usize>,
}

impl RankedList {
    pub fn from_scored(
        query_id: String,
        mut entries: Vec<(String, f64)>,
        cutoff: Option<usize>,
    ) -> Self {
        entries.sort_by(|a, b| desc_score(a.1, b.1).then_with(|| a.0.cmp(&b.0)));
        if let Some(n) = cutoff {
            entries.truncate(n);
        }
        Self {
            query_id,
            entries,
            cutoff,
        }
    }

    pub fn doc_ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(d, _)| d.as_str())
    }
}

/// Sums, per document, the stored weights of the query tokens it contains.
/// Tokens are visited in ascending id order so the summation order is fixed.
fn accumulate(index: &SparseIndex, query: &ExpandedQuery) -> (Vec<(u32, f64)>, usize) {
    let mut scores = vec![0.0f64; index.num_docs()];
    let mut touched = vec![false; index.num_docs()];
    let mut scored_postings = 0;
    for &t in &query.tokens {
        let list = index.postings(t);
        scored_postings += list.len();
        for &(doc, w) in list {
            scores[doc as usize] += w as f64;
            touched[doc as usize] = true;
        }
    }
    let hits = touched
        .iter()
        .enumerate()
        .filter(|(_, &t)| t)
        .map(|(d, _)| (d as u32, scores[d]))
        .collect();
    (hits, scored_postings)
}

pub fn search(index: &SparseIndex, query: &ExpandedQuery, n: usize) -> RankedList {
    let (mut hits, _) = accumulate(index, query);
    // doc indices follow doc-id order, so index order is the id tie-break
    hits.sort_by(|a, b| desc_score(a.1, b.1).then(a.0.cmp(&b.0)));
    hits.truncate(n);
    RankedList {
        query_id: query.query_id.clone(),
        entries: hits
            .into_iter()
            .map(|(d, s)| (index.doc_ids[d as usize].clone(), s))
            .collect(),
        cutoff: Some(n),
    }
}

/// Runs every query independently, preserving input order.
pub fn search_all(index: &SparseIndex, queries: &[ExpandedQuery], n: usize) -> Vec<RankedList> {
    queries.par_iter().map(|q| search(index, q, n)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryCost {
    pub query_id: String,
    pub expanded_tokens: usize,
    /// Postings visited, i.e. additions performed.
    pub scored_postings: usize,
    /// Documents with a non-empty intersection.
    pub scored_docs: usize,
    /// `scored_postings / scored_docs`; never exceeds `expanded_tokens`.
    pub mean_additions_per_pair: f64,
    pub sparse_ops: usize,
    /// `d` multiply-adds for each of the indexed documents.
    pub dense_ops: usize,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostReport {
    pub queries: Vec<QueryCost>,
    pub total_sparse_ops: usize,
    pub total_dense_ops: usize,
    pub ratio: f64,
}

pub fn cost_report(index: &SparseIndex, queries: &[ExpandedQuery]) -> CostReport {
    let dense_ops = index.dim() * index.num_docs();
    let per_query: Vec<QueryCost> = queries
        .iter()
        .map(|q| {
            let (hits, scored_postings) = accumulate(index, q);
            let scored_docs = hits.len();
            QueryCost {
                query_id: q.query_id.clone(),
                expanded_tokens: q.tokens.len(),
                scored_postings,
                scored_docs,
                mean_additions_per_pair: if scored_docs == 0 {
                    0.0
                } else {
                    scored_postings as f64 / scored_docs as f64
                },
                sparse_ops: scored_postings,
                dense_ops,
                ratio: scored_postings as f64 / dense_ops as f64,
            }
        })
        .collect();
    let total_sparse_ops = per_query.iter().map(|q| q.sparse_ops).sum();
    let total_dense_ops = dense_ops * queries.len();
    CostReport {
        ratio: if total_dense_ops == 0 {
            0.0
        } else {
            total_sparse_ops as f64 / total_dense_ops as f64
        },
        queries: per_query,
        total_sparse_ops,
        total_dense_ops,
    }
}
