//! Alignment between text embeddings and the tokens of their own text.
//!
//! A text embedding `h` is scored against every row `e_t` of the unembedding
//! matrix with a raw dot product `e_t · h` (no softmax, no normalisation).
//! Sorting the vocabulary by that score gives the aligned tokens `T̂`; the
//! deduplicated tokens of the text itself form the literal set `T_s`.
//!
//! Corpus-level metrics:
//!
//! - Hit@K: fraction of texts whose top-K aligned tokens hit `T_s` at all.
//! - LAR: mean over texts of `|T̂^{K_i} ∩ T_s| / K_i` with `K_i = |T_s|`.
//! - GAR: `|∪_i (T̂^{K_i} ∩ T_{s_i})| / |∪_i T_{s_i}|`, unions taken over the
//!   whole corpus before dividing.
//!
//! Ties in score are broken by ascending token id everywhere.

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{EmbeddingMatrix, TokenTable, TokenizedCorpus};

/// Dot product with `f64` accumulation in index order.
pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    a.iter()
        .zip(b)
        .fold(0.0f64, |acc, (&x, &y)| acc + x as f64 * y as f64) as f32
}

/// `score[t] = e_t · h` for every row of `token_embeddings`.
pub fn score_tokens(h: &[f32], token_embeddings: &EmbeddingMatrix) -> Result<Vec<f32>> {
    if h.len() != token_embeddings.dim() {
        return Err(Error::DimensionMismatch {
            expected: token_embeddings.dim(),
            actual: h.len(),
        });
    }
    Ok(token_embeddings.iter_rows().map(|e| dot(e, h)).collect())
}

/// Descending score, then ascending token id. Scores are assumed finite.
fn aligned_order<T: PartialOrd>(scores: &[T], a: u32, b: u32) -> Ordering {
    scores[b as usize]
        .partial_cmp(&scores[a as usize])
        .unwrap_or(Ordering::Equal)
        .then(a.cmp(&b))
}

/// Ids of the `k` highest-scoring tokens in aligned order. `k` is clamped to
/// the vocabulary size.
pub fn top_k<T: PartialOrd>(scores: &[T], k: usize) -> Vec<u32> {
    let k = k.min(scores.len());
    let mut ids: Vec<u32> = (0..scores.len() as u32).collect();
    if k == 0 {
        return Vec::new();
    }
    if k < ids.len() {
        ids.select_nth_unstable_by(k - 1, |&a, &b| aligned_order(scores, a, b));
        ids.truncate(k);
    }
    ids.sort_unstable_by(|&a, &b| aligned_order(scores, a, b));
    ids
}

/// The full vocabulary sorted by alignment score.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedTokenRanking {
    pub token_ids: Vec<u32>,
    pub scores: Vec<f32>,
}

impl AlignedTokenRanking {
    /// `T̂^k`: the first `k` token ids.
    pub fn top(&self, k: usize) -> &[u32] {
        &self.token_ids[..k.min(self.token_ids.len())]
    }

    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }
}

pub fn rank_aligned(scores: &[f32]) -> AlignedTokenRanking {
    let token_ids = top_k(scores, scores.len());
    let scores = token_ids.iter().map(|&t| scores[t as usize]).collect();
    AlignedTokenRanking { token_ids, scores }
}

/// Deduplicated token ids of a text, kept sorted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LiteralTokenSet {
    ids: Vec<u32>,
}

impl LiteralTokenSet {
    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    /// `K_i`.
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn contains(&self, token_id: u32) -> bool {
        self.ids.binary_search(&token_id).is_ok()
    }

    /// Number of `candidates` that belong to the set.
    pub fn overlap(&self, candidates: &[u32]) -> usize {
        candidates.iter().filter(|&&t| self.contains(t)).count()
    }
}

pub fn literal_token_set(token_ids: &[u32]) -> Result<LiteralTokenSet> {
    if token_ids.is_empty() {
        return Err(Error::Validation(
            "literal token set of an empty document".into(),
        ));
    }
    let mut ids = token_ids.to_vec();
    ids.sort_unstable();
    ids.dedup();
    Ok(LiteralTokenSet { ids })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TokenLabel {
    Literal,
    NonLiteral,
}

pub fn classify_token(token_id: u32, literal: &LiteralTokenSet) -> TokenLabel {
    if literal.contains(token_id) {
        TokenLabel::Literal
    } else {
        TokenLabel::NonLiteral
    }
}

/// Ranking prefix and literal set of one document.
#[derive(Debug, Clone)]
pub struct DocAlignment {
    pub literal: LiteralTokenSet,
    /// Top `max(depth, K_i)` aligned token ids (clamped to `L`).
    pub top_ids: Vec<u32>,
    pub top_scores: Vec<f32>,
}

impl DocAlignment {
    pub fn hit(&self, k: usize) -> bool {
        assert!(
            k <= self.top_ids.len(),
            "ranking prefix too short for k = {k}"
        );
        self.literal.overlap(&self.top_ids[..k]) > 0
    }

    /// `T̂^{K_i} ∩ T_s`, in aligned order.
    pub fn local_intersection(&self) -> impl Iterator<Item = u32> + '_ {
        self.top_ids[..self.literal.len()]
            .iter()
            .copied()
            .filter(|&t| self.literal.contains(t))
    }

    pub fn local_rate(&self) -> f64 {
        self.local_intersection().count() as f64 / self.literal.len() as f64
    }
}

/// Per-document alignment of a whole corpus, ready for metric aggregation.
#[derive(Debug, Clone)]
pub struct AlignmentAnalysis {
    pub docs: Vec<DocAlignment>,
    depth: usize,
}

fn check_inputs(
    corpus: &TokenizedCorpus,
    embeddings: &EmbeddingMatrix,
    token_embeddings: &EmbeddingMatrix,
) -> Result<()> {
    if corpus.is_empty() {
        return Err(Error::Validation("corpus has no documents".into()));
    }
    if embeddings.rows() != corpus.len() {
        return Err(Error::CountMismatch {
            what: "document embedding",
            expected: corpus.len(),
            actual: embeddings.rows(),
        });
    }
    if embeddings.dim() != token_embeddings.dim() {
        return Err(Error::DimensionMismatch {
            expected: token_embeddings.dim(),
            actual: embeddings.dim(),
        });
    }
    let vocab = token_embeddings.rows();
    for doc in corpus.docs() {
        if let Some(&t) = doc.token_ids.iter().find(|&&t| t as usize >= vocab) {
            return Err(Error::OutOfVocabulary {
                doc_id: doc.doc_id.clone(),
                token_id: t as u64,
                vocab_size: vocab,
            });
        }
    }
    Ok(())
}

impl AlignmentAnalysis {
    /// Scores every document against the vocabulary, retaining enough of each
    /// ranking to answer Hit@k for any `k <= depth` as well as LAR and GAR.
    pub fn compute(
        corpus: &TokenizedCorpus,
        embeddings: &EmbeddingMatrix,
        token_embeddings: &EmbeddingMatrix,
        depth: usize,
    ) -> Result<Self> {
        check_inputs(corpus, embeddings, token_embeddings)?;
        let vocab = token_embeddings.rows();
        if depth > vocab {
            return Err(Error::InvalidArgument(format!(
                "K = {depth} exceeds vocabulary size L = {vocab}"
            )));
        }
        let docs = corpus
            .docs()
            .par_iter()
            .enumerate()
            .map(|(i, doc)| {
                let literal = literal_token_set(&doc.token_ids)?;
                let scores = score_tokens(embeddings.row(i), token_embeddings)?;
                let top_ids = top_k(&scores, depth.max(literal.len()));
                let top_scores = top_ids.iter().map(|&t| scores[t as usize]).collect();
                Ok(DocAlignment {
                    literal,
                    top_ids,
                    top_scores,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { docs, depth })
    }

    pub fn hit_at_k(&self, k: usize) -> Result<f64> {
        if k == 0 || k > self.depth {
            return Err(Error::InvalidArgument(format!(
                "Hit@K needs 1 <= K <= {}, got {k}",
                self.depth
            )));
        }
        let hits = self.docs.iter().filter(|d| d.hit(k)).count();
        Ok(hits as f64 / self.docs.len() as f64)
    }

    pub fn lar(&self) -> f64 {
        let total: f64 = self.docs.iter().map(DocAlignment::local_rate).sum();
        total / self.docs.len() as f64
    }

    pub fn gar(&self) -> f64 {
        let mut aligned = BTreeSet::new();
        let mut literal = BTreeSet::new();
        for d in &self.docs {
            aligned.extend(d.local_intersection());
            literal.extend(d.literal.ids().iter().copied());
        }
        aligned.len() as f64 / literal.len() as f64
    }
}

pub fn hit_at_k(
    corpus: &TokenizedCorpus,
    embeddings: &EmbeddingMatrix,
    token_embeddings: &EmbeddingMatrix,
    k: usize,
) -> Result<f64> {
    if k == 0 {
        return Err(Error::InvalidArgument("K must be at least 1".into()));
    }
    AlignmentAnalysis::compute(corpus, embeddings, token_embeddings, k)?.hit_at_k(k)
}

pub fn lar(
    corpus: &TokenizedCorpus,
    embeddings: &EmbeddingMatrix,
    token_embeddings: &EmbeddingMatrix,
) -> Result<f64> {
    Ok(AlignmentAnalysis::compute(corpus, embeddings, token_embeddings, 0)?.lar())
}

pub fn gar(
    corpus: &TokenizedCorpus,
    embeddings: &EmbeddingMatrix,
    token_embeddings: &EmbeddingMatrix,
) -> Result<f64> {
    Ok(AlignmentAnalysis::compute(corpus, embeddings, token_embeddings, 0)?.gar())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignedToken {
    pub id: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    pub score: f32,
    pub label: TokenLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocReport {
    pub doc_id: String,
    /// `K_i = |T_s|`.
    pub literal_tokens: usize,
    pub hit: bool,
    pub local_rate: f64,
    /// Top `max(K, K_i)` aligned tokens.
    pub tokens: Vec<AlignedToken>,
}

/// Run parameters recorded alongside the metrics.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportParams {
    pub k: usize,
    /// Pooling applied inside the toolkit, or `None` for precomputed embeddings.
    pub pooling: Option<String>,
    #[serde(default)]
    pub inputs: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryReport {
    pub docs: usize,
    pub hit_at_k: f64,
    pub lar: f64,
    pub gar: f64,
    pub params: ReportParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentReport {
    pub docs: Vec<DocReport>,
    pub summary: SummaryReport,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum ReportRecord {
    Doc(DocReport),
    Summary(SummaryReport),
}

pub fn alignment_report(
    corpus: &TokenizedCorpus,
    embeddings: &EmbeddingMatrix,
    token_embeddings: &EmbeddingMatrix,
    token_table: Option<&TokenTable>,
    params: ReportParams,
) -> Result<AlignmentReport> {
    let k = params.k;
    if k == 0 {
        return Err(Error::InvalidArgument("K must be at least 1".into()));
    }
    if let Some(table) = token_table {
        if table.len() != token_embeddings.rows() {
            return Err(Error::CountMismatch {
                what: "token table entry",
                expected: token_embeddings.rows(),
                actual: table.len(),
            });
        }
    }
    let analysis = AlignmentAnalysis::compute(corpus, embeddings, token_embeddings, k)?;
    let docs = corpus
        .docs()
        .iter()
        .zip(&analysis.docs)
        .map(|(doc, a)| DocReport {
            doc_id: doc.doc_id.clone(),
            literal_tokens: a.literal.len(),
            hit: a.hit(k),
            local_rate: a.local_rate(),
            tokens: a
                .top_ids
                .iter()
                .zip(&a.top_scores)
                .map(|(&id, &score)| AlignedToken {
                    id,
                    text: token_table
                        .and_then(|t| t.get(id as usize))
                        .map(str::to_owned),
                    score,
                    label: classify_token(id, &a.literal),
                })
                .collect(),
        })
        .collect();
    Ok(AlignmentReport {
        docs,
        summary: SummaryReport {
            docs: analysis.docs.len(),
            hit_at_k: analysis.hit_at_k(k)?,
            lar: analysis.lar(),
            gar: analysis.gar(),
            params,
        },
    })
}

impl AlignmentReport {
    /// One JSON object per line: every document, then the summary.
    pub fn write_jsonl(&self, w: &mut impl Write) -> std::io::Result<()> {
        for doc in &self.docs {
            serde_json::to_writer(&mut *w, &ReportRecord::Doc(doc.clone()))?;
            w.write_all(b"\n")?;
        }
        serde_json::to_writer(&mut *w, &ReportRecord::Summary(self.summary.clone()))?;
        w.write_all(b"\n")
    }

    pub fn read_jsonl(r: impl BufRead) -> Result<Self> {
        let mut docs = Vec::new();
        let mut summary = None;
        for (i, line) in r.lines().enumerate() {
            let line = line.map_err(|e| Error::io("<report>", e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: ReportRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            match rec {
                ReportRecord::Doc(d) => docs.push(d),
                ReportRecord::Summary(s) => summary = Some(s),
            }
        }
        let summary =
            summary.ok_or_else(|| Error::Format("report has no summary record".into()))?;
        Ok(Self { docs, summary })
    }
}
