//! nDCG@k evaluation of ranked runs against graded judgments.
//!
//! Linear gain with a `log2(i + 1)` discount:
//! `DCG@k = Σ_{i=1..k} rel_i / log2(i + 1)`, normalised by the DCG of the ideal
//! ordering of the query's judged grades. Queries without any relevant
//! judgment (IDCG = 0) and judged queries absent from the run are reported as
//! skipped and left out of the macro average.

use serde::Serialize;

use crate::io::RelevanceJudgments;
use crate::sparse::RankedList;

fn discount(rank: usize) -> f64 {
    (rank as f64 + 1.0).log2()
}

fn dcg(gains: impl Iterator<Item = u32>, k: usize) -> f64 {
    gains
        .take(k)
        .enumerate()
        .map(|(i, g)| g as f64 / discount(i + 1))
        .sum()
}

/// Ideal DCG@k of a query, 0 when it has no relevant judgment.
pub fn ideal_dcg(judgments: &RelevanceJudgments, query_id: &str, k: usize) -> f64 {
    let Some(docs) = judgments.for_query(query_id) else {
        return 0.0;
    };
    let mut grades: Vec<u32> = docs.values().copied().filter(|&g| g > 0).collect();
    grades.sort_unstable_by(|a, b| b.cmp(a));
    dcg(grades.into_iter(), k)
}

/// nDCG@k of one ranked list, or `None` when the query has no relevant
/// judgment.
pub fn ndcg_at_k(ranking: &RankedList, judgments: &RelevanceJudgments, k: usize) -> Option<f64> {
    let idcg = ideal_dcg(judgments, &ranking.query_id, k);
    if idcg <= 0.0 {
        return None;
    }
    let gains = ranking
        .doc_ids()
        .map(|d| judgments.grade(&ranking.query_id, d));
    Some(dcg(gains, k) / idcg)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SkipReason {
    NoRelevantJudgments,
    MissingFromRun,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryScore {
    pub query_id: String,
    pub ndcg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SkippedQuery {
    pub query_id: String,
    pub reason: SkipReason,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvaluationResult {
    pub k: usize,
    /// Sorted by query id.
    pub per_query: Vec<QueryScore>,
    /// Macro average over `per_query`; `None` if nothing was evaluated.
    pub mean: Option<f64>,
    pub skipped: Vec<SkippedQuery>,
}

impl EvaluationResult {
    pub fn evaluated(&self) -> usize {
        self.per_query.len()
    }
}

pub fn evaluate_run(
    run: &[RankedList],
    judgments: &RelevanceJudgments,
    k: usize,
) -> EvaluationResult {
    let mut per_query = Vec::new();
    let mut skipped = Vec::new();
    let mut lists: Vec<&RankedList> = run.iter().collect();
    lists.sort_by(|a, b| a.query_id.cmp(&b.query_id));
    for list in &lists {
        match ndcg_at_k(list, judgments, k) {
            Some(ndcg) => per_query.push(QueryScore {
                query_id: list.query_id.clone(),
                ndcg,
            }),
            None => skipped.push(SkippedQuery {
                query_id: list.query_id.clone(),
                reason: SkipReason::NoRelevantJudgments,
            }),
        }
    }
    for qid in judgments.queries() {
        let in_run = lists
            .binary_search_by(|l| l.query_id.as_str().cmp(qid))
            .is_ok();
        if !in_run && ideal_dcg(judgments, qid, k) > 0.0 {
            skipped.push(SkippedQuery {
                query_id: qid.to_owned(),
                reason: SkipReason::MissingFromRun,
            });
        }
    }
    skipped.sort_by(|a, b| a.query_id.cmp(&b.query_id));
    let mean = (!per_query.is_empty())
        .then(|| per_query.iter().map(|q| q.ndcg).sum::<f64>() / per_query.len() as f64);
    EvaluationResult {
        k,
        per_query,
        mean,
        skipped,
    }
}
