//! Brute-force reference implementations and random instance generators.
//!
//! Nothing here calls into the library's ranking, metric or index code: every
//! oracle scores the full vocabulary naively, sorts it with a plain stable
//! sort and evaluates the set formulas with hash sets.

#![allow(dead_code)]

use std::collections::{BTreeSet, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Rows = Vec<Vec<f32>>;

/// `e · h` with f64 accumulation, rounded to f32 once.
pub fn naive_score(e: &[f32], h: &[f32]) -> f32 {
    let mut acc = 0.0f64;
    for i in 0..e.len() {
        acc += e[i] as f64 * h[i] as f64;
    }
    acc as f32
}

/// Full vocabulary ranking: descending score, ascending id.
pub fn naive_ranking(token_rows: &Rows, h: &[f32]) -> Vec<(u32, f32)> {
    let mut scored: Vec<(u32, f32)> = token_rows
        .iter()
        .enumerate()
        .map(|(t, e)| (t as u32, naive_score(e, h)))
        .collect();
    // stable sort on score alone keeps ascending id among equal scores
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
    scored
}

pub fn top_set(ranking: &[(u32, f32)], k: usize) -> HashSet<u32> {
    ranking.iter().take(k).map(|&(t, _)| t).collect()
}

pub struct AlignmentOracle {
    pub hit_at_k: f64,
    pub lar: f64,
    pub gar: f64,
}

pub fn oracle_alignment(
    token_rows: &Rows,
    docs: &[Vec<u32>],
    embeddings: &Rows,
    k: usize,
) -> AlignmentOracle {
    let mut hits = 0usize;
    let mut lar_sum = 0.0;
    let mut union_aligned = HashSet::new();
    let mut union_literal = HashSet::new();
    for (doc, h) in docs.iter().zip(embeddings) {
        let literal: HashSet<u32> = doc.iter().copied().collect();
        let ranking = naive_ranking(token_rows, h);
        if top_set(&ranking, k).intersection(&literal).next().is_some() {
            hits += 1;
        }
        let ki = literal.len();
        let local: HashSet<u32> = top_set(&ranking, ki)
            .intersection(&literal)
            .copied()
            .collect();
        lar_sum += local.len() as f64 / ki as f64;
        union_aligned.extend(local);
        union_literal.extend(literal);
    }
    let n = docs.len() as f64;
    AlignmentOracle {
        hit_at_k: hits as f64 / n,
        lar: lar_sum / n,
        gar: union_aligned.len() as f64 / union_literal.len() as f64,
    }
}

/// Sparse retrieval by explicit materialisation of `T̂_d^K` and `T̃_q`.
/// Returns `(doc_id, score)` in ranked order, truncated to `n`.
#[allow(clippy::too_many_arguments)]
pub fn oracle_search(
    token_rows: &Rows,
    doc_ids: &[String],
    doc_embeddings: &Rows,
    k: usize,
    query_tokens: &[u32],
    query_embedding: &[f32],
    m: usize,
    n: usize,
) -> Vec<(String, f64)> {
    let q_ranking = naive_ranking(token_rows, query_embedding);
    let mut expanded: BTreeSet<u32> = query_tokens.iter().copied().collect();
    expanded.extend(q_ranking.iter().take(m).map(|&(t, _)| t));

    let mut results = Vec::new();
    for (id, h) in doc_ids.iter().zip(doc_embeddings) {
        let ranking = naive_ranking(token_rows, h);
        let doc_top: Vec<(u32, f32)> = ranking.into_iter().take(k).collect();
        let mut score = 0.0f64;
        let mut any = false;
        // ascending token order, matching the documented summation order
        for &t in &expanded {
            if let Some(&(_, w)) = doc_top.iter().find(|&&(dt, _)| dt == t) {
                score += w as f64;
                any = true;
            }
        }
        if any {
            results.push((id.clone(), score));
        }
    }
    results.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
    results.truncate(n);
    results
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A vector whose entries are either small integers (to force score ties) or
/// continuous values, depending on `integer`.
pub fn random_vec(rng: &mut ChaCha8Rng, dim: usize, integer: bool) -> Vec<f32> {
    (0..dim)
        .map(|_| {
            if integer {
                rng.random_range(-2i32..=2) as f32
            } else {
                rng.random_range(-1.0f32..1.0)
            }
        })
        .collect()
}

pub fn random_rows(rng: &mut ChaCha8Rng, rows: usize, dim: usize, integer: bool) -> Rows {
    (0..rows).map(|_| random_vec(rng, dim, integer)).collect()
}

pub fn random_doc(rng: &mut ChaCha8Rng, vocab: usize, max_len: usize) -> Vec<u32> {
    let len = rng.random_range(1..=max_len);
    (0..len)
        .map(|_| rng.random_range(0..vocab as u32))
        .collect()
}

/// A random alignment instance within the given bounds.
pub struct AlignmentInstance {
    pub token_rows: Rows,
    pub docs: Vec<Vec<u32>>,
    pub embeddings: Rows,
    pub k: usize,
}

pub fn alignment_instance(
    rng: &mut ChaCha8Rng,
    max_vocab: usize,
    max_dim: usize,
    max_docs: usize,
    max_k: usize,
) -> AlignmentInstance {
    let vocab = rng.random_range(2..=max_vocab);
    let dim = rng.random_range(1..=max_dim);
    let ndocs = rng.random_range(1..=max_docs);
    let integer = rng.random_bool(0.5);
    let k = rng.random_range(1..=max_k.min(vocab));
    AlignmentInstance {
        token_rows: random_rows(rng, vocab, dim, integer),
        docs: (0..ndocs).map(|_| random_doc(rng, vocab, 12)).collect(),
        embeddings: random_rows(rng, ndocs, dim, integer),
        k,
    }
}

/// A random retrieval instance: vocabulary, documents with embeddings, one
/// query, and the hyper-parameters K and M.
pub struct SparseInstance {
    pub token_rows: Rows,
    pub doc_ids: Vec<String>,
    pub doc_rows: Rows,
    pub query_tokens: Vec<u32>,
    pub query_row: Vec<f32>,
    pub k: usize,
    pub m: usize,
}

/// L <= 100, d <= 16, at most 30 documents, K <= 20, M <= 10.
pub fn sparse_instance(rng: &mut ChaCha8Rng) -> SparseInstance {
    let vocab = rng.random_range(2..=100);
    let dim = rng.random_range(1..=16);
    let ndocs = rng.random_range(1..=30);
    let integer = rng.random_bool(0.5);
    // ids out of lexicographic order, so index order differs from input order
    let doc_ids: Vec<String> = (0..ndocs)
        .map(|i| format!("d{:02}", (i * 7) % 31))
        .collect();
    SparseInstance {
        token_rows: random_rows(rng, vocab, dim, integer),
        doc_rows: random_rows(rng, ndocs, dim, integer),
        doc_ids,
        query_tokens: random_doc(rng, vocab, 6),
        query_row: random_vec(rng, dim, integer),
        k: rng.random_range(1..=20usize.min(vocab)),
        m: rng.random_range(0..=10usize.min(vocab)),
    }
}

/// Relative comparison with an absolute floor of 1.
pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

pub fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Unit vectors orthogonal to `w` and to each other (Gram-Schmidt on random
/// draws).
pub fn orthogonal_complement(rng: &mut ChaCha8Rng, w: &[f64], count: usize) -> Vec<Vec<f64>> {
    let mut basis = vec![w.to_vec()];
    while basis.len() < count + 1 {
        let mut v: Vec<f64> = (0..w.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        for b in &basis {
            let p = dot(&v, b);
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
        }
        if dot(&v, &v) > 1e-6 {
            basis.push(unit(v));
        }
    }
    basis.split_off(1)
}

/// Embeddings `h_i = a_i w + n_i` with `a_i` in [4, 6], small noise `n_i ⟂ w`
/// and `Σ_i a_i n_i = 0`, which makes `w` an exact dominant right singular
/// vector of the collection (up to f32 rounding).
#[allow(clippy::needless_range_loop)]
pub fn planted_collection(rng: &mut ChaCha8Rng, rows: usize, w: &[f64]) -> Rows {
    let d = w.len();
    let a: Vec<f64> = (0..rows).map(|_| rng.random_range(4.0..6.0)).collect();
    let mut noise: Vec<Vec<f64>> = (0..rows)
        .map(|_| {
            let mut n: Vec<f64> = (0..d).map(|_| rng.random_range(-0.3..0.3)).collect();
            let p = dot(&n, w);
            n.iter_mut().zip(w).for_each(|(x, y)| *x -= p * y);
            n
        })
        .collect();
    let aa = dot(&a, &a);
    for c in 0..d {
        let beta = (0..rows).map(|i| a[i] * noise[i][c]).sum::<f64>() / aa;
        for i in 0..rows {
            noise[i][c] -= beta * a[i];
        }
    }
    (0..rows)
        .map(|i| (0..d).map(|c| (a[i] * w[c] + noise[i][c]) as f32).collect())
        .collect()
}

/// Fixture for the first-component adjustment: the fitting collection, an
/// unembedding matrix whose token 0 is parallel to the dominant direction and
/// whose remaining tokens are orthogonal to it, and a text embedding with a
/// large dominant coordinate plus a small meaningful part.
pub struct AdjustmentInstance {
    pub collection: Rows,
    pub token_rows: Rows,
    pub h: Vec<f32>,
}

pub fn adjustment_instance(rng: &mut ChaCha8Rng, dim: usize) -> AdjustmentInstance {
    let w = unit((0..dim).map(|_| rng.random_range(-1.0..1.0)).collect());
    let collection = planted_collection(rng, 40, &w);
    let others = orthogonal_complement(rng, &w, dim - 1);
    let mut token_rows: Rows = vec![w.iter().map(|x| (3.0 * x) as f32).collect()];
    token_rows.extend(
        others
            .iter()
            .map(|v| v.iter().map(|&x| x as f32).collect::<Vec<_>>()),
    );
    let h: Vec<f32> = (0..dim)
        .map(|c| (5.0 * w[c] + 0.5 * others[0][c] + 0.2 * others[1][c]) as f32)
        .collect();
    AdjustmentInstance {
        collection,
        token_rows,
        h,
    }
}
