//! Generated on-disk fixtures and helpers for driving the `tokenspace` binary.

#![allow(dead_code)]

use std::ffi::OsStr;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tokenspace_core::io::{
    write_embedding_matrix, write_token_table, write_tokenized_corpus, Document,
};
use tokenspace_core::{EmbeddingMatrix, TokenTable, TokenizedCorpus};

pub const VOCAB: usize = 64;
pub const DIM: usize = 8;
pub const DOCS: usize = 20;
pub const QUERIES: usize = 5;

pub fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_tokenspace")
}

pub fn tokenspace<I, S>(args: I) -> Output
where
    I: IntoIterator<Item = S>,
    S: AsRef<OsStr>,
{
    Command::new(bin())
        .args(args)
        .output()
        .expect("spawn tokenspace")
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Input files for every subcommand, all derived from one seed.
pub struct Fixture {
    pub dir: PathBuf,
    pub token_table: PathBuf,
    pub token_embeddings: PathBuf,
    pub corpus: PathBuf,
    pub doc_embeddings: PathBuf,
    pub hidden_states: PathBuf,
    pub tuned_embeddings: PathBuf,
    pub query_corpus: PathBuf,
    pub query_embeddings: PathBuf,
    pub qrels: PathBuf,
}

fn matrix(rng: &mut ChaCha8Rng, rows: usize) -> EmbeddingMatrix {
    let data = (0..rows * DIM)
        .map(|_| rng.random_range(-1.0f32..1.0))
        .collect();
    EmbeddingMatrix::new(rows, DIM, data).unwrap()
}

fn corpus(rng: &mut ChaCha8Rng, prefix: &str, n: usize) -> TokenizedCorpus {
    let docs = (0..n)
        .map(|i| Document {
            doc_id: format!("{prefix}{i:02}"),
            token_ids: (0..rng.random_range(2..8))
                .map(|_| rng.random_range(0..VOCAB as u32))
                .collect(),
        })
        .collect();
    TokenizedCorpus::new(docs, VOCAB).unwrap()
}

impl Fixture {
    pub fn generate(dir: &Path, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = Fixture {
            dir: dir.to_path_buf(),
            token_table: dir.join("tokens.tsv"),
            token_embeddings: dir.join("token_embeddings.emb1"),
            corpus: dir.join("corpus.tsv"),
            doc_embeddings: dir.join("doc_embeddings.emb1"),
            hidden_states: dir.join("hidden_states.emb1"),
            tuned_embeddings: dir.join("tuned_embeddings.emb1"),
            query_corpus: dir.join("queries.tsv"),
            query_embeddings: dir.join("query_embeddings.emb1"),
            qrels: dir.join("qrels.tsv"),
        };
        let table = TokenTable::new((0..VOCAB).map(|i| format!("tok{i}")).collect()).unwrap();
        write_token_table(&table, &f.token_table).unwrap();
        write_embedding_matrix(&matrix(&mut rng, VOCAB), &f.token_embeddings).unwrap();

        let docs = corpus(&mut rng, "doc", DOCS);
        write_tokenized_corpus(&docs, &f.corpus).unwrap();
        let doc_emb = matrix(&mut rng, DOCS);
        write_embedding_matrix(&doc_emb, &f.doc_embeddings).unwrap();
        let positions: usize = docs.docs().iter().map(|d| d.token_ids.len()).sum();
        write_embedding_matrix(&matrix(&mut rng, positions), &f.hidden_states).unwrap();

        // tuned = base shifted along a fixed direction plus noise
        let shift: Vec<f32> = (0..DIM).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        let tuned: Vec<f32> = doc_emb
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x - 0.8 * shift[i % DIM] + rng.random_range(-0.05f32..0.05))
            .collect();
        write_embedding_matrix(
            &EmbeddingMatrix::new(DOCS, DIM, tuned).unwrap(),
            &f.tuned_embeddings,
        )
        .unwrap();

        let queries = corpus(&mut rng, "q", QUERIES);
        write_tokenized_corpus(&queries, &f.query_corpus).unwrap();
        write_embedding_matrix(&matrix(&mut rng, QUERIES), &f.query_embeddings).unwrap();

        let mut qrels = String::new();
        for q in 0..QUERIES {
            for _ in 0..3 {
                let d = rng.random_range(0..DOCS);
                let line = format!("q{q:02} 0 doc{d:02} {}\n", rng.random_range(0..3));
                if !qrels.contains(&line[..line.rfind(' ').unwrap()]) {
                    qrels.push_str(&line);
                }
            }
        }
        // a judged query that never appears in the run
        qrels.push_str("q99 0 doc00 1\n");
        fs::write(&f.qrels, qrels).unwrap();
        f
    }

    pub fn p(path: &Path) -> String {
        path.to_string_lossy().into_owned()
    }
}

/// Runs every subcommand against `fx`, writing into `out`. Returns each
/// output artifact (files and stdout) by name, in a fixed order.
pub fn run_pipeline(fx: &Fixture, out: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let p = Fixture::p;
    let o = |name: &str| p(&out.join(name));
    let steps: Vec<(&str, Vec<String>, Vec<&str>)> = vec![
        (
            "align",
            vec![
                "align".into(),
                "--embeddings".into(),
                p(&fx.doc_embeddings),
                "--token-embeddings".into(),
                p(&fx.token_embeddings),
                "--corpus".into(),
                p(&fx.corpus),
                "--token-table".into(),
                p(&fx.token_table),
                "--k".into(),
                "10".into(),
                "--report-out".into(),
                o("align.jsonl"),
            ],
            vec!["align.jsonl"],
        ),
        (
            "pool",
            vec![
                "pool".into(),
                "--hidden-states".into(),
                p(&fx.hidden_states),
                "--corpus".into(),
                p(&fx.corpus),
                "--token-table".into(),
                p(&fx.token_table),
                "--pooling".into(),
                "weighted-mean".into(),
                "--out".into(),
                o("pooled.emb1"),
            ],
            vec!["pooled.emb1"],
        ),
        (
            "align-hidden",
            vec![
                "align".into(),
                "--hidden-states".into(),
                p(&fx.hidden_states),
                "--pooling".into(),
                "mean".into(),
                "--token-embeddings".into(),
                p(&fx.token_embeddings),
                "--corpus".into(),
                p(&fx.corpus),
                "--k".into(),
                "5".into(),
                "--report-out".into(),
                o("align_hidden.jsonl"),
            ],
            vec!["align_hidden.jsonl"],
        ),
        (
            "spectral",
            vec![
                "spectral".into(),
                "--base-embeddings".into(),
                p(&fx.doc_embeddings),
                "--tuned-embeddings".into(),
                p(&fx.tuned_embeddings),
                "--token-embeddings".into(),
                p(&fx.token_embeddings),
                "--token-table".into(),
                p(&fx.token_table),
                "--top-k".into(),
                "5".into(),
                "--lambda".into(),
                "-0.5".into(),
                "--lambda-scale".into(),
                "0.95".into(),
                "--lambda-scale".into(),
                "1".into(),
                "--lambda-scale".into(),
                "1.05".into(),
                "--out".into(),
                o("spectral.jsonl"),
            ],
            vec!["spectral.jsonl"],
        ),
        (
            "index-build",
            vec![
                "index".into(),
                "build".into(),
                "--doc-embeddings".into(),
                p(&fx.doc_embeddings),
                "--corpus".into(),
                p(&fx.corpus),
                "--token-embeddings".into(),
                p(&fx.token_embeddings),
                "--k".into(),
                "12".into(),
                "--out".into(),
                o("index.spx"),
            ],
            vec!["index.spx"],
        ),
        (
            "search",
            vec![
                "search".into(),
                "--index".into(),
                o("index.spx"),
                "--query-embeddings".into(),
                p(&fx.query_embeddings),
                "--query-corpus".into(),
                p(&fx.query_corpus),
                "--token-embeddings".into(),
                p(&fx.token_embeddings),
                "--m".into(),
                "6".into(),
                "--top-n".into(),
                "10".into(),
                "--run-out".into(),
                o("run.txt"),
                "--cost-out".into(),
                o("cost.json"),
            ],
            vec!["run.txt", "cost.json"],
        ),
        (
            "eval",
            vec![
                "eval".into(),
                "--run".into(),
                o("run.txt"),
                "--qrels".into(),
                p(&fx.qrels),
                "--k".into(),
                "10".into(),
                "--out".into(),
                o("eval.json"),
            ],
            vec!["eval.json"],
        ),
    ];
    let mut artifacts = Vec::new();
    for (name, args, files) in steps {
        let output = tokenspace(&args);
        if !output.status.success() {
            return Err(format!("{name} failed: {}", stderr(&output)));
        }
        artifacts.push((format!("{name}:stdout"), output.stdout));
        for f in files {
            let bytes = fs::read(out.join(f)).map_err(|e| format!("{name}: {f}: {e}"))?;
            artifacts.push((format!("{name}:{f}"), bytes));
        }
    }
    Ok(artifacts)
}
