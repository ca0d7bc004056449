use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;
use tokenspace_core::alignment::{alignment_report, ReportParams};
use tokenspace_core::eval::{evaluate_run, EvaluationResult};
use tokenspace_core::io::{
    hex, read_embedding_matrix, read_qrels, read_run, read_token_table, read_tokenized_corpus,
    write_run,
};
use tokenspace_core::pooling::pool_segments;
use tokenspace_core::sparse::{build_index, cost_report, expand_queries, search_all, SparseIndex};
use tokenspace_core::spectral::{
    adjust_first_component, aligned_tokens, component_variation, decompose_contribution, svd_basis,
};
use tokenspace_core::{EmbeddingMatrix, TokenTable};

use crate::args::{AlignArgs, EvalArgs, IndexBuildArgs, PoolArgs, SearchArgs, SpectralArgs};
use crate::error::usage;
use crate::output::{commit_all, require_inputs, require_outputs, stage, write_atomic};

fn read_matrix(flag: &str, path: &Path) -> Result<EmbeddingMatrix> {
    read_embedding_matrix(path).with_context(|| format!("reading {flag}"))
}

fn read_table(flag: &str, path: &Path) -> Result<TokenTable> {
    read_token_table(path).with_context(|| format!("reading {flag}"))
}

fn check_limit(flag: &str, value: usize, vocab: usize) -> Result<()> {
    if value > vocab {
        return Err(usage(format!(
            "{flag} {value} exceeds the vocabulary size L = {vocab}"
        )));
    }
    Ok(())
}

fn check_table(table: &TokenTable, vocab: usize) -> Result<()> {
    if table.len() != vocab {
        return Err(tokenspace_core::Error::CountMismatch {
            what: "token table entry",
            expected: vocab,
            actual: table.len(),
        })
        .context("reading --token-table");
    }
    Ok(())
}

pub fn align(args: &AlignArgs) -> Result<()> {
    let source = match (&args.embeddings, &args.hidden_states) {
        (Some(p), _) => ("--embeddings", p.as_path()),
        (None, Some(p)) => ("--hidden-states", p.as_path()),
        (None, None) => return Err(usage("one of --embeddings or --hidden-states is required")),
    };
    let mut inputs = vec![
        source,
        ("--token-embeddings", args.token_embeddings.as_path()),
        ("--corpus", args.corpus.as_path()),
    ];
    if let Some(p) = &args.token_table {
        inputs.push(("--token-table", p));
    }
    require_inputs(&inputs)?;
    require_outputs(&[("--report-out", &args.report_out)])?;

    let table = match &args.token_table {
        Some(p) => {
            let t = read_table("--token-table", p)?;
            check_limit("--k", args.k, t.len())?;
            Some(t)
        }
        None => None,
    };
    let eg = read_matrix("--token-embeddings", &args.token_embeddings)?;
    check_limit("--k", args.k, eg.rows())?;
    if let Some(t) = &table {
        check_table(t, eg.rows())?;
    }
    let corpus = read_tokenized_corpus(&args.corpus, eg.rows()).context("reading --corpus")?;

    let raw = read_matrix(source.0, source.1)?;
    let raw_checksum = hex(&raw.checksum());
    let embeddings = match args.pooling {
        Some(strategy) if args.hidden_states.is_some() => {
            let lengths: Vec<usize> = corpus.docs().iter().map(|d| d.token_ids.len()).collect();
            pool_segments(&raw, &lengths, strategy).context("pooling --hidden-states")?
        }
        _ => raw,
    };

    let params = ReportParams {
        k: args.k,
        pooling: args
            .hidden_states
            .as_ref()
            .and(args.pooling)
            .map(|p| p.to_string()),
        inputs: vec![
            (source.0.trim_start_matches("--").to_owned(), raw_checksum),
            ("token-embeddings".to_owned(), hex(&eg.checksum())),
        ],
    };
    let report = alignment_report(&corpus, &embeddings, &eg, table.as_ref(), params)?;
    write_atomic(&args.report_out, |mut w| report.write_jsonl(&mut w))?;

    let s = &report.summary;
    println!("docs\t{}", s.docs);
    println!("hit@{}\t{:.6}", args.k, s.hit_at_k);
    println!("lar\t{:.6}", s.lar);
    println!("gar\t{:.6}", s.gar);
    Ok(())
}

pub fn pool(args: &PoolArgs) -> Result<()> {
    let mut inputs = vec![
        ("--hidden-states", args.hidden_states.as_path()),
        ("--corpus", args.corpus.as_path()),
    ];
    if let Some(p) = &args.token_table {
        inputs.push(("--token-table", p));
    }
    if let Some(p) = &args.token_embeddings {
        inputs.push(("--token-embeddings", p));
    }
    require_inputs(&inputs)?;
    require_outputs(&[("--out", &args.out)])?;

    let vocab = match (&args.token_table, &args.token_embeddings) {
        (Some(p), _) => read_table("--token-table", p)?.len(),
        (None, Some(p)) => read_matrix("--token-embeddings", p)?.rows(),
        (None, None) => {
            return Err(usage(
                "one of --token-table or --token-embeddings is required",
            ))
        }
    };
    let corpus = read_tokenized_corpus(&args.corpus, vocab).context("reading --corpus")?;
    let hidden = read_matrix("--hidden-states", &args.hidden_states)?;
    let lengths: Vec<usize> = corpus.docs().iter().map(|d| d.token_ids.len()).collect();
    let pooled =
        pool_segments(&hidden, &lengths, args.pooling).context("pooling --hidden-states")?;
    write_atomic(&args.out, |w| w.write_all(&pooled.to_bytes()))?;
    eprintln!(
        "pooled {} documents ({}) into {} x {}",
        corpus.len(),
        args.pooling,
        pooled.rows(),
        pooled.dim()
    );
    Ok(())
}

#[derive(Serialize)]
struct ReportToken<'a> {
    id: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    text: Option<&'a str>,
    score: f64,
}

#[derive(Serialize)]
struct ContributionToken<'a> {
    id: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    text: Option<&'a str>,
    total: f64,
    first: f64,
    rest: f64,
}

#[derive(Serialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum SpectralRecord<'a> {
    Params {
        rows: usize,
        dim: usize,
        vocab: usize,
        top_k: usize,
        sample: usize,
        base_embeddings: String,
        tuned_embeddings: String,
        token_embeddings: String,
    },
    /// One row of the variation table, 1-based `j`.
    Component {
        j: usize,
        singular_value: f64,
        v: f64,
    },
    Contribution {
        sample: usize,
        tokens: Vec<ContributionToken<'a>>,
    },
    Adjusted {
        sample: usize,
        lambda: f64,
        #[serde(skip_serializing_if = "Option::is_none")]
        scale: Option<f64>,
        tokens: Vec<ReportToken<'a>>,
    },
}

const DEFAULT_LAMBDA_SCALES: [f64; 3] = [0.95, 1.0, 1.05];

pub fn spectral(args: &SpectralArgs) -> Result<()> {
    let mut inputs = vec![
        ("--base-embeddings", args.base_embeddings.as_path()),
        ("--tuned-embeddings", args.tuned_embeddings.as_path()),
        ("--token-embeddings", args.token_embeddings.as_path()),
    ];
    if let Some(p) = &args.token_table {
        inputs.push(("--token-table", p));
    }
    require_inputs(&inputs)?;
    require_outputs(&[("--out", &args.out)])?;
    if let Some(x) = args
        .lambdas
        .iter()
        .chain(&args.lambda_scales)
        .find(|x| !x.is_finite())
    {
        return Err(usage(format!("lambda values must be finite, got {x}")));
    }

    let table = match &args.token_table {
        Some(p) => {
            let t = read_table("--token-table", p)?;
            check_limit("--top-k", args.top_k, t.len())?;
            Some(t)
        }
        None => None,
    };
    let eg = read_matrix("--token-embeddings", &args.token_embeddings)?;
    check_limit("--top-k", args.top_k, eg.rows())?;
    if let Some(t) = &table {
        check_table(t, eg.rows())?;
    }
    let base = read_matrix("--base-embeddings", &args.base_embeddings)?;
    let tuned = read_matrix("--tuned-embeddings", &args.tuned_embeddings)?;
    if base.dim() != eg.dim() {
        return Err(tokenspace_core::Error::DimensionMismatch {
            expected: eg.dim(),
            actual: base.dim(),
        })
        .context("--base-embeddings vs --token-embeddings");
    }
    if args.sample >= base.rows() {
        return Err(usage(format!(
            "--sample {} out of range: --base-embeddings has {} rows",
            args.sample,
            base.rows()
        )));
    }

    let basis = svd_basis(&base).context("fitting the basis on --base-embeddings")?;
    let spectrum = component_variation(&base, &tuned, &basis)?;
    let v1 = spectrum.v[0];

    let mut sweep: Vec<(f64, Option<f64>)> = args.lambdas.iter().map(|&l| (l, None)).collect();
    let scales = if args.lambdas.is_empty() && args.lambda_scales.is_empty() {
        DEFAULT_LAMBDA_SCALES.to_vec()
    } else {
        args.lambda_scales.clone()
    };
    sweep.extend(scales.into_iter().map(|s| (s * v1, Some(s))));

    let text = |id: u32| table.as_ref().and_then(|t| t.get(id as usize));
    let h = base.row(args.sample);
    let mut records = vec![SpectralRecord::Params {
        rows: base.rows(),
        dim: base.dim(),
        vocab: eg.rows(),
        top_k: args.top_k,
        sample: args.sample,
        base_embeddings: hex(&base.checksum()),
        tuned_embeddings: hex(&tuned.checksum()),
        token_embeddings: hex(&eg.checksum()),
    }];
    records.extend(
        basis
            .singular_values()
            .iter()
            .zip(&spectrum.v)
            .enumerate()
            .map(|(j, (&s, &v))| SpectralRecord::Component {
                j: j + 1,
                singular_value: s,
                v,
            }),
    );
    let split = decompose_contribution(h, &basis, &eg, args.top_k)?;
    records.push(SpectralRecord::Contribution {
        sample: args.sample,
        tokens: split
            .tokens
            .iter()
            .map(|t| ContributionToken {
                id: t.token_id,
                text: text(t.token_id),
                total: t.total,
                first: t.first,
                rest: t.rest,
            })
            .collect(),
    });
    for (lambda, scale) in sweep {
        let adjusted = adjust_first_component(h, &basis, lambda)?;
        let tokens = aligned_tokens(&adjusted, &eg, args.top_k)?;
        records.push(SpectralRecord::Adjusted {
            sample: args.sample,
            lambda,
            scale,
            tokens: tokens
                .into_iter()
                .map(|(id, score)| ReportToken {
                    id,
                    text: text(id),
                    score,
                })
                .collect(),
        });
    }

    write_atomic(&args.out, |w| {
        for r in &records {
            serde_json::to_writer(&mut *w, r)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    })?;

    println!("j\tsingular_value\tv_j");
    for (j, (s, v)) in basis.singular_values().iter().zip(&spectrum.v).enumerate() {
        println!("{}\t{s:.6e}\t{v:.6e}", j + 1);
    }
    Ok(())
}

pub fn index_build(args: &IndexBuildArgs) -> Result<()> {
    require_inputs(&[
        ("--doc-embeddings", &args.doc_embeddings),
        ("--corpus", &args.corpus),
        ("--token-embeddings", &args.token_embeddings),
    ])?;
    require_outputs(&[("--out", &args.out)])?;

    let eg = read_matrix("--token-embeddings", &args.token_embeddings)?;
    check_limit("--k", args.k, eg.rows())?;
    let corpus = read_tokenized_corpus(&args.corpus, eg.rows()).context("reading --corpus")?;
    let docs = read_matrix("--doc-embeddings", &args.doc_embeddings)?;
    let index = build_index(&corpus, &docs, &eg, args.k)?;
    write_atomic(&args.out, |w| w.write_all(&index.to_bytes()))?;
    eprintln!(
        "indexed {} documents, {} postings (K = {}, L = {})",
        index.num_docs(),
        index.num_postings(),
        index.k(),
        index.vocab_size()
    );
    Ok(())
}

pub fn search(args: &SearchArgs) -> Result<()> {
    require_inputs(&[
        ("--index", &args.index),
        ("--query-embeddings", &args.query_embeddings),
        ("--query-corpus", &args.query_corpus),
        ("--token-embeddings", &args.token_embeddings),
    ])?;
    let mut outputs = vec![("--run-out", args.run_out.as_path())];
    if let Some(p) = &args.cost_out {
        outputs.push(("--cost-out", p));
    }
    require_outputs(&outputs)?;
    if args.run_tag.is_empty() || args.run_tag.contains(char::is_whitespace) {
        return Err(usage(format!(
            "--run-tag {:?} must be non-empty and contain no whitespace",
            args.run_tag
        )));
    }

    let bytes = fs::read(&args.index)
        .with_context(|| format!("reading --index {}", args.index.display()))?;
    let index = SparseIndex::from_bytes(&bytes).context("reading --index")?;
    check_limit("--m", args.m, index.vocab_size())?;
    let eg = read_matrix("--token-embeddings", &args.token_embeddings)?;
    index
        .check_token_embeddings(&eg)
        .context("--token-embeddings vs --index")?;
    let queries =
        read_tokenized_corpus(&args.query_corpus, eg.rows()).context("reading --query-corpus")?;
    let qe = read_matrix("--query-embeddings", &args.query_embeddings)?;
    let expanded = expand_queries(&queries, &qe, &eg, args.m)?;
    let lists = search_all(&index, &expanded, args.top_n);

    let mut staged = vec![stage(&args.run_out, |mut w| {
        write_run(&lists, &args.run_tag, &mut w)
    })?];
    if let Some(p) = &args.cost_out {
        let cost = cost_report(&index, &expanded);
        staged.push(stage(p, |w| {
            serde_json::to_writer_pretty(&mut *w, &cost)?;
            w.write_all(b"\n")
        })?);
    }
    commit_all(staged)?;
    eprintln!(
        "searched {} queries over {} documents (M = {}, top-n = {})",
        lists.len(),
        index.num_docs(),
        args.m,
        args.top_n
    );
    Ok(())
}

fn write_table(result: &EvaluationResult, w: &mut dyn Write) -> std::io::Result<()> {
    let metric = format!("ndcg@{}", result.k);
    for q in &result.per_query {
        writeln!(w, "{metric}\t{}\t{:.6}", q.query_id, q.ndcg)?;
    }
    match result.mean {
        Some(m) => writeln!(w, "{metric}\tall\t{m:.6}")?,
        None => writeln!(w, "{metric}\tall\tnan")?,
    }
    writeln!(w, "num_q\tall\t{}", result.evaluated())?;
    for s in &result.skipped {
        let reason = serde_json::to_value(s.reason).map_err(std::io::Error::other)?;
        writeln!(
            w,
            "skipped\t{}\t{}",
            s.query_id,
            reason.as_str().unwrap_or_default()
        )?;
    }
    Ok(())
}

pub fn eval(args: &EvalArgs) -> Result<()> {
    require_inputs(&[("--run", &args.run), ("--qrels", &args.qrels)])?;
    if let Some(p) = &args.out {
        require_outputs(&[("--out", p)])?;
    }
    let run = read_run(&args.run).context("reading --run")?;
    let qrels = read_qrels(&args.qrels).context("reading --qrels")?;
    let result = evaluate_run(&run, &qrels, args.k);
    if let Some(p) = &args.out {
        write_atomic(p, |w| {
            serde_json::to_writer_pretty(&mut *w, &result)?;
            w.write_all(b"\n")
        })?;
    }
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    write_table(&result, &mut lock)?;
    Ok(())
}
