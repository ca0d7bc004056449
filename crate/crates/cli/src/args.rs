use std::path::PathBuf;

use clap::{ArgGroup, Args, Parser, Subcommand};
use tokenspace_core::pooling::PoolingStrategy;
use tokenspace_core::sparse::{DEFAULT_DOC_K, DEFAULT_QUERY_M};

#[derive(Parser, Debug)]
#[command(
    name = "tokenspace",
    version,
    about = "Token-space analysis of LLM text embeddings"
)]
pub struct Cli {
    /// Worker threads (default: all available cores).
    #[arg(long, global = true, value_parser = positive)]
    pub threads: Option<usize>,

    /// TOML file of flag defaults; flags given on the command line win.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Align text embeddings with the vocabulary and report Hit@K, LAR and GAR.
    Align(AlignArgs),
    /// Pool per-token hidden states into one embedding per document.
    Pool(PoolArgs),
    /// Principal-component analysis of base vs tuned embeddings.
    Spectral(SpectralArgs),
    /// Sparse index management.
    Index {
        #[command(subcommand)]
        command: IndexCommand,
    },
    /// Query a sparse index and write a TREC run.
    Search(SearchArgs),
    /// nDCG@k of a TREC run against qrels.
    Eval(EvalArgs),
}

#[derive(Subcommand, Debug)]
pub enum IndexCommand {
    /// Build a sparse index from document embeddings.
    Build(IndexBuildArgs),
}

#[derive(Args, Debug)]
#[command(group(ArgGroup::new("source").required(true).args(["embeddings", "hidden_states"])))]
pub struct AlignArgs {
    /// Pooled text embeddings, one row per corpus document (EMB1).
    #[arg(long)]
    pub embeddings: Option<PathBuf>,

    /// Concatenated per-token hidden states, pooled with --pooling.
    #[arg(long, requires = "pooling")]
    pub hidden_states: Option<PathBuf>,

    #[arg(long, conflicts_with = "embeddings")]
    pub pooling: Option<PoolingStrategy>,

    /// Unembedding matrix, one row per token (EMB1).
    #[arg(long)]
    pub token_embeddings: PathBuf,

    #[arg(long)]
    pub corpus: PathBuf,

    #[arg(long)]
    pub token_table: Option<PathBuf>,

    #[arg(long, default_value_t = 10, value_parser = positive)]
    pub k: usize,

    #[arg(long)]
    pub report_out: PathBuf,
}

#[derive(Args, Debug)]
#[command(group(ArgGroup::new("vocab").required(true).args(["token_table", "token_embeddings"])))]
pub struct PoolArgs {
    #[arg(long)]
    pub hidden_states: PathBuf,

    /// Tokenized corpus; document lengths delimit the hidden-state rows.
    #[arg(long)]
    pub corpus: PathBuf,

    #[arg(long)]
    pub pooling: PoolingStrategy,

    /// Vocabulary source used to validate corpus token ids.
    #[arg(long)]
    pub token_table: Option<PathBuf>,

    #[arg(long)]
    pub token_embeddings: Option<PathBuf>,

    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SpectralArgs {
    /// Base-model embeddings; also the collection the basis is fitted on.
    #[arg(long)]
    pub base_embeddings: PathBuf,

    #[arg(long)]
    pub tuned_embeddings: PathBuf,

    #[arg(long)]
    pub token_embeddings: PathBuf,

    #[arg(long)]
    pub token_table: Option<PathBuf>,

    #[arg(long, default_value_t = 10, value_parser = positive)]
    pub top_k: usize,

    /// Adjustment strength, used verbatim. Repeatable.
    #[arg(long = "lambda", allow_hyphen_values = true)]
    pub lambdas: Vec<f64>,

    /// Adjustment strength as a multiple of v_1. Repeatable. Defaults to
    /// 0.95, 1 and 1.05 when no --lambda or --lambda-scale is given.
    #[arg(long = "lambda-scale", allow_hyphen_values = true)]
    pub lambda_scales: Vec<f64>,

    /// Row of the base embeddings used for the contribution split and the
    /// adjusted alignments.
    #[arg(long, default_value_t = 0)]
    pub sample: usize,

    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct IndexBuildArgs {
    #[arg(long)]
    pub doc_embeddings: PathBuf,

    #[arg(long)]
    pub corpus: PathBuf,

    #[arg(long)]
    pub token_embeddings: PathBuf,

    /// Tokens kept per document.
    #[arg(long, default_value_t = DEFAULT_DOC_K, value_parser = positive)]
    pub k: usize,

    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SearchArgs {
    #[arg(long)]
    pub index: PathBuf,

    #[arg(long)]
    pub query_embeddings: PathBuf,

    /// Tokenized queries; ids in the first column become run query ids.
    #[arg(long)]
    pub query_corpus: PathBuf,

    /// Must be the matrix the index was built with.
    #[arg(long)]
    pub token_embeddings: PathBuf,

    /// Aligned tokens added to each query.
    #[arg(long, default_value_t = DEFAULT_QUERY_M)]
    pub m: usize,

    #[arg(long, default_value_t = 1000, value_parser = positive)]
    pub top_n: usize,

    #[arg(long)]
    pub run_out: PathBuf,

    #[arg(long, default_value = "tokenspace")]
    pub run_tag: String,

    /// Optional JSON report of per-query operation counts.
    #[arg(long)]
    pub cost_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub run: PathBuf,

    #[arg(long)]
    pub qrels: PathBuf,

    #[arg(long, default_value_t = 10, value_parser = positive)]
    pub k: usize,

    /// Also write the full result as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn positive(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(0) => Err("must be at least 1".into()),
        Ok(n) => Ok(n),
        Err(e) => Err(e.to_string()),
    }
}
