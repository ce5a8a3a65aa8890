mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "pinquery", version, about = "Visual search over binary codes and visual-token indices")]
pub struct Cli {
    /// Seed for every randomized step.
    #[arg(long, global = true, default_value_t = 7)]
    pub seed: u64,
    #[arg(long, global = true, value_enum, default_value_t = Format::Table)]
    pub format: Format,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Table,
    Records,
}

fn unit_interval(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("{v} is not in [0, 1]"))
    }
}

fn non_negative(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v >= 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(format!("{v} must be a finite non-negative number"))
    }
}

fn positive(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(0) => Err("must be at least 1".into()),
        Ok(v) => Ok(v),
        Err(e) => Err(e.to_string()),
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Add or update records from an ingestion file.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        store: PathBuf,
    },
    /// Train a visual vocabulary from the store's embeddings.
    TrainCodebook {
        #[arg(long)]
        store: PathBuf,
        #[arg(long, value_parser = positive, default_value = "64")]
        k: usize,
        #[arg(long, value_parser = positive, default_value = "50")]
        max_iter: usize,
        /// Defaults to `<store>/codebook.pqcb`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-dimension median thresholds for binarization.
    CalibrateThresholds {
        #[arg(long)]
        store: PathBuf,
        /// Defaults to `<store>/thresholds.json`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compute pending features and write this epoch's visualjoins.
    PipelineRun(PipelineArgs),
    /// Build a sharded index directory from visualjoins.
    BuildIndex {
        #[arg(long)]
        joins: PathBuf,
        #[arg(long)]
        codebook: PathBuf,
        #[arg(long)]
        thresholds: PathBuf,
        #[arg(long, value_parser = positive, default_value = "4")]
        shards: usize,
        #[arg(long, value_parser = positive, default_value = "4")]
        m_index: usize,
        /// Existing recommendations, one `{doc_id, recs}` object per line.
        #[arg(long)]
        recs: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve an index over HTTP.
    Serve {
        #[arg(long, env = "PINQUERY_INDEX_DIR")]
        index_dir: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Per-request leaf deadline; 0 waits for every leaf.
        #[arg(long, default_value_t = 200)]
        deadline_ms: u64,
        #[arg(long, value_parser = positive, default_value = "5")]
        min_recs: usize,
        #[command(flatten)]
        leaf: LeafArgs,
    },
    /// Visual search for an indexed document or a raw embedding.
    Query(QueryArgs),
    /// Near-duplicates of an indexed document or a raw embedding.
    Neardup {
        #[command(flatten)]
        query: QueryArgs,
        #[arg(long, value_parser = unit_interval, default_value = "0.5")]
        min_token_frac: f64,
        #[arg(long, value_parser = unit_interval, default_value = "0.1")]
        max_hamming: f64,
    },
    /// Shared-label precision@k over an index.
    EvalRetrieval {
        #[arg(long, env = "PINQUERY_INDEX_DIR")]
        index_dir: PathBuf,
        /// Store directory or ingestion file holding the labelled records.
        #[arg(long)]
        labels: PathBuf,
        #[arg(long, value_parser = positive, default_value = "5")]
        queries_per_label: usize,
        #[arg(long, value_delimiter = ',', value_parser = positive, default_value = "5,10")]
        ks: Vec<usize>,
        /// Leave out timing so reports are reproducible byte for byte.
        #[arg(long)]
        no_latency: bool,
        #[command(flatten)]
        leaf: LeafArgs,
    },
    /// Text, image and combined detection accuracy over a fixture directory.
    EvalDetection {
        #[arg(long)]
        fixtures: PathBuf,
        #[arg(long, value_parser = unit_interval, default_value = "0.3")]
        iou: f64,
    },
    /// Write synthetic inputs.
    #[command(subcommand)]
    Demo(DemoCommand),
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    #[arg(long)]
    pub store: PathBuf,
    #[arg(long, value_parser = positive, default_value = "4")]
    pub shards: usize,
    #[arg(long)]
    pub epoch: u64,
    /// Defaults to `<store>/thresholds.json`.
    #[arg(long)]
    pub thresholds: Option<PathBuf>,
    /// Comma-separated subset of embedding, color, objects.
    #[arg(long, value_delimiter = ',', default_value = "embedding,color")]
    pub features: Vec<String>,
    /// `name=version`, repeatable.
    #[arg(long = "feature-version", value_name = "NAME=V")]
    pub versions: Vec<String>,
    #[arg(long, value_parser = positive, default_value = "3")]
    pub color_k: usize,
    /// Category rules for the objects feature; defaults to the demo rules.
    #[arg(long)]
    pub rules: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct LeafArgs {
    /// Scan every code instead of using the token index.
    #[arg(long)]
    pub exact: bool,
    #[arg(long, value_parser = positive)]
    pub pool: Option<usize>,
    #[arg(long, value_parser = positive)]
    pub m_query: Option<usize>,
    #[arg(long, value_parser = unit_interval)]
    pub w_v: Option<f64>,
    #[arg(long, value_parser = unit_interval)]
    pub w_m: Option<f64>,
    #[arg(long, value_parser = unit_interval)]
    pub conformity: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct QueryArgs {
    /// Query a running server, e.g. http://127.0.0.1:8080, instead of
    /// loading the index locally.
    #[arg(long)]
    pub server: Option<String>,
    #[arg(long, env = "PINQUERY_INDEX_DIR")]
    pub index_dir: Option<PathBuf>,
    #[arg(long, conflicts_with = "embedding")]
    pub doc: Option<String>,
    /// Comma-separated embedding values.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub embedding: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub annotations: Vec<String>,
    #[arg(long, value_parser = positive, default_value = "10")]
    pub k: usize,
    #[command(flatten)]
    pub leaf: LeafArgs,
}

#[derive(Debug, Subcommand)]
pub enum DemoCommand {
    /// Labelled embedding clusters as an ingestion file.
    Corpus {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_parser = positive, default_value = "10000")]
        docs: usize,
        #[arg(long, value_parser = positive, default_value = "64")]
        clusters: usize,
        #[arg(long, value_parser = positive, default_value = "64")]
        dim: usize,
        /// Cluster radius as a fraction of the smallest centre distance.
        #[arg(long, value_parser = non_negative, default_value = "0.25", conflicts_with = "sigma")]
        spread: f64,
        /// Per-dimension noise instead of a relative radius.
        #[arg(long, value_parser = non_negative)]
        sigma: Option<f64>,
        #[arg(long, value_parser = unit_interval, default_value = "0.2")]
        annotation_noise: f64,
        /// Attach small tinted rasters for the color feature.
        #[arg(long)]
        pixels: bool,
    },
    /// A detection fixture directory for eval-detection.
    Detection {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_parser = positive, default_value = "2000")]
        images: usize,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
