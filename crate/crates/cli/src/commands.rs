use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use log::info;
use pinquery_core::codec::{read_visualjoins, write_records_file, write_visualjoins};
use pinquery_core::demo::{clustered_corpus, demo_bank, detection_corpus, CorpusConfig, DetectionConfig, Spread, DEMO_RULES};
use pinquery_core::detection::{evaluate_detections, run_conditions, DetectorBank, FixtureDetector, RuleSet, DEFAULT_CATEGORIES};
use pinquery_core::evalkit::{build_eval_set, precision_at_k, RelevanceTable};
use pinquery_core::features::{train_codebook_with, BinarizationThresholds, Codebook};
use pinquery_core::index::{load_recs, Index, LeafParams, LeafParamsOverride};
use pinquery_core::pipeline::{
    join, read_ingest_file, run_epoch, ColorExtractor, EmbeddingExtractor, ExtractorRegistry, ImageStore,
    IngestRecord, ObjectExtractor, UpsertOutcome,
};
use pinquery_core::service::{near_dup, NearDupParams, RelatedPinsConfig, RootRanker, SearchRequest, SearchResponse};
use pinquery_core::{DocId, ImageRecord, SearchResult};
use pinquery_server::{AppState, NearDupRequest, NearDupResponse, ServerConfig};
use serde::{Deserialize, Serialize};

use crate::{Cli, Command, DemoCommand, Format, LeafArgs, PipelineArgs, QueryArgs};

const CODEBOOK_FILE: &str = "codebook.pqcb";
const THRESHOLDS_FILE: &str = "thresholds.json";
const FIXTURE_RECORDS: &str = "records.jsonl";
const FIXTURE_RULES: &str = "rules.tsv";
const FIXTURE_DETECTOR: &str = "detector.json";

pub fn run(cli: &Cli) -> Result<()> {
    let out = match &cli.command {
        Command::Ingest { input, store } => ingest(input, store, cli.format)?,
        Command::TrainCodebook { store, k, max_iter, out } => train(store, *k, *max_iter, out.as_deref(), cli)?,
        Command::CalibrateThresholds { store, out } => calibrate(store, out.as_deref(), cli.format)?,
        Command::PipelineRun(args) => pipeline(args, cli)?,
        Command::BuildIndex { joins, codebook, thresholds, shards, m_index, recs, out } => {
            build_index(joins, codebook, thresholds, *shards, *m_index, recs.as_deref(), out, cli.format)?
        }
        Command::Serve { index_dir, port, host, deadline_ms, min_recs, leaf } => {
            return serve(index_dir, host, *port, *deadline_ms, *min_recs, leaf)
        }
        Command::Query(q) => query(q, cli.format)?,
        Command::Neardup { query: q, min_token_frac, max_hamming } => {
            let nd = NearDupParams { min_token_match_frac: *min_token_frac, max_norm_hamming: *max_hamming };
            neardup(q, nd, cli.format)?
        }
        Command::EvalRetrieval { index_dir, labels, queries_per_label, ks, no_latency, leaf } => {
            eval_retrieval(index_dir, labels, *queries_per_label, ks, !no_latency, leaf, cli)?
        }
        Command::EvalDetection { fixtures, iou } => eval_detection(fixtures, *iou, cli.format)?,
        Command::Demo(d) => demo(d, cli)?,
    };
    print!("{out}");
    Ok(())
}

fn records_line<T: Serialize>(v: &T) -> Result<String> {
    Ok(serde_json::to_string(v)? + "\n")
}

fn ingest(input: &Path, store: &Path, format: Format) -> Result<String> {
    let records = read_ingest_file(input).with_context(|| format!("reading {}", input.display()))?;
    let mut store = ImageStore::open(store)?;
    let mut counts: BTreeMap<&str, usize> = [("inserted", 0), ("updated", 0), ("unchanged", 0)].into();
    for r in records {
        let key = match store.upsert(r)? {
            UpsertOutcome::Inserted => "inserted",
            UpsertOutcome::Updated => "updated",
            UpsertOutcome::Unchanged => "unchanged",
        };
        *counts.get_mut(key).unwrap() += 1;
    }
    store.save_records()?;
    Ok(match format {
        Format::Records => records_line(&counts)?,
        Format::Table => format!(
            "inserted {} updated {} unchanged {} (store holds {})\n",
            counts["inserted"],
            counts["updated"],
            counts["unchanged"],
            store.len()
        ),
    })
}

fn store_embeddings(store: &Path) -> Result<Vec<Vec<f64>>> {
    let store = ImageStore::open(store)?;
    if store.is_empty() {
        bail!("store {} holds no records", store.root().unwrap().display());
    }
    Ok(store.records().map(|r| r.embedding.clone()).collect())
}

fn train(store: &Path, k: usize, max_iter: usize, out: Option<&Path>, cli: &Cli) -> Result<String> {
    let samples = store_embeddings(store)?;
    let codebook = train_codebook_with(&samples, k, cli.seed, max_iter)?;
    let path = out.map_or_else(|| store.join(CODEBOOK_FILE), Path::to_owned);
    codebook.save(&path)?;
    #[derive(Serialize)]
    struct Summary {
        path: PathBuf,
        k: usize,
        dim: usize,
        trained_on: u64,
        checksum: String,
    }
    let s = Summary {
        path,
        k: codebook.k(),
        dim: codebook.dim(),
        trained_on: codebook.trained_on(),
        checksum: format!("{:016x}", codebook.checksum()),
    };
    Ok(match cli.format {
        Format::Records => records_line(&s)?,
        Format::Table => format!(
            "codebook k={} dim={} trained on {} samples, checksum {} -> {}\n",
            s.k,
            s.dim,
            s.trained_on,
            s.checksum,
            s.path.display()
        ),
    })
}

fn calibrate(store: &Path, out: Option<&Path>, format: Format) -> Result<String> {
    let samples = store_embeddings(store)?;
    let thresholds = BinarizationThresholds::calibrate_medians(&samples)?;
    let path = out.map_or_else(|| store.join(THRESHOLDS_FILE), Path::to_owned);
    fs::write(&path, serde_json::to_vec(&thresholds)?)?;
    Ok(match format {
        Format::Records => records_line(&serde_json::json!({"path": path, "dim": thresholds.dim()}))?,
        Format::Table => format!("{} median thresholds -> {}\n", thresholds.dim(), path.display()),
    })
}

fn load_thresholds(path: &Path) -> Result<BinarizationThresholds> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_slice(&bytes).with_context(|| format!("parsing {}", path.display()))
}

fn load_rules(path: Option<&Path>) -> Result<RuleSet> {
    Ok(match path {
        Some(p) => RuleSet::load(p, &DEFAULT_CATEGORIES)?,
        None => RuleSet::parse(DEMO_RULES, &DEFAULT_CATEGORIES)?,
    })
}

fn pipeline(args: &PipelineArgs, cli: &Cli) -> Result<String> {
    let mut versions: BTreeMap<String, u32> = BTreeMap::new();
    for v in &args.versions {
        let (name, ver) = v.split_once('=').ok_or_else(|| anyhow!("--feature-version expects NAME=V, got {v:?}"))?;
        versions.insert(name.to_owned(), ver.parse().with_context(|| format!("version in {v:?}"))?);
    }
    let version = |name: &str| versions.get(name).copied().unwrap_or(1);
    let mut registry = ExtractorRegistry::new();
    for f in &args.features {
        match f.as_str() {
            "embedding" => {
                let path = args.thresholds.clone().unwrap_or_else(|| args.store.join(THRESHOLDS_FILE));
                registry.register(Arc::new(EmbeddingExtractor {
                    version: version("embedding"),
                    thresholds: load_thresholds(&path)?,
                }));
            }
            "color" => registry.register(Arc::new(ColorExtractor {
                version: version("color"),
                k: args.color_k,
                seed: cli.seed,
            })),
            "objects" => registry.register(Arc::new(ObjectExtractor {
                version: version("objects"),
                rules: load_rules(args.rules.as_deref())?,
                detectors: Arc::new(demo_bank(cli.seed)),
            })),
            other => bail!("unknown feature {other:?}; expected embedding, color or objects"),
        }
    }
    if let Some(extra) = versions.keys().find(|n| !args.features.contains(n)) {
        bail!("--feature-version names {extra:?}, which is not among --features");
    }
    let mut store = ImageStore::open(&args.store)?;
    let manifest = run_epoch(&mut store, &registry, args.shards, args.epoch)?;
    let joined = join(&store, &registry, args.epoch)?;
    let dir = args.store.join("joins");
    fs::create_dir_all(&dir)?;
    let path = dir.join(format!("epoch-{}.jsonl", args.epoch));
    write_visualjoins(std::io::BufWriter::new(fs::File::create(&path)?), &joined.joins)?;
    info!("{} visualjoins -> {}", joined.joins.len(), path.display());
    Ok(match cli.format {
        Format::Records => {
            records_line(&serde_json::json!({
                "manifest": manifest,
                "joins": joined.joins.len(),
                "excluded": joined.excluded,
                "path": path,
            }))?
        }
        Format::Table => {
            let mut s = String::new();
            let _ = writeln!(s, "epoch {} over {} shards", manifest.epoch, manifest.shard_count);
            let _ = writeln!(s, "{:<10} {:>8} {:>12} {:>9}", "feature", "pending", "extractions", "failures");
            for (name, n) in &manifest.work_items {
                let _ = writeln!(
                    s,
                    "{name:<10} {n:>8} {:>12} {:>9}",
                    manifest.extractions_performed[name], manifest.failures[name]
                );
            }
            let _ = writeln!(s, "{} visualjoins, {} excluded -> {}", joined.joins.len(), joined.excluded.len(), path.display());
            s
        }
    })
}

#[allow(clippy::too_many_arguments)]
fn build_index(
    joins: &Path,
    codebook: &Path,
    thresholds: &Path,
    shards: usize,
    m_index: usize,
    recs: Option<&Path>,
    out: &Path,
    format: Format,
) -> Result<String> {
    let file = fs::File::open(joins).with_context(|| format!("reading {}", joins.display()))?;
    let joins = read_visualjoins(std::io::BufReader::new(file))?;
    let codebook = Codebook::load(codebook)?;
    let thresholds = load_thresholds(thresholds)?;
    let epoch = joins.iter().map(|j| j.epoch).max().unwrap_or(0);
    let mut index = Index::build(&joins, codebook, thresholds, shards, m_index, epoch)?;
    if let Some(p) = recs {
        index = index.with_recs(load_recs(p)?);
    }
    let manifest = index.save(out)?;
    Ok(match format {
        Format::Records => records_line(&manifest)?,
        Format::Table => format!(
            "{} docs in {} shards (m_index={}, {}-bit codes, epoch {}) -> {}\n",
            manifest.doc_count,
            manifest.shard_count,
            manifest.m_index,
            manifest.nbits,
            manifest.epoch,
            out.display()
        ),
    })
}

impl LeafArgs {
    fn overrides(&self) -> LeafParamsOverride {
        let (w_v, w_m) = match (self.w_v, self.w_m) {
            (Some(v), None) => (Some(v), Some(1.0 - v)),
            (None, Some(m)) => (Some(1.0 - m), Some(m)),
            other => other,
        };
        LeafParamsOverride {
            candidate_pool: self.pool,
            m_query: self.m_query,
            w_v,
            w_m,
            conformity_threshold: self.conformity,
            exact_mode: self.exact.then_some(true),
        }
    }
}

fn serve(index_dir: &Path, host: &str, port: u16, deadline_ms: u64, min_recs: usize, leaf: &LeafArgs) -> Result<()> {
    let defaults = leaf.overrides().apply(LeafParams::default());
    defaults.validate(1)?;
    let config = ServerConfig {
        defaults,
        deadline: (deadline_ms > 0).then(|| Duration::from_millis(deadline_ms)),
        related: RelatedPinsConfig { min_recs, ..Default::default() },
    };
    let state = AppState::load(index_dir, config)?;
    let addr: SocketAddr = format!("{host}:{port}").parse().with_context(|| format!("bad address {host}:{port}"))?;
    eprintln!("serving {} on http://{addr}", index_dir.display());
    pinquery_server::run_until_interrupted(Arc::new(state), addr)?;
    Ok(())
}

fn request(q: &QueryArgs) -> Result<SearchRequest> {
    let req = match (&q.doc, &q.embedding) {
        (Some(doc), None) => {
            let id: DocId = doc.parse().map_err(|e| anyhow!("--doc {doc:?}: {e}"))?;
            SearchRequest::by_doc(id, q.k)
        }
        (None, Some(e)) => SearchRequest::by_embedding(e.clone(), q.annotations.clone(), q.k),
        _ => bail!("pass exactly one of --doc or --embedding"),
    };
    Ok(req.with_params(q.leaf.overrides()))
}

fn local_ranker(q: &QueryArgs) -> Result<RootRanker> {
    let dir = q.index_dir.as_ref().ok_or_else(|| anyhow!("pass --server or --index-dir (or set PINQUERY_INDEX_DIR)"))?;
    Ok(RootRanker::new(Arc::new(Index::load(dir)?)))
}

fn post<B: Serialize, R: for<'de> Deserialize<'de>>(base: &str, path: &str, body: &B) -> Result<R> {
    let url = format!("{}{path}", base.trim_end_matches('/'));
    let resp = reqwest::blocking::Client::new().post(&url).json(body).send().with_context(|| format!("POST {url}"))?;
    let status = resp.status();
    if !status.is_success() {
        let body: serde_json::Value = resp.json().unwrap_or_default();
        bail!("{url}: {status}: {}", body["error"].as_str().unwrap_or("no detail"));
    }
    Ok(resp.json()?)
}

fn results_out(results: &[SearchResult], format: Format) -> Result<String> {
    let mut s = String::new();
    match format {
        Format::Records => {
            for r in results {
                s.push_str(&records_line(r)?);
            }
        }
        Format::Table => {
            let _ = writeln!(s, "{:>4}  {:<16} {:>8} {:>8} {:>8} {:>6}", "rank", "doc_id", "score", "visual", "meta", "tokens");
            for (i, r) in results.iter().enumerate() {
                let _ = writeln!(
                    s,
                    "{:>4}  {:<16} {:>8.4} {:>8.4} {:>8.4} {:>6}",
                    i + 1,
                    r.doc_id.to_string(),
                    r.score,
                    r.visual_score,
                    r.metadata_score,
                    r.matched_tokens
                );
            }
        }
    }
    Ok(s)
}

fn query(q: &QueryArgs, format: Format) -> Result<String> {
    let req = request(q)?;
    let resp: SearchResponse = match &q.server {
        Some(base) => post(base, "/v1/search", &req)?,
        None => local_ranker(q)?.search(&req)?,
    };
    let mut s = results_out(&resp.results, format)?;
    if resp.partial && format == Format::Table {
        s.push_str("partial: some shards missed the deadline\n");
    }
    Ok(s)
}

fn neardup(q: &QueryArgs, nd: NearDupParams, format: Format) -> Result<String> {
    let req = request(q)?;
    let results = match &q.server {
        Some(base) => post::<_, NearDupResponse>(base, "/v1/neardup", &NearDupRequest { request: req, near_dup: nd })?.results,
        None => near_dup(&local_ranker(q)?, &req, &nd)?,
    };
    results_out(&results, format)
}

fn labelled_records(path: &Path) -> Result<Vec<ImageRecord>> {
    Ok(if path.is_dir() {
        ImageStore::open(path)?.records().cloned().collect()
    } else {
        read_ingest_file(path)?
    })
}

fn eval_retrieval(
    index_dir: &Path,
    labels: &Path,
    queries_per_label: usize,
    ks: &[usize],
    latency: bool,
    leaf: &LeafArgs,
    cli: &Cli,
) -> Result<String> {
    let index = Arc::new(Index::load(index_dir)?);
    let corpus: Vec<(DocId, String)> =
        labelled_records(labels)?.into_iter().filter_map(|r| r.label.map(|l| (r.doc_id, l))).collect();
    if corpus.is_empty() {
        bail!("{} holds no labelled records", labels.display());
    }
    let evalset = build_eval_set(&corpus, queries_per_label, cli.seed)?;
    let base = leaf.overrides().apply(LeafParams::default());
    let modes: &[(&str, bool)] = if leaf.exact { &[("exact", true)] } else { &[("token", false), ("exact", true)] };
    let mut table = RelevanceTable::default();
    for &(name, exact) in modes {
        let ranker = RootRanker::new(Arc::clone(&index)).with_defaults(LeafParams { exact_mode: exact, ..base });
        table.rows.push(precision_at_k(name, &ranker, &evalset, ks)?);
    }
    Ok(match cli.format {
        Format::Records => table.to_records(latency)?,
        Format::Table => {
            let mut s = table.to_table(latency);
            let r = &table.rows[0];
            let _ = writeln!(s, "{} queries over {} labelled docs, {} skipped", r.queries, corpus.len(), r.skipped);
            s
        }
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DetectorFile {
    jitter: f64,
    miss_rate: f64,
    false_positive_rate: f64,
    seed: u64,
    min_score: f64,
}

fn eval_detection(dir: &Path, iou: f64, format: Format) -> Result<String> {
    let records = read_ingest_file(&dir.join(FIXTURE_RECORDS))?;
    let rules = RuleSet::load(&dir.join(FIXTURE_RULES), &DEFAULT_CATEGORIES)?;
    let det_path = dir.join(FIXTURE_DETECTOR);
    let det: DetectorFile = serde_json::from_slice(&fs::read(&det_path).with_context(|| format!("reading {}", det_path.display()))?)
        .with_context(|| format!("parsing {}", det_path.display()))?;
    let bank = DetectorBank::fixtures(
        &rules,
        FixtureDetector {
            category: String::new(),
            jitter: det.jitter,
            miss_rate: det.miss_rate,
            false_positive_rate: det.false_positive_rate,
            seed: det.seed,
        },
        det.min_score,
    );
    let images = records.iter().map(|r| run_conditions(r, &rules, &bank)).collect::<Result<Vec<_>, _>>()?;
    let report = evaluate_detections(&images, rules.vocabulary(), iou)?;
    Ok(match format {
        Format::Records => report.to_records()?,
        Format::Table => report.to_table(),
    })
}

fn demo(cmd: &DemoCommand, cli: &Cli) -> Result<String> {
    match cmd {
        DemoCommand::Corpus { out, docs, clusters, dim, spread, sigma, annotation_noise, pixels } => {
            let cfg = CorpusConfig {
                docs: *docs,
                clusters: *clusters,
                dim: *dim,
                spread: sigma.map_or(Spread::MinDistanceFraction(*spread), Spread::PerDimension),
                annotation_noise: *annotation_noise,
                pixels: *pixels,
                seed: cli.seed,
            };
            let corpus = clustered_corpus(&cfg)?;
            if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent)?;
            }
            let lines: Vec<IngestRecord> = corpus.records.iter().map(IngestRecord::from).collect();
            write_records_file(out, &lines)?;
            Ok(format!(
                "{} docs in {} clusters ({} dims, per-dim sigma {:.4}) -> {}\n",
                docs,
                clusters,
                dim,
                corpus.per_dim_sigma,
                out.display()
            ))
        }
        DemoCommand::Detection { out, images } => {
            fs::create_dir_all(out)?;
            let cfg = DetectionConfig { images: *images, seed: cli.seed, ..Default::default() };
            let lines: Vec<IngestRecord> = detection_corpus(&cfg)?.iter().map(IngestRecord::from).collect();
            write_records_file(&out.join(FIXTURE_RECORDS), &lines)?;
            fs::write(out.join(FIXTURE_RULES), DEMO_RULES)?;
            let d = pinquery_core::demo::demo_detector(cli.seed);
            let det = DetectorFile {
                jitter: d.jitter,
                miss_rate: d.miss_rate,
                false_positive_rate: d.false_positive_rate,
                seed: d.seed,
                min_score: 0.5,
            };
            fs::write(out.join(FIXTURE_DETECTOR), serde_json::to_vec_pretty(&det)?)?;
            Ok(format!("{images} fixture images -> {}\n", out.display()))
        }
    }
}
