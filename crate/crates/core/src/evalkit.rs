//! Offline retrieval evaluation: shared-label precision@k, feature-set
//! comparison and relevance tables.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::sync::Arc;
use std::time::{Duration, Instant};

use log::warn;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{binarize, train_codebook, BinarizationThresholds};
use crate::index::{Index, LeafParams};
use crate::model::{DocId, ImageRecord, VisualJoin};
use crate::rng::SplitMix64;
use crate::service::{RootRanker, SearchRequest};

pub const LATENCY_FOOTER: &str =
    "latency: mean wall time per query, fingerprint lookup through merge; excludes index load and model inference";

/// Anything that answers "top-k documents for this indexed document".
pub trait Engine {
    fn search(&self, query: DocId, k: usize) -> Result<Vec<DocId>>;
}

impl Engine for RootRanker {
    fn search(&self, query: DocId, k: usize) -> Result<Vec<DocId>> {
        let response = RootRanker::search(self, &SearchRequest::by_doc(query, k))?;
        Ok(response.results.into_iter().map(|r| r.doc_id).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalSet {
    pub items: Vec<(DocId, String)>,
    pub queries: Vec<DocId>,
    /// Labels with a single item; they cannot have a relevant result.
    pub excluded_labels: Vec<String>,
}

impl EvalSet {
    pub fn labels(&self) -> BTreeMap<DocId, &str> {
        self.items.iter().map(|(d, l)| (*d, l.as_str())).collect()
    }
}

/// Samples up to `queries_per_label` queries from every label with at least
/// two items.
pub fn build_eval_set(corpus: &[(DocId, String)], queries_per_label: usize, seed: u64) -> Result<EvalSet> {
    let mut by_label: BTreeMap<&str, Vec<DocId>> = BTreeMap::new();
    let mut seen = BTreeSet::new();
    for (doc, label) in corpus {
        if label.is_empty() {
            return Err(Error::invalid(format!("{doc}: empty label")));
        }
        if !seen.insert(*doc) {
            return Err(Error::invalid(format!("{doc}: appears twice in the corpus")));
        }
        by_label.entry(label).or_default().push(*doc);
    }
    let mut rng = SplitMix64::new(seed);
    let mut queries = Vec::new();
    let mut excluded_labels = Vec::new();
    for (label, mut docs) in by_label {
        if docs.len() < 2 {
            warn!("label {label:?} has a single item; excluded from queries");
            excluded_labels.push(label.to_owned());
            continue;
        }
        docs.sort();
        let n = queries_per_label.min(docs.len());
        let (picked, _) = docs.partial_shuffle(&mut rng, n);
        queries.extend_from_slice(picked);
    }
    let mut items = corpus.to_vec();
    items.sort();
    Ok(EvalSet { items, queries, excluded_labels })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelevanceRow {
    pub config: String,
    /// `(k, p@k)` in the order requested.
    pub precision: Vec<(usize, f64)>,
    pub mean_latency: Duration,
    pub queries: usize,
    pub skipped: usize,
}

impl RelevanceRow {
    pub fn p_at(&self, k: usize) -> Option<f64> {
        self.precision.iter().find(|(x, _)| *x == k).map(|(_, p)| *p)
    }
}

/// Mean fraction of the top k results that share the query's label. Slots
/// the engine leaves empty count as irrelevant; the query never counts.
pub fn precision_at_k<E: Engine + ?Sized>(
    config: &str,
    engine: &E,
    evalset: &EvalSet,
    ks: &[usize],
) -> Result<RelevanceRow> {
    let max_k = *ks.iter().max().ok_or_else(|| Error::invalid("ks must not be empty"))?;
    if ks.contains(&0) {
        return Err(Error::invalid("k must be at least 1"));
    }
    let labels = evalset.labels();
    let mut sums = vec![0.0; ks.len()];
    let mut elapsed = Duration::ZERO;
    let (mut done, mut skipped) = (0usize, 0usize);
    for &q in &evalset.queries {
        let label = labels.get(&q).ok_or_else(|| Error::invalid(format!("query {q} is not an eval item")))?;
        let start = Instant::now();
        let results = match engine.search(q, max_k + 1) {
            Ok(r) => r,
            Err(Error::NotFound(msg)) => {
                warn!("skipping query {q}: {msg}");
                skipped += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        elapsed += start.elapsed();
        let results: Vec<DocId> = results.into_iter().filter(|&d| d != q).take(max_k).collect();
        for (slot, &k) in ks.iter().enumerate() {
            let relevant = results.iter().take(k).filter(|d| labels.get(d) == Some(label)).count();
            sums[slot] += relevant as f64 / k as f64;
        }
        done += 1;
    }
    let denom = done.max(1) as f64;
    Ok(RelevanceRow {
        config: config.to_owned(),
        precision: ks.iter().zip(&sums).map(|(&k, &s)| (k, s / denom)).collect(),
        mean_latency: if done == 0 { Duration::ZERO } else { elapsed / done as u32 },
        queries: done,
        skipped,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RelevanceTable {
    pub rows: Vec<RelevanceRow>,
}

impl RelevanceTable {
    pub fn to_table(&self, latency: bool) -> String {
        let ks: Vec<usize> = self.rows.first().map_or(vec![], |r| r.precision.iter().map(|(k, _)| *k).collect());
        let width = self.rows.iter().map(|r| r.config.len()).max().unwrap_or(0).max(5);
        let mut s = String::new();
        let _ = write!(s, "{:<width$}", "Model");
        for k in &ks {
            let _ = write!(s, " {:>7}", format!("p@{k}"));
        }
        if latency {
            let _ = write!(s, " {:>9}", "latency");
        }
        s.push('\n');
        for r in &self.rows {
            let _ = write!(s, "{:<width$}", r.config);
            for (_, p) in &r.precision {
                let _ = write!(s, " {p:>7.3}");
            }
            if latency {
                let _ = write!(s, " {:>9}", format!("{:.2}ms", r.mean_latency.as_secs_f64() * 1e3));
            }
            s.push('\n');
        }
        if latency {
            s.push_str(LATENCY_FOOTER);
            s.push('\n');
        }
        s
    }

    pub fn to_records(&self, latency: bool) -> Result<String> {
        let mut out = String::new();
        for r in &self.rows {
            let mut obj = serde_json::Map::new();
            obj.insert("config".into(), r.config.clone().into());
            for (k, p) in &r.precision {
                obj.insert(format!("p@{k}"), (*p).into());
            }
            obj.insert("queries".into(), r.queries.into());
            obj.insert("skipped".into(), r.skipped.into());
            if latency {
                obj.insert("mean_latency_ms".into(), (r.mean_latency.as_secs_f64() * 1e3).into());
            }
            out.push_str(&serde_json::to_string(&obj)?);
            out.push('\n');
        }
        Ok(out)
    }
}

/// How to turn raw embeddings into a searchable index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IndexConfig {
    pub codebook_k: usize,
    pub m_index: usize,
    pub shard_count: usize,
    pub seed: u64,
    pub epoch: u64,
}

impl Default for IndexConfig {
    fn default() -> Self {
        Self { codebook_k: 64, m_index: 4, shard_count: 4, seed: 7, epoch: 1 }
    }
}

/// Median thresholds, a trained codebook and shards for `records`, without
/// going through the on-disk pipeline.
pub fn index_records(records: &[ImageRecord], cfg: &IndexConfig) -> Result<Index> {
    let embeddings: Vec<Vec<f64>> = records.iter().map(|r| r.embedding.clone()).collect();
    let thresholds = BinarizationThresholds::calibrate_medians(&embeddings)?;
    let codebook = train_codebook(&embeddings, cfg.codebook_k, cfg.seed)?;
    let mut joins = records
        .iter()
        .map(|r| {
            Ok(VisualJoin {
                doc_id: r.doc_id,
                annotations: r.annotations.clone(),
                binary_code: binarize(&r.embedding, &thresholds)?,
                embedding: r.embedding.clone(),
                color_signature: None,
                detected_objects: vec![],
                feature_versions: vec![],
                epoch: cfg.epoch,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    joins.sort_by_key(|j| j.doc_id);
    Index::build(&joins, codebook, thresholds, cfg.shard_count, cfg.m_index, cfg.epoch)
}

/// One precision row per named embedding set, all over the same queries.
/// Annotations are left out so rows differ only by their features.
pub fn compare_feature_sets(
    corpora: &[(String, Vec<(DocId, Vec<f64>)>)],
    evalset: &EvalSet,
    ks: &[usize],
    index_cfg: &IndexConfig,
    params: LeafParams,
) -> Result<RelevanceTable> {
    let expected: BTreeSet<DocId> = evalset.items.iter().map(|(d, _)| *d).collect();
    let mut rows = Vec::new();
    for (name, corpus) in corpora {
        let docs: BTreeSet<DocId> = corpus.iter().map(|(d, _)| *d).collect();
        if docs != expected || docs.len() != corpus.len() {
            return Err(Error::invalid(format!("corpus {name:?} does not cover exactly the eval items")));
        }
        let records = corpus
            .iter()
            .map(|(d, e)| {
                let mut r = ImageRecord::new(&format!("{name}/{d}"), Vec::<String>::new(), e.clone())?;
                r.doc_id = *d;
                Ok(r)
            })
            .collect::<Result<Vec<_>>>()?;
        let index = index_records(&records, index_cfg)?;
        let ranker = RootRanker::new(Arc::new(index)).with_defaults(params);
        rows.push(precision_at_k(name, &ranker, evalset, ks)?);
    }
    Ok(RelevanceTable { rows })
}
