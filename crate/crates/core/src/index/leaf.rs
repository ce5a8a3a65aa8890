use serde::{Deserialize, Serialize};

use super::shard::{candidate_gen, sorted_set, StoredDoc, TokenIndexShard};
use crate::error::{Error, Result};
use crate::features::VisualToken;
use crate::model::{BinaryCode, DocId, SearchResult};

pub const DEFAULT_M_QUERY: usize = 4;
pub const DEFAULT_W_VISUAL: f64 = 0.8;
pub const DEFAULT_W_METADATA: f64 = 0.2;
const WEIGHT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LeafParams {
    /// Candidates kept after token lookup; `None` means `10 * k`.
    pub candidate_pool: Option<usize>,
    pub m_query: usize,
    pub w_v: f64,
    pub w_m: f64,
    pub conformity_threshold: f64,
    pub exact_mode: bool,
}

impl Default for LeafParams {
    fn default() -> Self {
        Self {
            candidate_pool: None,
            m_query: DEFAULT_M_QUERY,
            w_v: DEFAULT_W_VISUAL,
            w_m: DEFAULT_W_METADATA,
            conformity_threshold: 0.0,
            exact_mode: false,
        }
    }
}

impl LeafParams {
    pub fn exact() -> Self {
        Self { exact_mode: true, ..Self::default() }
    }

    pub fn pool(&self, k: usize) -> usize {
        self.candidate_pool.unwrap_or(10 * k)
    }

    pub fn validate(&self, k: usize) -> Result<()> {
        if k == 0 {
            return Err(Error::invalid("k must be at least 1"));
        }
        if self.m_query == 0 {
            return Err(Error::invalid("m_query must be at least 1"));
        }
        if self.pool(k) < k {
            return Err(Error::invalid(format!("candidate_pool {} is smaller than k={k}", self.pool(k))));
        }
        for (name, w) in [("w_v", self.w_v), ("w_m", self.w_m), ("conformity_threshold", self.conformity_threshold)] {
            if !(0.0..=1.0).contains(&w) {
                return Err(Error::invalid(format!("{name} must be in [0, 1], got {w}")));
            }
        }
        if (self.w_v + self.w_m - 1.0).abs() > WEIGHT_TOLERANCE {
            return Err(Error::invalid(format!("w_v + w_m must be 1, got {}", self.w_v + self.w_m)));
        }
        Ok(())
    }
}

/// Per-request replacements for individual [`LeafParams`] fields.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LeafParamsOverride {
    pub candidate_pool: Option<usize>,
    pub m_query: Option<usize>,
    pub w_v: Option<f64>,
    pub w_m: Option<f64>,
    pub conformity_threshold: Option<f64>,
    pub exact_mode: Option<bool>,
}

impl LeafParamsOverride {
    pub fn apply(&self, base: LeafParams) -> LeafParams {
        LeafParams {
            candidate_pool: self.candidate_pool.or(base.candidate_pool),
            m_query: self.m_query.unwrap_or(base.m_query),
            w_v: self.w_v.unwrap_or(base.w_v),
            w_m: self.w_m.unwrap_or(base.w_m),
            conformity_threshold: self.conformity_threshold.unwrap_or(base.conformity_threshold),
            exact_mode: self.exact_mode.unwrap_or(base.exact_mode),
        }
    }
}

/// Query-side fingerprint handed to every leaf.
#[derive(Debug, Clone, PartialEq)]
pub struct LeafQuery {
    pub code: BinaryCode,
    pub tokens: Vec<VisualToken>,
    /// Sorted and deduplicated.
    pub annotations: Vec<String>,
    /// Never returned; set for queries that come from an indexed document.
    pub exclude: Option<DocId>,
}

impl LeafQuery {
    pub fn new(code: BinaryCode, tokens: Vec<VisualToken>, annotations: &[String]) -> Self {
        Self { code, tokens, annotations: sorted_set(annotations), exclude: None }
    }
}

/// |A ∩ B| / |A ∪ B| over sorted, deduplicated slices; 0 when either is empty.
pub fn jaccard(a: &[String], b: &[String]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    let (mut i, mut j, mut inter) = (0, 0, 0usize);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                inter += 1;
                i += 1;
                j += 1;
            }
        }
    }
    inter as f64 / (a.len() + b.len() - inter) as f64
}

fn score(id: DocId, doc: &StoredDoc, matched: u32, query: &LeafQuery, params: &LeafParams) -> Option<SearchResult> {
    let h: u32 = doc.code.words().iter().zip(query.code.words()).map(|(x, y)| (x ^ y).count_ones()).sum();
    let visual_score = 1.0 - h as f64 / doc.code.nbits() as f64;
    let metadata_score = jaccard(&query.annotations, &doc.annotations);
    if metadata_score < params.conformity_threshold {
        return None;
    }
    Some(SearchResult {
        doc_id: id,
        score: params.w_v * visual_score + params.w_m * metadata_score,
        visual_score,
        metadata_score,
        matched_tokens: matched,
    })
}

pub(crate) fn top_k(mut results: Vec<SearchResult>, k: usize) -> Vec<SearchResult> {
    if k == 0 {
        return Vec::new();
    }
    if k < results.len() {
        results.select_nth_unstable_by(k - 1, SearchResult::rank_cmp);
        results.truncate(k);
    }
    results.sort_by(SearchResult::rank_cmp);
    results
}

fn matched_tokens(query: &[VisualToken], doc: &[VisualToken]) -> u32 {
    let mut q = query.to_vec();
    q.sort();
    q.dedup();
    q.iter().filter(|t| doc.contains(t)).count() as u32
}

fn check_code(shard: &TokenIndexShard, query: &LeafQuery) -> Result<()> {
    if !shard.is_empty() && shard.nbits() != query.code.nbits() {
        return Err(Error::invalid(format!(
            "query code has {} bits, shard {} holds {}-bit codes",
            query.code.nbits(),
            shard.shard_id(),
            shard.nbits()
        )));
    }
    Ok(())
}

/// Scores `candidates` against the query and keeps the top `k`.
pub fn rerank(
    shard: &TokenIndexShard,
    candidates: &[(DocId, u32)],
    query: &LeafQuery,
    params: &LeafParams,
    k: usize,
) -> Result<Vec<SearchResult>> {
    check_code(shard, query)?;
    let results = candidates
        .iter()
        .filter(|(id, _)| Some(*id) != query.exclude)
        .filter_map(|&(id, matched)| shard.doc(id).and_then(|doc| score(id, doc, matched, query, params)))
        .collect();
    Ok(top_k(results, k))
}

/// Token lookup then rerank, or a full scan of the shard in exact mode.
pub fn leaf_search(shard: &TokenIndexShard, query: &LeafQuery, k: usize, params: &LeafParams) -> Result<Vec<SearchResult>> {
    params.validate(k)?;
    if shard.is_empty() {
        return Ok(Vec::new());
    }
    check_code(shard, query)?;
    if params.exact_mode {
        let results = shard
            .docs()
            .filter(|(id, _)| Some(*id) != query.exclude)
            .filter_map(|(id, doc)| score(id, doc, matched_tokens(&query.tokens, &doc.tokens), query, params))
            .collect();
        return Ok(top_k(results, k));
    }
    let candidates = candidate_gen(shard, &query.tokens, params.pool(k), query.exclude);
    rerank(shard, &candidates, query, params, k)
}
