use std::sync::mpsc;
use std::sync::Arc;
use std::time::{Duration, Instant};

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::binarize;
use crate::index::{leaf_search, top_k, Index, LeafParams, LeafParamsOverride, LeafQuery, TokenIndexShard};
use crate::model::{normalize_annotations, DocId, SearchResult};

pub const DEFAULT_DEADLINE: Duration = Duration::from_millis(200);

/// Either `doc_id` (fingerprint looked up in the index) or `embedding` plus
/// optional `annotations` (fingerprint computed at query time).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchRequest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub doc_id: Option<DocId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub annotations: Vec<String>,
    pub k: usize,
    #[serde(default)]
    pub params: LeafParamsOverride,
}

impl SearchRequest {
    pub fn by_doc(doc_id: DocId, k: usize) -> Self {
        Self { doc_id: Some(doc_id), embedding: None, annotations: vec![], k, params: Default::default() }
    }

    pub fn by_embedding(embedding: Vec<f64>, annotations: Vec<String>, k: usize) -> Self {
        Self { doc_id: None, embedding: Some(embedding), annotations, k, params: Default::default() }
    }

    pub fn with_params(mut self, params: LeafParamsOverride) -> Self {
        self.params = params;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::invalid("k must be at least 1"));
        }
        match (&self.doc_id, &self.embedding) {
            (Some(_), None) if self.annotations.is_empty() => Ok(()),
            (Some(_), None) => Err(Error::invalid("annotations only apply to embedding queries")),
            (None, Some(_)) => Ok(()),
            _ => Err(Error::invalid("exactly one of doc_id or embedding is required")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResponse {
    pub results: Vec<SearchResult>,
    pub partial: bool,
    pub params_used: LeafParams,
}

/// Scatter-gather over every shard of an [`Index`].
#[derive(Debug, Clone)]
pub struct RootRanker {
    index: Arc<Index>,
    defaults: LeafParams,
    deadline: Option<Duration>,
    injected_delay: Option<(usize, Duration)>,
}

impl RootRanker {
    pub fn new(index: Arc<Index>) -> Self {
        Self { index, defaults: LeafParams::default(), deadline: None, injected_delay: None }
    }

    pub fn with_defaults(mut self, defaults: LeafParams) -> Self {
        self.defaults = defaults;
        self
    }

    /// Leaves that have not answered by the deadline are dropped and the
    /// response is flagged partial.
    pub fn with_deadline(mut self, deadline: Option<Duration>) -> Self {
        self.deadline = deadline;
        self
    }

    #[doc(hidden)]
    pub fn with_injected_delay(mut self, shard: usize, delay: Duration) -> Self {
        self.injected_delay = Some((shard, delay));
        self
    }

    pub fn index(&self) -> &Arc<Index> {
        &self.index
    }

    pub fn defaults(&self) -> &LeafParams {
        &self.defaults
    }

    pub fn shard_count(&self) -> usize {
        self.index.shards.len()
    }

    fn locate(&self, doc: DocId) -> Option<&TokenIndexShard> {
        let shards = &self.index.shards;
        if shards.is_empty() {
            return None;
        }
        let shard = &shards[doc.shard(shards.len())];
        shard.doc(doc).is_some().then_some(&**shard)
    }

    pub fn contains(&self, doc: DocId) -> bool {
        self.locate(doc).is_some()
    }

    /// The query-side fingerprint for `request` and the effective params.
    pub fn fingerprint(&self, request: &SearchRequest) -> Result<(LeafQuery, LeafParams)> {
        request.validate()?;
        let mut params = request.params.apply(self.defaults);
        params.validate(request.k)?;
        params.candidate_pool = Some(params.pool(request.k));
        let query = match (&request.doc_id, &request.embedding) {
            (Some(id), _) => {
                let shard = self.locate(*id).ok_or_else(|| Error::NotFound(format!("doc {id} is not indexed")))?;
                let doc = shard.doc(*id).unwrap();
                let m = params.m_query.min(doc.tokens.len());
                let mut q = LeafQuery::new(doc.code.clone(), doc.tokens[..m].to_vec(), &doc.annotations);
                q.exclude = Some(*id);
                q
            }
            (None, Some(embedding)) => {
                let code = binarize(embedding, &self.index.thresholds)?;
                let m = params.m_query.min(self.index.codebook.k());
                let tokens = self.index.codebook.quantize(embedding, m)?;
                LeafQuery::new(code, tokens, &normalize_annotations(&request.annotations))
            }
            (None, None) => unreachable!("validated above"),
        };
        Ok((query, params))
    }

    pub fn search(&self, request: &SearchRequest) -> Result<SearchResponse> {
        let (query, params) = self.fingerprint(request)?;
        let (results, partial) = self.fan_out(&query, request.k, &params)?;
        Ok(SearchResponse { results, partial, params_used: params })
    }

    /// Runs `leaf_search` on every shard and merges the leaf top-k lists.
    pub fn fan_out(&self, query: &LeafQuery, k: usize, params: &LeafParams) -> Result<(Vec<SearchResult>, bool)> {
        let shards = &self.index.shards;
        let mut merged = Vec::new();
        let mut partial = false;
        match self.deadline {
            None => {
                let outputs: Vec<Result<Vec<SearchResult>>> = std::thread::scope(|scope| {
                    let handles: Vec<_> = shards
                        .iter()
                        .enumerate()
                        .map(|(i, shard)| scope.spawn(move || self.leaf(i, shard, query, k, params)))
                        .collect();
                    handles.into_iter().map(|h| h.join().expect("leaf worker panicked")).collect()
                });
                for out in outputs {
                    merged.extend(out?);
                }
            }
            Some(deadline) => {
                let until = Instant::now() + deadline;
                let (tx, rx) = mpsc::channel();
                for (i, shard) in shards.iter().enumerate() {
                    let (tx, shard, query, params, me) = (tx.clone(), Arc::clone(shard), query.clone(), *params, self.clone());
                    std::thread::spawn(move || {
                        let _ = tx.send(me.leaf(i, &shard, &query, k, &params));
                    });
                }
                drop(tx);
                let mut answered = 0;
                while answered < shards.len() {
                    let left = until.saturating_duration_since(Instant::now());
                    match rx.recv_timeout(left) {
                        Ok(out) => {
                            merged.extend(out?);
                            answered += 1;
                        }
                        Err(_) => {
                            warn!("{} of {} leaves missed the {deadline:?} deadline", shards.len() - answered, shards.len());
                            partial = true;
                            break;
                        }
                    }
                }
            }
        }
        Ok((top_k(merged, k), partial))
    }

    fn leaf(&self, i: usize, shard: &TokenIndexShard, query: &LeafQuery, k: usize, params: &LeafParams) -> Result<Vec<SearchResult>> {
        if let Some((slow, delay)) = self.injected_delay {
            if slow == i {
                std::thread::sleep(delay);
            }
        }
        leaf_search(shard, query, k, params)
    }
}
