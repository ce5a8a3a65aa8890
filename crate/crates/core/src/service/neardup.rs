use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::root::{RootRanker, SearchRequest};
use crate::error::{Error, Result};
use crate::index::LeafParamsOverride;
use crate::model::{DocId, SearchResult};

const DISTANCE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NearDupParams {
    pub min_token_match_frac: f64,
    pub max_norm_hamming: f64,
}

impl Default for NearDupParams {
    fn default() -> Self {
        Self { min_token_match_frac: 0.5, max_norm_hamming: 0.1 }
    }
}

impl NearDupParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("min_token_match_frac", self.min_token_match_frac), ("max_norm_hamming", self.max_norm_hamming)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::invalid(format!("{name} must be in [0, 1], got {v}")));
            }
        }
        Ok(())
    }
}

/// Root search results that share enough tokens and sit within the
/// normalized Hamming radius.
pub fn near_dup(ranker: &RootRanker, request: &SearchRequest, nd: &NearDupParams) -> Result<Vec<SearchResult>> {
    nd.validate()?;
    let response = ranker.search(request)?;
    let min_tokens = (nd.min_token_match_frac * response.params_used.m_query as f64).ceil() as u32;
    Ok(response
        .results
        .into_iter()
        .filter(|r| r.matched_tokens >= min_tokens && 1.0 - r.visual_score <= nd.max_norm_hamming + DISTANCE_EPS)
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SourceTag {
    NeardupBorrowed,
    Visual,
}

impl SourceTag {
    pub fn as_str(self) -> &'static str {
        match self {
            SourceTag::NeardupBorrowed => "neardup-borrowed",
            SourceTag::Visual => "visual",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelatedItem {
    pub doc_id: DocId,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelatedPins {
    pub results: Vec<RelatedItem>,
    pub source_tag: SourceTag,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelatedPinsConfig {
    pub min_recs: usize,
    /// Applied to the visual fallback.
    pub conformity_threshold: f64,
    pub near_dup: NearDupParams,
}

impl Default for RelatedPinsConfig {
    fn default() -> Self {
        Self { min_recs: 5, conformity_threshold: 0.1, near_dup: NearDupParams::default() }
    }
}

/// Borrows the recommendations of the best near-duplicate that has at least
/// `min_recs` of them; otherwise falls back to visual search.
pub fn related_pins(
    ranker: &RootRanker,
    doc_id: DocId,
    k: usize,
    existing_recs: &BTreeMap<DocId, Vec<DocId>>,
    config: &RelatedPinsConfig,
) -> Result<RelatedPins> {
    if !ranker.contains(doc_id) {
        return Err(Error::NotFound(format!("doc {doc_id} is not indexed")));
    }
    let dups = near_dup(ranker, &SearchRequest::by_doc(doc_id, k), &config.near_dup)?;
    for dup in &dups {
        if let Some(recs) = existing_recs.get(&dup.doc_id).filter(|r| r.len() >= config.min_recs) {
            let results = recs
                .iter()
                .filter(|&&r| r != doc_id)
                .take(k)
                .map(|&doc_id| RelatedItem { doc_id, score: None })
                .collect();
            return Ok(RelatedPins { results, source_tag: SourceTag::NeardupBorrowed });
        }
    }
    let request = SearchRequest::by_doc(doc_id, k).with_params(LeafParamsOverride {
        conformity_threshold: Some(config.conformity_threshold),
        ..Default::default()
    });
    let results = ranker
        .search(&request)?
        .results
        .into_iter()
        .map(|r| RelatedItem { doc_id: r.doc_id, score: Some(r.score) })
        .collect();
    Ok(RelatedPins { results, source_tag: SourceTag::Visual })
}
