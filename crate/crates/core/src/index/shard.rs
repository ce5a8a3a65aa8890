use std::collections::{BTreeMap, HashMap};

use crate::error::{Error, Result};
use crate::features::{Codebook, VisualToken};
use crate::model::{BinaryCode, ColorSignature, DocId, VisualJoin};

/// What a shard keeps in memory per document for reranking.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredDoc {
    pub code: BinaryCode,
    /// Sorted and deduplicated.
    pub annotations: Vec<String>,
    pub color_signature: Option<ColorSignature>,
    /// Index-time tokens, nearest first.
    pub tokens: Vec<VisualToken>,
}

/// Posting lists (token → ascending DocIds) plus the per-document feature
/// store for one shard.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenIndexShard {
    pub(crate) shard_id: usize,
    pub(crate) nbits: usize,
    pub(crate) m_index: usize,
    pub(crate) codebook_checksum: u64,
    pub(crate) postings: BTreeMap<VisualToken, Vec<DocId>>,
    pub(crate) feature_store: BTreeMap<DocId, StoredDoc>,
}

impl TokenIndexShard {
    pub fn empty(shard_id: usize, nbits: usize, m_index: usize, codebook_checksum: u64) -> Self {
        Self {
            shard_id,
            nbits,
            m_index,
            codebook_checksum,
            postings: BTreeMap::new(),
            feature_store: BTreeMap::new(),
        }
    }

    pub fn shard_id(&self) -> usize {
        self.shard_id
    }

    pub fn nbits(&self) -> usize {
        self.nbits
    }

    pub fn m_index(&self) -> usize {
        self.m_index
    }

    pub fn codebook_checksum(&self) -> u64 {
        self.codebook_checksum
    }

    pub fn doc_count(&self) -> usize {
        self.feature_store.len()
    }

    pub fn is_empty(&self) -> bool {
        self.feature_store.is_empty()
    }

    pub fn postings(&self) -> &BTreeMap<VisualToken, Vec<DocId>> {
        &self.postings
    }

    pub fn posting(&self, token: VisualToken) -> &[DocId] {
        self.postings.get(&token).map_or(&[], Vec::as_slice)
    }

    pub fn doc(&self, id: DocId) -> Option<&StoredDoc> {
        self.feature_store.get(&id)
    }

    pub fn docs(&self) -> impl Iterator<Item = (DocId, &StoredDoc)> {
        self.feature_store.iter().map(|(&id, d)| (id, d))
    }

    pub(crate) fn insert(&mut self, id: DocId, doc: StoredDoc) {
        for &t in &doc.tokens {
            let list = self.postings.entry(t).or_default();
            debug_assert!(list.last().is_none_or(|&last| last < id));
            list.push(id);
        }
        self.feature_store.insert(id, doc);
    }
}

pub(crate) fn sorted_set(annotations: &[String]) -> Vec<String> {
    let mut v = annotations.to_vec();
    v.sort();
    v.dedup();
    v
}

/// Partitions visualjoins by `doc_id % shard_count` and indexes each under
/// its `m_index` nearest codewords.
pub fn build_shards<'a, I>(
    visualjoins: I,
    codebook: &Codebook,
    shard_count: usize,
    m_index: usize,
) -> Result<Vec<TokenIndexShard>>
where
    I: IntoIterator<Item = &'a VisualJoin>,
{
    if shard_count == 0 {
        return Err(Error::invalid("shard_count must be at least 1"));
    }
    if m_index == 0 || m_index > codebook.k() {
        return Err(Error::invalid(format!("m_index must be in 1..={}, got {m_index}", codebook.k())));
    }
    let checksum = codebook.checksum();
    let mut shards: Vec<TokenIndexShard> = Vec::new();
    let mut prev: Option<DocId> = None;
    let mut nbits = None;
    for vj in visualjoins {
        match prev {
            Some(p) if p == vj.doc_id => {
                return Err(Error::invalid(format!("duplicate doc_id {}", vj.doc_id)))
            }
            Some(p) if p > vj.doc_id => {
                return Err(Error::invalid(format!("visualjoins not sorted: {} after {p}", vj.doc_id)))
            }
            _ => {}
        }
        prev = Some(vj.doc_id);
        let n = *nbits.get_or_insert(vj.binary_code.nbits());
        if vj.binary_code.nbits() != n {
            return Err(Error::invalid(format!(
                "{}: {}-bit code in a {n}-bit index",
                vj.doc_id,
                vj.binary_code.nbits()
            )));
        }
        if shards.is_empty() {
            shards = (0..shard_count).map(|s| TokenIndexShard::empty(s, n, m_index, checksum)).collect();
        }
        let tokens = codebook.quantize(&vj.embedding, m_index)?;
        shards[vj.doc_id.shard(shard_count)].insert(vj.doc_id, StoredDoc {
            code: vj.binary_code.clone(),
            annotations: sorted_set(&vj.annotations),
            color_signature: vj.color_signature.clone(),
            tokens,
        });
    }
    if shards.is_empty() {
        shards = (0..shard_count).map(|s| TokenIndexShard::empty(s, 0, m_index, checksum)).collect();
    }
    Ok(shards)
}

/// Documents sharing at least one query token, by matched count descending
/// then DocId ascending, truncated to `pool`.
pub fn candidate_gen(
    shard: &TokenIndexShard,
    query_tokens: &[VisualToken],
    pool: usize,
    exclude: Option<DocId>,
) -> Vec<(DocId, u32)> {
    let mut tokens = query_tokens.to_vec();
    tokens.sort();
    tokens.dedup();
    let mut counts: HashMap<DocId, u32> = HashMap::new();
    for t in tokens {
        for &id in shard.posting(t) {
            *counts.entry(id).or_default() += 1;
        }
    }
    if let Some(x) = exclude {
        counts.remove(&x);
    }
    let mut out: Vec<(DocId, u32)> = counts.into_iter().collect();
    let order = |a: &(DocId, u32), b: &(DocId, u32)| b.1.cmp(&a.1).then(a.0.cmp(&b.0));
    if pool < out.len() {
        if pool == 0 {
            return Vec::new();
        }
        out.select_nth_unstable_by(pool - 1, order);
        out.truncate(pool);
    }
    out.sort_by(order);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::train_codebook;

    fn join(i: u64, emb: Vec<f64>, tags: &[&str]) -> VisualJoin {
        VisualJoin {
            doc_id: DocId(i),
            annotations: tags.iter().map(|s| s.to_string()).collect(),
            binary_code: BinaryCode::from_bits(emb.iter().map(|&x| x > 0.0)),
            embedding: emb,
            color_signature: None,
            detected_objects: vec![],
            feature_versions: vec![],
            epoch: 1,
        }
    }

    fn codebook() -> Codebook {
        let samples: Vec<Vec<f64>> = (0..8).map(|i| vec![i as f64, (i * i) as f64 % 5.0]).collect();
        train_codebook(&samples, 6, 1).unwrap()
    }

    #[test]
    fn one_record_in_m_lists() {
        let cb = codebook();
        let shards = build_shards(&[join(3, vec![1.0, 2.0], &["a"])], &cb, 1, 4).unwrap();
        let hits: usize = shards[0].postings().values().map(|l| l.iter().filter(|&&d| d == DocId(3)).count()).sum();
        assert_eq!(hits, 4);
        assert_eq!(shards[0].doc_count(), 1);
    }

    #[test]
    fn partition_law() {
        let cb = codebook();
        let joins: Vec<VisualJoin> = (0..40).map(|i| join(i * 7 + 1, vec![i as f64 % 6.0, 1.0], &[])).collect();
        for p in [1, 2, 3, 5] {
            let shards = build_shards(&joins, &cb, p, 2).unwrap();
            let mut all: Vec<DocId> = shards.iter().flat_map(|s| s.docs().map(|(id, _)| id)).collect();
            all.sort();
            assert_eq!(all, joins.iter().map(|j| j.doc_id).collect::<Vec<_>>());
            for s in &shards {
                assert!(s.docs().all(|(id, _)| id.shard(p) == s.shard_id()));
                for list in s.postings().values() {
                    assert!(list.windows(2).all(|w| w[0] < w[1]));
                    assert!(list.iter().all(|id| s.doc(*id).is_some()));
                }
            }
        }
    }

    #[test]
    fn rejects_bad_input() {
        let cb = codebook();
        let a = join(2, vec![0.0, 1.0], &[]);
        let b = join(1, vec![0.0, 1.0], &[]);
        assert!(matches!(build_shards([&a, &b], &cb, 1, 2), Err(Error::InvalidArgument(_))));
        assert!(matches!(build_shards([&a, &a], &cb, 1, 2), Err(Error::InvalidArgument(_))));
        assert!(build_shards([&a], &cb, 0, 2).is_err());
        assert!(build_shards([&a], &cb, 1, 7).is_err());
    }

    fn manual_shard() -> TokenIndexShard {
        let mut s = TokenIndexShard::empty(0, 8, 2, 0);
        let doc = |t: &[u32]| StoredDoc {
            code: BinaryCode::zeros(8),
            annotations: vec![],
            color_signature: None,
            tokens: t.iter().map(|&x| VisualToken(x)).collect(),
        };
        s.insert(DocId(1), doc(&[5]));
        s.insert(DocId(2), doc(&[1, 2]));
        s.insert(DocId(3), doc(&[2, 9]));
        s
    }

    #[test]
    fn candidate_order() {
        let s = manual_shard();
        let q = [VisualToken(1), VisualToken(2)];
        assert_eq!(candidate_gen(&s, &q, 10, None), vec![(DocId(2), 2), (DocId(3), 1)]);
        assert_eq!(candidate_gen(&s, &q, 1, None), vec![(DocId(2), 2)]);
        assert_eq!(candidate_gen(&s, &q, 10, Some(DocId(2))), vec![(DocId(3), 1)]);
        assert!(candidate_gen(&s, &[VisualToken(40)], 10, None).is_empty());
        let r = candidate_gen(&s, &[VisualToken(9), VisualToken(5)], 10, None);
        assert_eq!(r, vec![(DocId(1), 1), (DocId(3), 1)]);
    }
}
