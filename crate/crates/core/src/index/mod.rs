//! Sharded token index: posting lists for candidate generation, an
//! in-memory feature store for exact reranking, and the leaf ranker.

mod dir;
mod file;
mod leaf;
mod shard;

pub use dir::{load_recs, Index, IndexManifest, RecsLine, ShardEntry, CODEBOOK_FILE, MANIFEST_FILE, RECS_FILE, THRESHOLDS_FILE};
pub use file::{decode_shard, encode_shard};
pub use leaf::{
    jaccard, leaf_search, rerank, LeafParams, LeafParamsOverride, LeafQuery, DEFAULT_M_QUERY, DEFAULT_W_METADATA,
    DEFAULT_W_VISUAL,
};
pub(crate) use leaf::top_k;
pub use shard::{build_shards, candidate_gen, StoredDoc, TokenIndexShard};
