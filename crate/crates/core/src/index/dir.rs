//! Index directories: `manifest.json`, `codebook.pqcb`, `thresholds.json`,
//! one `shard-NNNN.pqix` per shard and an optional `recs.jsonl` of existing
//! recommendations.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::file::{decode_shard, encode_shard};
use super::shard::{build_shards, TokenIndexShard};
use crate::codec::{read_records_file, write_records_file};
use crate::error::{Error, Result};
use crate::features::{BinarizationThresholds, Codebook};
use crate::model::{fnv1a64, DocId, VisualJoin};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CODEBOOK_FILE: &str = "codebook.pqcb";
pub const THRESHOLDS_FILE: &str = "thresholds.json";
pub const RECS_FILE: &str = "recs.jsonl";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShardEntry {
    pub file: String,
    pub doc_count: u64,
    pub checksum: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexManifest {
    pub epoch: u64,
    pub shard_count: usize,
    pub m_index: usize,
    pub nbits: usize,
    pub doc_count: u64,
    pub codebook_checksum: String,
    pub shards: Vec<ShardEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecsLine {
    pub doc_id: DocId,
    pub recs: Vec<DocId>,
}

/// Everything a ranker needs: shards, the codebook and thresholds for
/// online fingerprints, and the existing-recommendations table.
#[derive(Debug, Clone)]
pub struct Index {
    pub epoch: u64,
    pub codebook: Arc<Codebook>,
    pub thresholds: Arc<BinarizationThresholds>,
    pub shards: Vec<Arc<TokenIndexShard>>,
    pub existing_recs: Arc<BTreeMap<DocId, Vec<DocId>>>,
}

fn hex(x: u64) -> String {
    format!("{x:016x}")
}

impl Index {
    pub fn build(
        joins: &[VisualJoin],
        codebook: Codebook,
        thresholds: BinarizationThresholds,
        shard_count: usize,
        m_index: usize,
        epoch: u64,
    ) -> Result<Self> {
        if thresholds.dim() != codebook.dim() {
            return Err(Error::invalid(format!(
                "thresholds have {} dims, codebook has {}",
                thresholds.dim(),
                codebook.dim()
            )));
        }
        let shards = build_shards(joins, &codebook, shard_count, m_index)?;
        Ok(Self {
            epoch,
            codebook: Arc::new(codebook),
            thresholds: Arc::new(thresholds),
            shards: shards.into_iter().map(Arc::new).collect(),
            existing_recs: Arc::new(BTreeMap::new()),
        })
    }

    pub fn with_recs(mut self, recs: BTreeMap<DocId, Vec<DocId>>) -> Self {
        self.existing_recs = Arc::new(recs);
        self
    }

    pub fn doc_count(&self) -> usize {
        self.shards.iter().map(|s| s.doc_count()).sum()
    }

    pub fn m_index(&self) -> usize {
        self.shards.first().map_or(0, |s| s.m_index())
    }

    pub fn nbits(&self) -> usize {
        self.shards.iter().map(|s| s.nbits()).max().unwrap_or(0)
    }

    pub fn save(&self, dir: &Path) -> Result<IndexManifest> {
        fs::create_dir_all(dir)?;
        self.codebook.save(&dir.join(CODEBOOK_FILE))?;
        fs::write(dir.join(THRESHOLDS_FILE), serde_json::to_vec(&*self.thresholds)?)?;
        let mut entries = Vec::new();
        for shard in &self.shards {
            let file = format!("shard-{:04}.pqix", shard.shard_id());
            let bytes = encode_shard(shard);
            entries.push(ShardEntry { file: file.clone(), doc_count: shard.doc_count() as u64, checksum: hex(fnv1a64(&bytes)) });
            fs::write(dir.join(file), bytes)?;
        }
        let recs_path = dir.join(RECS_FILE);
        if self.existing_recs.is_empty() {
            if recs_path.exists() {
                fs::remove_file(recs_path)?;
            }
        } else {
            let lines: Vec<RecsLine> = self
                .existing_recs
                .iter()
                .map(|(&doc_id, recs)| RecsLine { doc_id, recs: recs.clone() })
                .collect();
            write_records_file(&recs_path, &lines)?;
        }
        let manifest = IndexManifest {
            epoch: self.epoch,
            shard_count: self.shards.len(),
            m_index: self.m_index(),
            nbits: self.nbits(),
            doc_count: self.doc_count() as u64,
            codebook_checksum: hex(self.codebook.checksum()),
            shards: entries,
        };
        fs::write(dir.join(MANIFEST_FILE), serde_json::to_vec_pretty(&manifest)?)?;
        Ok(manifest)
    }

    /// Loads and cross-checks every file; any mismatch is [`Error::Corrupt`].
    pub fn load(dir: &Path) -> Result<Self> {
        let read = |name: &str| {
            fs::read(dir.join(name)).map_err(|e| Error::Config(format!("{}: {e}", dir.join(name).display())))
        };
        let manifest: IndexManifest = serde_json::from_slice(&read(MANIFEST_FILE)?)
            .map_err(|e| Error::corrupt(format!("{MANIFEST_FILE}: {e}")))?;
        let codebook = Codebook::from_bytes(&read(CODEBOOK_FILE)?)?;
        if hex(codebook.checksum()) != manifest.codebook_checksum {
            return Err(Error::corrupt("codebook does not match manifest checksum"));
        }
        let thresholds: BinarizationThresholds = serde_json::from_slice(&read(THRESHOLDS_FILE)?)
            .map_err(|e| Error::corrupt(format!("{THRESHOLDS_FILE}: {e}")))?;
        if thresholds.dim() != codebook.dim() {
            return Err(Error::corrupt("thresholds and codebook dimensions differ"));
        }
        if manifest.shards.len() != manifest.shard_count {
            return Err(Error::corrupt("manifest shard list does not match shard_count"));
        }
        let mut shards = Vec::new();
        for (i, entry) in manifest.shards.iter().enumerate() {
            let bytes = read(&entry.file)?;
            if hex(fnv1a64(&bytes)) != entry.checksum {
                return Err(Error::corrupt(format!("{}: checksum does not match manifest", entry.file)));
            }
            let shard = decode_shard(&bytes, Some(codebook.checksum()))
                .map_err(|e| Error::corrupt(format!("{}: {e}", entry.file)))?;
            if shard.shard_id() != i || shard.doc_count() as u64 != entry.doc_count {
                return Err(Error::corrupt(format!("{}: header disagrees with manifest", entry.file)));
            }
            if shard.docs().any(|(id, _)| id.shard(manifest.shard_count) != i) {
                return Err(Error::corrupt(format!("{}: holds documents of another shard", entry.file)));
            }
            shards.push(Arc::new(shard));
        }
        let recs_path = dir.join(RECS_FILE);
        let existing_recs = if recs_path.exists() { load_recs(&recs_path)? } else { BTreeMap::new() };
        Ok(Self {
            epoch: manifest.epoch,
            codebook: Arc::new(codebook),
            thresholds: Arc::new(thresholds),
            shards,
            existing_recs: Arc::new(existing_recs),
        })
    }
}

pub fn load_recs(path: &Path) -> Result<BTreeMap<DocId, Vec<DocId>>> {
    let mut out = BTreeMap::new();
    for line in read_records_file::<RecsLine>(path)? {
        out.insert(line.doc_id, line.recs);
    }
    Ok(out)
}
