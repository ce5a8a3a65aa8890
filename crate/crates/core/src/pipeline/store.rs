use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use log::{debug, warn};
use serde::{Deserialize, Serialize};

use super::extract::{ExtractorRegistry, FeaturePayload};
use crate::codec::{read_records_file, write_record, write_records_file};
use crate::error::{Error, Result};
use crate::model::{fnv1a64, DocId, FeatureVersion, ImageRecord, VisualJoin};

const RECORDS_FILE: &str = "records.jsonl";
const FAILURES_FILE: &str = "failures.jsonl";
const MANIFEST_DIR: &str = "manifests";
const RESERVED: [&str; 2] = [MANIFEST_DIR, "joins"];

fn record_hash(r: &ImageRecord) -> u64 {
    fnv1a64(&serde_json::to_vec(r).expect("records always serialize"))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct JournalLine {
    doc_id: DocId,
    record_hash: String,
    epoch: u64,
    payload: FeaturePayload,
}

#[derive(Debug, Clone)]
struct Output {
    record_hash: u64,
    epoch: u64,
    payload: FeaturePayload,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct Failure {
    doc_id: DocId,
    feature: FeatureVersion,
    epoch: u64,
    error: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpsertOutcome {
    Inserted,
    Updated,
    Unchanged,
}

/// Image records plus every feature output computed for them. With a root
/// directory, outputs live in `<root>/<feature>/v<version>/<shard>.jnl`.
#[derive(Debug, Default)]
pub struct ImageStore {
    root: Option<PathBuf>,
    records: BTreeMap<DocId, ImageRecord>,
    hashes: BTreeMap<DocId, u64>,
    outputs: BTreeMap<(DocId, FeatureVersion), Output>,
    failures: Vec<Failure>,
}

impl ImageStore {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens (or creates) a store directory.
    pub fn open(root: &Path) -> Result<Self> {
        fs::create_dir_all(root)?;
        let mut store = Self { root: Some(root.to_owned()), ..Self::default() };
        let records_path = root.join(RECORDS_FILE);
        if records_path.exists() {
            for r in read_records_file::<ImageRecord>(&records_path)? {
                store.hashes.insert(r.doc_id, record_hash(&r));
                store.records.insert(r.doc_id, r);
            }
        }
        let failures_path = root.join(FAILURES_FILE);
        if failures_path.exists() {
            store.failures = read_records_file(&failures_path)?;
        }
        store.load_journals(root)?;
        Ok(store)
    }

    fn load_journals(&mut self, root: &Path) -> Result<()> {
        let mut feature_dirs: Vec<PathBuf> = fs::read_dir(root)?
            .filter_map(|e| e.ok())
            .filter(|e| e.path().is_dir())
            .filter(|e| !RESERVED.iter().any(|r| e.file_name() == *r))
            .map(|e| e.path())
            .collect();
        feature_dirs.sort();
        for dir in feature_dirs {
            let name = dir.file_name().unwrap().to_string_lossy().into_owned();
            let mut version_dirs: Vec<PathBuf> = fs::read_dir(&dir)?
                .filter_map(|e| e.ok())
                .map(|e| e.path())
                .filter(|p| p.is_dir())
                .collect();
            version_dirs.sort();
            for vdir in version_dirs {
                let vname = vdir.file_name().unwrap().to_string_lossy().into_owned();
                let version: u32 = vname
                    .strip_prefix('v')
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| Error::corrupt(format!("unexpected directory {}", vdir.display())))?;
                let feature = FeatureVersion::new(name.clone(), version);
                let mut journals: Vec<PathBuf> = fs::read_dir(&vdir)?
                    .filter_map(|e| e.ok())
                    .map(|e| e.path())
                    .filter(|p| p.extension().is_some_and(|x| x == "jnl"))
                    .collect();
                journals.sort();
                for path in journals {
                    for line in read_records_file::<JournalLine>(&path)? {
                        let hash = u64::from_str_radix(&line.record_hash, 16)
                            .map_err(|_| Error::corrupt(format!("{}: bad record hash", path.display())))?;
                        self.keep_output(line.doc_id, feature.clone(), Output {
                            record_hash: hash,
                            epoch: line.epoch,
                            payload: line.payload,
                        });
                    }
                }
            }
        }
        Ok(())
    }

    /// Outputs computed from the current record content win; later epochs
    /// win among those.
    fn keep_output(&mut self, doc: DocId, feature: FeatureVersion, out: Output) {
        let current = self.hashes.get(&doc).copied();
        let key = (doc, feature);
        let replace = match self.outputs.get(&key) {
            None => true,
            Some(old) => {
                let old_fresh = Some(old.record_hash) == current;
                let new_fresh = Some(out.record_hash) == current;
                new_fresh && (!old_fresh || out.epoch >= old.epoch)
            }
        };
        if replace {
            self.outputs.insert(key, out);
        }
    }

    pub fn root(&self) -> Option<&Path> {
        self.root.as_deref()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> impl Iterator<Item = &ImageRecord> {
        self.records.values()
    }

    pub fn get(&self, doc: DocId) -> Option<&ImageRecord> {
        self.records.get(&doc)
    }

    /// Embedding dimension of the stored records, if any.
    pub fn dim(&self) -> Option<usize> {
        self.records.values().next().map(|r| r.embedding.len())
    }

    /// Adds or replaces a record. Outputs computed from older content stop
    /// counting as present.
    pub fn upsert(&mut self, record: ImageRecord) -> Result<UpsertOutcome> {
        if let Some(dim) = self.dim() {
            if record.embedding.len() != dim {
                return Err(Error::invalid(format!(
                    "{}: embedding has {} dims, store holds {dim}",
                    record.source_key,
                    record.embedding.len()
                )));
            }
        }
        let hash = record_hash(&record);
        let outcome = match self.hashes.get(&record.doc_id) {
            None => UpsertOutcome::Inserted,
            Some(&h) if h == hash => return Ok(UpsertOutcome::Unchanged),
            Some(_) => UpsertOutcome::Updated,
        };
        self.hashes.insert(record.doc_id, hash);
        self.records.insert(record.doc_id, record);
        Ok(outcome)
    }

    /// Rewrites the record file, sorted by DocId.
    pub fn save_records(&self) -> Result<()> {
        if let Some(root) = &self.root {
            write_records_file(&root.join(RECORDS_FILE), self.records.values())?;
        }
        Ok(())
    }

    fn output(&self, doc: DocId, feature: &FeatureVersion) -> Option<&FeaturePayload> {
        let out = self.outputs.get(&(doc, feature.clone()))?;
        (Some(out.record_hash) == self.hashes.get(&doc).copied()).then_some(&out.payload)
    }

    fn is_flagged(&self, doc: DocId) -> bool {
        self.failures.iter().any(|f| f.doc_id == doc)
    }

    pub fn flagged(&self) -> BTreeSet<DocId> {
        self.failures.iter().map(|f| f.doc_id).collect()
    }
}

/// Pairs without an up-to-date output, ordered by DocId then feature name.
pub fn enumerate_pending(store: &ImageStore, registry: &ExtractorRegistry) -> Vec<(DocId, FeatureVersion)> {
    let features = registry.features();
    store
        .records
        .keys()
        .flat_map(|&doc| features.iter().map(move |f| (doc, f.clone())))
        .filter(|(doc, f)| store.output(*doc, f).is_none())
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpochManifest {
    pub epoch: u64,
    pub shard_count: usize,
    pub work_items: BTreeMap<String, u64>,
    pub extractions_performed: BTreeMap<String, u64>,
    pub failures: BTreeMap<String, u64>,
}

impl EpochManifest {
    pub fn total_extractions(&self) -> u64 {
        self.extractions_performed.values().sum()
    }

    pub fn total_failures(&self) -> u64 {
        self.failures.values().sum()
    }
}

struct ShardResult {
    outputs: Vec<(DocId, FeatureVersion, FeaturePayload)>,
    failures: Vec<Failure>,
}

/// Computes every pending output. Work is split by `DocId % shard_count` and
/// shards run on their own threads. A failing extraction flags its record;
/// the epoch carries on and the next epoch retries it.
pub fn run_epoch(
    store: &mut ImageStore,
    registry: &ExtractorRegistry,
    shard_count: usize,
    epoch: u64,
) -> Result<EpochManifest> {
    if shard_count == 0 {
        return Err(Error::invalid("shard_count must be at least 1"));
    }
    let pending = enumerate_pending(store, registry);
    let mut manifest = EpochManifest { epoch, shard_count, ..Default::default() };
    for f in registry.features() {
        manifest.work_items.insert(f.name.clone(), 0);
        manifest.extractions_performed.insert(f.name.clone(), 0);
        manifest.failures.insert(f.name, 0);
    }
    let mut shards: Vec<Vec<(DocId, FeatureVersion)>> = vec![Vec::new(); shard_count];
    for (doc, f) in pending {
        *manifest.work_items.get_mut(&f.name).unwrap() += 1;
        shards[doc.shard(shard_count)].push((doc, f));
    }

    let shared: &ImageStore = store;
    let results: Vec<Result<ShardResult>> = std::thread::scope(|scope| {
        let handles: Vec<_> = shards
            .into_iter()
            .enumerate()
            .map(|(shard, items)| scope.spawn(move || run_shard(shared, registry, shard, items, epoch)))
            .collect();
        handles.into_iter().map(|h| h.join().expect("shard worker panicked")).collect()
    });

    let mut failures = Vec::new();
    let done: BTreeSet<DocId>;
    {
        let mut touched = BTreeSet::new();
        for r in results {
            let r = r?;
            for (doc, f, payload) in r.outputs {
                *manifest.extractions_performed.get_mut(&f.name).unwrap() += 1;
                touched.insert(doc);
                let hash = store.hashes[&doc];
                store.outputs.insert((doc, f), Output { record_hash: hash, epoch, payload });
            }
            for fail in r.failures {
                *manifest.failures.get_mut(&fail.feature.name).unwrap() += 1;
                touched.insert(fail.doc_id);
                failures.push(fail);
            }
        }
        done = touched;
    }
    // Records retried this epoch drop their old flags.
    store.failures.retain(|f| !done.contains(&f.doc_id) && store.records.contains_key(&f.doc_id));
    store.failures.extend(failures);
    store.failures.sort_by(|a, b| (a.doc_id, &a.feature).cmp(&(b.doc_id, &b.feature)));

    if let Some(root) = &store.root {
        write_records_file(&root.join(FAILURES_FILE), store.failures.iter())?;
        let dir = root.join(MANIFEST_DIR);
        fs::create_dir_all(&dir)?;
        fs::write(dir.join(format!("epoch-{epoch}.json")), serde_json::to_vec_pretty(&manifest)?)?;
    }
    debug!(
        "epoch {epoch}: {} extractions, {} failures",
        manifest.total_extractions(),
        manifest.total_failures()
    );
    Ok(manifest)
}

fn run_shard(
    store: &ImageStore,
    registry: &ExtractorRegistry,
    shard: usize,
    items: Vec<(DocId, FeatureVersion)>,
    epoch: u64,
) -> Result<ShardResult> {
    let mut result = ShardResult { outputs: Vec::new(), failures: Vec::new() };
    for (doc, feature) in items {
        let record = &store.records[&doc];
        match registry.run(&feature.name, record).expect("pending features are registered") {
            Ok(payload) => result.outputs.push((doc, feature, payload)),
            Err(e) => {
                warn!("{doc}: {feature} failed: {e}");
                result.failures.push(Failure { doc_id: doc, feature, epoch, error: e.to_string() });
            }
        }
    }
    if let Some(root) = &store.root {
        let mut writers: BTreeMap<FeatureVersion, BufWriter<fs::File>> = BTreeMap::new();
        for (doc, feature, payload) in &result.outputs {
            if !writers.contains_key(feature) {
                let dir = root.join(&feature.name).join(format!("v{}", feature.version));
                fs::create_dir_all(&dir)?;
                let file = OpenOptions::new().create(true).append(true).open(dir.join(format!("{shard}.jnl")))?;
                writers.insert(feature.clone(), BufWriter::new(file));
            }
            let line = JournalLine {
                doc_id: *doc,
                record_hash: format!("{:016x}", store.hashes[doc]),
                epoch,
                payload: payload.clone(),
            };
            write_record(writers.get_mut(feature).unwrap(), &line)?;
        }
        for w in writers.values_mut() {
            w.flush()?;
        }
    }
    Ok(result)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exclusion {
    pub doc_id: DocId,
    pub missing: Vec<FeatureVersion>,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JoinOutput {
    pub joins: Vec<VisualJoin>,
    pub excluded: Vec<Exclusion>,
}

/// Assembles one VisualJoin per record from the current feature versions,
/// ascending by DocId. Records missing any feature are excluded.
pub fn join(store: &ImageStore, registry: &ExtractorRegistry, epoch: u64) -> Result<JoinOutput> {
    let features = registry.features();
    let mut joins = Vec::with_capacity(store.len());
    let mut excluded = Vec::new();
    for (&doc, record) in &store.records {
        let missing: Vec<FeatureVersion> =
            features.iter().filter(|f| store.output(doc, f).is_none()).cloned().collect();
        if !missing.is_empty() {
            excluded.push(Exclusion { doc_id: doc, missing, flagged: store.is_flagged(doc) });
            continue;
        }
        let mut code = None;
        let mut color_signature = None;
        let mut detected_objects = Vec::new();
        for f in &features {
            match store.output(doc, f).unwrap() {
                FeaturePayload::Embedding { binary_code, embedding } => {
                    code = Some((binary_code.clone(), embedding.clone()))
                }
                FeaturePayload::Color { signature } => color_signature = signature.clone(),
                FeaturePayload::Objects { objects } => detected_objects = objects.clone(),
            }
        }
        let (binary_code, embedding) = code
            .ok_or_else(|| Error::invalid("no registered feature produces a binary code"))?;
        joins.push(VisualJoin {
            doc_id: doc,
            annotations: record.annotations.clone(),
            binary_code,
            embedding,
            color_signature,
            detected_objects,
            feature_versions: features.clone(),
            epoch,
        });
    }
    Ok(JoinOutput { joins, excluded })
}
