use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::detection::{two_step_detect, DetectorBank, RuleSet};
use crate::error::Result;
use crate::features::{binarize, color_signature, BinarizationThresholds};
use crate::model::{BinaryCode, ColorSignature, DetectedObject, FeatureVersion, ImageRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeaturePayload {
    Embedding { binary_code: BinaryCode, embedding: Vec<f64> },
    Color { signature: Option<ColorSignature> },
    Objects { objects: Vec<DetectedObject> },
}

pub trait Extractor: Send + Sync {
    fn feature(&self) -> FeatureVersion;
    fn extract(&self, record: &ImageRecord) -> Result<FeaturePayload>;
}

struct Registered {
    extractor: Arc<dyn Extractor>,
    feature: FeatureVersion,
    invocations: AtomicU64,
}

/// One extractor per feature name; registering a name again replaces it.
#[derive(Default)]
pub struct ExtractorRegistry {
    entries: BTreeMap<String, Registered>,
}

impl ExtractorRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, extractor: Arc<dyn Extractor>) {
        let feature = extractor.feature();
        self.entries.insert(
            feature.name.clone(),
            Registered { extractor, feature, invocations: AtomicU64::new(0) },
        );
    }

    /// Current versions, ordered by feature name.
    pub fn features(&self) -> Vec<FeatureVersion> {
        self.entries.values().map(|r| r.feature.clone()).collect()
    }

    pub fn is_current(&self, feature: &FeatureVersion) -> bool {
        self.entries.get(&feature.name).is_some_and(|r| r.feature == *feature)
    }

    /// Extractor calls made through this registry, per feature name.
    pub fn invocations(&self) -> BTreeMap<String, u64> {
        self.entries
            .iter()
            .map(|(n, r)| (n.clone(), r.invocations.load(Ordering::Relaxed)))
            .collect()
    }

    pub(crate) fn run(&self, name: &str, record: &ImageRecord) -> Option<Result<FeaturePayload>> {
        let entry = self.entries.get(name)?;
        entry.invocations.fetch_add(1, Ordering::Relaxed);
        Some(entry.extractor.extract(record))
    }
}

pub struct EmbeddingExtractor {
    pub version: u32,
    pub thresholds: BinarizationThresholds,
}

impl Extractor for EmbeddingExtractor {
    fn feature(&self) -> FeatureVersion {
        FeatureVersion::new("embedding", self.version)
    }

    fn extract(&self, record: &ImageRecord) -> Result<FeaturePayload> {
        Ok(FeaturePayload::Embedding {
            binary_code: binarize(&record.embedding, &self.thresholds)?,
            embedding: record.embedding.clone(),
        })
    }
}

/// Records without pixels get an empty signature rather than a failure.
pub struct ColorExtractor {
    pub version: u32,
    pub k: usize,
    pub seed: u64,
}

impl Extractor for ColorExtractor {
    fn feature(&self) -> FeatureVersion {
        FeatureVersion::new("color", self.version)
    }

    fn extract(&self, record: &ImageRecord) -> Result<FeaturePayload> {
        let signature = match &record.pixels {
            Some(p) => Some(color_signature(p, None, self.k, self.seed)?),
            None => None,
        };
        Ok(FeaturePayload::Color { signature })
    }
}

pub struct ObjectExtractor {
    pub version: u32,
    pub rules: RuleSet,
    pub detectors: Arc<DetectorBank>,
}

impl Extractor for ObjectExtractor {
    fn feature(&self) -> FeatureVersion {
        FeatureVersion::new("objects", self.version)
    }

    fn extract(&self, record: &ImageRecord) -> Result<FeaturePayload> {
        let found = two_step_detect(record, &self.rules, &self.detectors)?;
        Ok(FeaturePayload::Objects { objects: found.objects })
    }
}
