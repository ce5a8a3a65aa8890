//! Epoch-based incremental feature computation.
//!
//! Feature outputs are keyed by `(DocId, FeatureVersion)` and by a hash of
//! the record they were computed from. An epoch computes only the keys that
//! are absent, so unchanged features are never recomputed and a version bump
//! recomputes exactly that feature.

mod extract;
mod ingest;
mod store;

pub use extract::{
    ColorExtractor, EmbeddingExtractor, Extractor, ExtractorRegistry, FeaturePayload, ObjectExtractor,
};
pub use ingest::{read_ingest_file, IngestRecord};
pub use store::{
    enumerate_pending, join, run_epoch, EpochManifest, Exclusion, ImageStore, JoinOutput, UpsertOutcome,
};
