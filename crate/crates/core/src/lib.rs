//! Content-based visual search: binary-code Hamming retrieval over sharded
//! visual-token indices, an incremental feature pipeline, text-gated object
//! detection, and offline evaluation.

pub mod codec;
pub mod demo;
pub mod detection;
pub mod error;
pub mod evalkit;
pub mod features;
pub mod index;
pub mod model;
pub mod pipeline;
pub mod rng;
pub mod service;

pub use error::{Error, Result};
pub use model::{
    doc_id_of, BinaryCode, BoundingBox, ColorSignature, DetectedObject, DocId, FeatureVersion,
    ImageRecord, LabeledBox, Raster, SearchResult, VisualJoin,
};
