use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::codec::read_records_file;
use crate::error::{Error, Result};
use crate::model::{ImageRecord, LabeledBox, Raster};

/// Line schema of an embedding ingestion file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestRecord {
    pub source_key: String,
    #[serde(default)]
    pub annotations: Vec<String>,
    pub embedding: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pixels: Option<Raster>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub ground_truth_boxes: Vec<LabeledBox>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

impl IngestRecord {
    pub fn into_record(self) -> Result<ImageRecord> {
        let mut r = ImageRecord::new(&self.source_key, &self.annotations, self.embedding)?;
        r.pixels = self.pixels;
        r.ground_truth_boxes = self.ground_truth_boxes;
        r.label = self.label;
        Ok(r)
    }
}

impl From<&ImageRecord> for IngestRecord {
    fn from(r: &ImageRecord) -> Self {
        Self {
            source_key: r.source_key.clone(),
            annotations: r.annotations.clone(),
            embedding: r.embedding.clone(),
            pixels: r.pixels.clone(),
            ground_truth_boxes: r.ground_truth_boxes.clone(),
            label: r.label.clone(),
        }
    }
}

/// Reads an ingestion file. Every embedding must share one dimension.
pub fn read_ingest_file(path: &Path) -> Result<Vec<ImageRecord>> {
    let raw: Vec<IngestRecord> = read_records_file(path)?;
    let records = raw.into_iter().map(IngestRecord::into_record).collect::<Result<Vec<_>>>()?;
    if let Some(first) = records.first() {
        let dim = first.embedding.len();
        if let Some(bad) = records.iter().find(|r| r.embedding.len() != dim) {
            return Err(Error::invalid(format!(
                "{}: embedding has {} dims, expected {dim}",
                bad.source_key,
                bad.embedding.len()
            )));
        }
    }
    Ok(records)
}
