use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use log::warn;

use super::eval::EvalImage;
use super::rules::{classify_categories, RuleSet};
use crate::error::{Error, Result};
use crate::model::{fnv1a64, BoundingBox, DetectedObject, ImageRecord};
use crate::rng::SplitMix64;

/// A per-category object detector.
pub trait Detector: Send + Sync {
    fn detect(&self, record: &ImageRecord) -> Result<Vec<(BoundingBox, f64)>>;
}

impl<F> Detector for F
where
    F: Fn(&ImageRecord) -> Result<Vec<(BoundingBox, f64)>> + Send + Sync,
{
    fn detect(&self, record: &ImageRecord) -> Result<Vec<(BoundingBox, f64)>> {
        self(record)
    }
}

pub struct DetectorSpec {
    pub category: String,
    pub detector: Arc<dyn Detector>,
    pub min_score: f64,
    invocations: AtomicU64,
}

impl DetectorSpec {
    pub fn new(category: impl Into<String>, detector: Arc<dyn Detector>, min_score: f64) -> Self {
        Self { category: category.into(), detector, min_score, invocations: AtomicU64::new(0) }
    }

    pub fn invocations(&self) -> u64 {
        self.invocations.load(Ordering::Relaxed)
    }

    fn run(&self, record: &ImageRecord) -> Result<Vec<DetectedObject>> {
        self.invocations.fetch_add(1, Ordering::Relaxed);
        Ok(self
            .detector
            .detect(record)?
            .into_iter()
            .filter(|(_, s)| *s >= self.min_score)
            .map(|(bbox, score)| DetectedObject { category: self.category.clone(), bbox, score })
            .collect())
    }
}

/// At most one detector per category.
#[derive(Default)]
pub struct DetectorBank {
    specs: BTreeMap<String, DetectorSpec>,
}

impl DetectorBank {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, spec: DetectorSpec) -> Result<()> {
        if self.specs.contains_key(&spec.category) {
            return Err(Error::Config(format!("second detector for {:?}", spec.category)));
        }
        self.specs.insert(spec.category.clone(), spec);
        Ok(())
    }

    pub fn get(&self, category: &str) -> Option<&DetectorSpec> {
        self.specs.get(category)
    }

    pub fn categories(&self) -> impl Iterator<Item = &str> {
        self.specs.keys().map(String::as_str)
    }

    pub fn total_invocations(&self) -> u64 {
        self.specs.values().map(DetectorSpec::invocations).sum()
    }

    /// Fixture detectors for every category of `rules`.
    pub fn fixtures(rules: &RuleSet, detector: FixtureDetector, min_score: f64) -> Self {
        let mut bank = Self::new();
        for cat in rules.vocabulary() {
            let d = FixtureDetector { category: cat.clone(), ..detector.clone() };
            bank.specs.insert(cat.clone(), DetectorSpec::new(cat.clone(), Arc::new(d), min_score));
        }
        bank
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Detections {
    pub objects: Vec<DetectedObject>,
    /// Predicted categories that had no registered detector.
    pub missing_detectors: Vec<String>,
}

/// Runs detectors only for the categories the text rules predict.
pub fn two_step_detect(record: &ImageRecord, rules: &RuleSet, bank: &DetectorBank) -> Result<Detections> {
    let mut out = Detections::default();
    for cat in classify_categories(&record.annotations, rules) {
        match bank.get(&cat) {
            Some(spec) => out.objects.extend(spec.run(record)?),
            None => {
                warn!("{}: no detector for predicted category {cat:?}", record.doc_id);
                out.missing_detectors.push(cat);
            }
        }
    }
    Ok(out)
}

/// The ungated baseline: every detector on every image.
pub fn detect_all(record: &ImageRecord, bank: &DetectorBank) -> Result<Vec<DetectedObject>> {
    let mut out = Vec::new();
    for spec in bank.specs.values() {
        out.extend(spec.run(record)?);
    }
    Ok(out)
}

/// All three evaluation conditions for one labelled record.
pub fn run_conditions(record: &ImageRecord, rules: &RuleSet, bank: &DetectorBank) -> Result<EvalImage> {
    Ok(EvalImage {
        doc_id: record.doc_id,
        ground_truth: record.ground_truth_boxes.clone(),
        text: Some(classify_categories(&record.annotations, rules)),
        image: Some(detect_all(record, bank)?),
        combined: Some(two_step_detect(record, rules, bank)?.objects),
    })
}

/// Replays a record's ground-truth boxes with seeded corruption: coordinate
/// jitter, dropped objects and injected spurious boxes. Output depends only
/// on `(seed, category, doc_id)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FixtureDetector {
    pub category: String,
    /// Max coordinate shift as a fraction of the box side.
    pub jitter: f64,
    pub miss_rate: f64,
    pub false_positive_rate: f64,
    pub seed: u64,
}

impl FixtureDetector {
    pub fn perfect(category: impl Into<String>) -> Self {
        Self { category: category.into(), jitter: 0.0, miss_rate: 0.0, false_positive_rate: 0.0, seed: 0 }
    }
}

const DEFAULT_FRAME: u32 = 256;

impl Detector for FixtureDetector {
    fn detect(&self, record: &ImageRecord) -> Result<Vec<(BoundingBox, f64)>> {
        let mut rng = SplitMix64::new(self.seed ^ record.doc_id.0 ^ fnv1a64(self.category.as_bytes()));
        let (w, h) = record
            .pixels
            .as_ref()
            .map_or((DEFAULT_FRAME, DEFAULT_FRAME), |p| (p.width, p.height));
        let mut out = Vec::new();
        for gt in record.ground_truth_boxes.iter().filter(|g| g.category == self.category) {
            if rng.next_f64() < self.miss_rate {
                continue;
            }
            let b = gt.bbox;
            let shift = |rng: &mut SplitMix64, v: u32, side: u32| -> u32 {
                let d = (rng.next_f64() * 2.0 - 1.0) * self.jitter * side as f64;
                (v as f64 + d).round().max(0.0) as u32
            };
            let x0 = shift(&mut rng, b.x_min, b.width());
            let y0 = shift(&mut rng, b.y_min, b.height());
            let x1 = shift(&mut rng, b.x_max, b.width()).max(x0 + 1);
            let y1 = shift(&mut rng, b.y_max, b.height()).max(y0 + 1);
            out.push((BoundingBox::new(x0, y0, x1, y1)?, 0.9));
        }
        if w >= 2 && h >= 2 && rng.next_f64() < self.false_positive_rate {
            let x0 = rng.below((w - 1) as u64) as u32;
            let y0 = rng.below((h - 1) as u64) as u32;
            let x1 = x0 + 1 + rng.below((w - x0 - 1) as u64) as u32;
            let y1 = y0 + 1 + rng.below((h - y0 - 1) as u64) as u32;
            out.push((BoundingBox::new(x0, y0, x1, y1)?, 0.6));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detection::DEFAULT_CATEGORIES;
    use crate::model::LabeledBox;

    fn rules() -> RuleSet {
        RuleSet::parse("bag\ttote|bag\nshoe\tshoe", &DEFAULT_CATEGORIES).unwrap()
    }

    fn record(annotations: &[&str], boxes: &[(&str, [u32; 4])]) -> ImageRecord {
        ImageRecord::new("img", annotations, vec![0.0])
            .unwrap()
            .with_boxes(
                boxes
                    .iter()
                    .map(|(c, b)| LabeledBox { category: (*c).into(), bbox: (*b).try_into().unwrap() })
                    .collect(),
            )
    }

    fn counting_bank() -> DetectorBank {
        let mut bank = DetectorBank::new();
        let two = |_: &ImageRecord| {
            Ok(vec![(BoundingBox::new(0, 0, 5, 5)?, 0.9), (BoundingBox::new(5, 5, 9, 9)?, 0.8)])
        };
        let one = |_: &ImageRecord| Ok(vec![(BoundingBox::new(1, 1, 4, 4)?, 0.7)]);
        bank.insert(DetectorSpec::new("bag", Arc::new(two), 0.5)).unwrap();
        bank.insert(DetectorSpec::new("shoe", Arc::new(one), 0.5)).unwrap();
        bank.insert(DetectorSpec::new("dress", Arc::new(one), 0.5)).unwrap();
        bank
    }

    #[test]
    fn gate_blocks_everything_without_matches() {
        let bank = counting_bank();
        let out = two_step_detect(&record(&["sunset beach"], &[]), &rules(), &bank).unwrap();
        assert!(out.objects.is_empty());
        assert_eq!(bank.total_invocations(), 0);
    }

    #[test]
    fn union_over_predicted_categories() {
        let bank = counting_bank();
        let out = two_step_detect(&record(&["tote and shoe"], &[]), &rules(), &bank).unwrap();
        assert_eq!(out.objects.len(), 3);
        assert_eq!(bank.get("bag").unwrap().invocations(), 1);
        assert_eq!(bank.get("shoe").unwrap().invocations(), 1);
        assert_eq!(bank.get("dress").unwrap().invocations(), 0);
    }

    #[test]
    fn min_score_and_missing_detector() {
        let mut bank = DetectorBank::new();
        let low = |_: &ImageRecord| Ok(vec![(BoundingBox::new(0, 0, 2, 2)?, 0.1), (BoundingBox::new(0, 0, 3, 3)?, 0.9)]);
        bank.insert(DetectorSpec::new("bag", Arc::new(low), 0.5)).unwrap();
        let out = two_step_detect(&record(&["bag", "shoe"], &[]), &rules(), &bank).unwrap();
        assert_eq!(out.objects.len(), 1);
        assert_eq!(out.missing_detectors, vec!["shoe".to_owned()]);
        assert!(bank.insert(DetectorSpec::new("bag", Arc::new(low), 0.5)).is_err());
    }

    #[test]
    fn fixture_replays_truth() {
        let rec = record(&["bag"], &[("bag", [10, 10, 50, 40]), ("shoe", [0, 0, 5, 5])]);
        let perfect = FixtureDetector::perfect("bag");
        let boxes = perfect.detect(&rec).unwrap();
        assert_eq!(boxes.len(), 1);
        assert_eq!(boxes[0].0, BoundingBox::new(10, 10, 50, 40).unwrap());

        let noisy = FixtureDetector { jitter: 0.2, false_positive_rate: 0.5, seed: 3, ..perfect };
        assert_eq!(noisy.detect(&rec).unwrap(), noisy.detect(&rec).unwrap());
    }
}
