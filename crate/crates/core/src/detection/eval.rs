//! Detection accuracy under text-only, image-only and gated conditions.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BoundingBox, DetectedObject, DocId, LabeledBox};

pub const DEFAULT_IOU_THRESHOLD: f64 = 0.3;

pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let inter = a.intersection(b).map_or(0, |i| i.area());
    if inter == 0 {
        return 0.0;
    }
    inter as f64 / (a.area() + b.area() - inter) as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Condition {
    Text,
    Image,
    Combined,
}

impl Condition {
    pub const ALL: [Condition; 3] = [Condition::Text, Condition::Image, Condition::Combined];
}

/// One evaluated image: its labelled objects and what each condition
/// predicted. A `None` condition is an input error.
#[derive(Debug, Clone, Default)]
pub struct EvalImage {
    pub doc_id: DocId,
    pub ground_truth: Vec<LabeledBox>,
    pub text: Option<BTreeSet<String>>,
    pub image: Option<Vec<DetectedObject>>,
    pub combined: Option<Vec<DetectedObject>>,
}

/// Additive counts; merging is associative and commutative.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConditionCounts {
    pub tp: u64,
    pub fp: u64,
}

impl ConditionCounts {
    pub fn merge(self, other: ConditionCounts) -> ConditionCounts {
        ConditionCounts { tp: self.tp + other.tp, fp: self.fp + other.fp }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rates {
    pub tp_rate: f64,
    pub fp_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryRow {
    pub category: String,
    pub support: u64,
    pub text: ConditionCounts,
    pub image: ConditionCounts,
    pub combined: ConditionCounts,
}

impl CategoryRow {
    pub fn counts(&self, c: Condition) -> ConditionCounts {
        match c {
            Condition::Text => self.text,
            Condition::Image => self.image,
            Condition::Combined => self.combined,
        }
    }

    /// TP rate over labelled objects, FP rate over evaluated images.
    pub fn rates(&self, c: Condition, images: u64) -> Rates {
        let n = self.counts(c);
        Rates {
            tp_rate: if self.support == 0 { 0.0 } else { n.tp as f64 / self.support as f64 },
            fp_rate: if images == 0 { 0.0 } else { n.fp as f64 / images as f64 },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub images: u64,
    pub iou_threshold: f64,
    pub rows: Vec<CategoryRow>,
}

/// Greedy one-to-one matching, highest IoU first. Returns matched count.
fn match_boxes(preds: &[&BoundingBox], truth: &[&BoundingBox], threshold: f64) -> u64 {
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (i, p) in preds.iter().enumerate() {
        for (j, t) in truth.iter().enumerate() {
            let v = iou(p, t);
            if v >= threshold {
                pairs.push((v, i, j));
            }
        }
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut used_p = vec![false; preds.len()];
    let mut used_t = vec![false; truth.len()];
    let mut matched = 0;
    for (_, i, j) in pairs {
        if !used_p[i] && !used_t[j] {
            used_p[i] = true;
            used_t[j] = true;
            matched += 1;
        }
    }
    matched
}

fn box_counts(objects: &[DetectedObject], truth: &[&BoundingBox], category: &str, threshold: f64) -> ConditionCounts {
    let preds: Vec<&BoundingBox> = objects.iter().filter(|o| o.category == category).map(|o| &o.bbox).collect();
    ConditionCounts {
        tp: match_boxes(&preds, truth, threshold),
        fp: u64::from(truth.is_empty() && !preds.is_empty()),
    }
}

/// Per category and condition:
/// - TP counts labelled objects that were found. For boxes, a labelled
///   object is found by a same-category prediction with IoU at or above the
///   threshold. For text, it is found when the text predicts its category.
/// - FP counts images without any object of the category where the
///   condition still predicts it.
///
/// So a gated condition whose output is a per-image subset of both others
/// can never exceed either of them.
pub fn evaluate_detections<S: AsRef<str>>(
    images: &[EvalImage],
    vocabulary: &[S],
    iou_threshold: f64,
) -> Result<DetectionReport> {
    if !(0.0..=1.0).contains(&iou_threshold) {
        return Err(Error::invalid(format!("iou threshold {iou_threshold} outside [0,1]")));
    }
    let vocab: Vec<&str> = vocabulary.iter().map(AsRef::as_ref).collect();
    let mut rows: BTreeMap<&str, CategoryRow> = BTreeMap::new();
    for img in images {
        let (Some(text), Some(image), Some(combined)) = (&img.text, &img.image, &img.combined) else {
            return Err(Error::invalid(format!("{}: a condition has no predictions", img.doc_id)));
        };
        for gt in &img.ground_truth {
            if !vocab.contains(&gt.category.as_str()) {
                return Err(Error::invalid(format!("{}: unknown category {:?}", img.doc_id, gt.category)));
            }
        }
        for &cat in &vocab {
            let truth: Vec<&BoundingBox> =
                img.ground_truth.iter().filter(|g| g.category == cat).map(|g| &g.bbox).collect();
            let said = text.contains(cat);
            let text_counts = ConditionCounts {
                tp: if said { truth.len() as u64 } else { 0 },
                fp: u64::from(said && truth.is_empty()),
            };
            let row = rows.entry(cat).or_insert_with(|| CategoryRow {
                category: cat.to_owned(),
                support: 0,
                text: ConditionCounts::default(),
                image: ConditionCounts::default(),
                combined: ConditionCounts::default(),
            });
            row.support += truth.len() as u64;
            row.text = row.text.merge(text_counts);
            row.image = row.image.merge(box_counts(image, &truth, cat, iou_threshold));
            row.combined = row.combined.merge(box_counts(combined, &truth, cat, iou_threshold));
        }
    }
    let rows = vocab.iter().filter_map(|c| rows.remove(c)).collect();
    Ok(DetectionReport { images: images.len() as u64, iou_threshold, rows })
}

impl DetectionReport {
    pub fn rates(&self, row: &CategoryRow, c: Condition) -> Rates {
        row.rates(c, self.images)
    }

    /// Unweighted mean of per-category rates over categories with support.
    pub fn average(&self, c: Condition) -> Rates {
        let rows: Vec<&CategoryRow> = self.rows.iter().filter(|r| r.support > 0).collect();
        if rows.is_empty() {
            return Rates { tp_rate: 0.0, fp_rate: 0.0 };
        }
        let n = rows.len() as f64;
        let (tp, fp) = rows.iter().fold((0.0, 0.0), |(tp, fp), r| {
            let x = self.rates(r, c);
            (tp + x.tp_rate, fp + x.fp_rate)
        });
        Rates { tp_rate: tp / n, fp_rate: fp / n }
    }

    pub fn totals(&self, c: Condition) -> ConditionCounts {
        self.rows.iter().fold(ConditionCounts::default(), |acc, r| acc.merge(r.counts(c)))
    }

    /// Percentages, one row per category plus an average row.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<10} {:>6} | {:>6} {:>6} | {:>6} {:>6} | {:>6} {:>6}", "", "", "Text", "", "Img", "", "Both", "");
        let _ = writeln!(s, "{:<10} {:>6} | {:>6} {:>6} | {:>6} {:>6} | {:>6} {:>6}", "Objects", "#", "TP", "FP", "TP", "FP", "TP", "FP");
        let rule = "-".repeat(s.lines().last().map_or(0, str::len));
        let _ = writeln!(s, "{rule}");
        let cell = |r: Rates| format!("{:>6.1} {:>6.1}", 100.0 * r.tp_rate, 100.0 * r.fp_rate);
        for row in &self.rows {
            let _ = writeln!(
                s,
                "{:<10} {:>6} | {} | {} | {}",
                row.category,
                row.support,
                cell(self.rates(row, Condition::Text)),
                cell(self.rates(row, Condition::Image)),
                cell(self.rates(row, Condition::Combined)),
            );
        }
        let _ = writeln!(s, "{rule}");
        let _ = writeln!(
            s,
            "{:<10} {:>6} | {} | {} | {}",
            "Average",
            "",
            cell(self.average(Condition::Text)),
            cell(self.average(Condition::Image)),
            cell(self.average(Condition::Combined)),
        );
        let _ = writeln!(s, "{} images, IoU >= {}", self.images, self.iou_threshold);
        s
    }

    /// One JSON object per category, then an `"Average"` row.
    pub fn to_records(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Line<'a> {
            category: &'a str,
            support: Option<u64>,
            text: Rates,
            image: Rates,
            combined: Rates,
        }
        let mut out = String::new();
        for row in &self.rows {
            let line = Line {
                category: &row.category,
                support: Some(row.support),
                text: self.rates(row, Condition::Text),
                image: self.rates(row, Condition::Image),
                combined: self.rates(row, Condition::Combined),
            };
            out.push_str(&serde_json::to_string(&line)?);
            out.push('\n');
        }
        let avg = Line {
            category: "Average",
            support: None,
            text: self.average(Condition::Text),
            image: self.average(Condition::Image),
            combined: self.average(Condition::Combined),
        };
        out.push_str(&serde_json::to_string(&avg)?);
        out.push('\n');
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bx(c: [u32; 4]) -> BoundingBox {
        c.try_into().unwrap()
    }

    /// Counts covered pixels on a grid large enough for both boxes.
    fn pixel_iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
        let (mut inter, mut union) = (0u64, 0u64);
        for y in 0..a.y_max.max(b.y_max) {
            for x in 0..a.x_max.max(b.x_max) {
                let ia = (a.x_min..a.x_max).contains(&x) && (a.y_min..a.y_max).contains(&y);
                let ib = (b.x_min..b.x_max).contains(&x) && (b.y_min..b.y_max).contains(&y);
                inter += u64::from(ia && ib);
                union += u64::from(ia || ib);
            }
        }
        inter as f64 / union as f64
    }

    #[test]
    fn iou_examples() {
        let a = bx([0, 0, 10, 10]);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &bx([10, 0, 20, 10])), 0.0);
        let b = bx([5, 0, 15, 10]);
        assert_eq!(pixel_iou(&a, &b), 50.0 / 150.0);
        assert!((iou(&a, &b) - 50.0 / 150.0).abs() < 1e-15);
    }

    fn obj(cat: &str, c: [u32; 4]) -> DetectedObject {
        DetectedObject { category: cat.into(), bbox: bx(c), score: 1.0 }
    }

    fn gt(cat: &str, c: [u32; 4]) -> LabeledBox {
        LabeledBox { category: cat.into(), bbox: bx(c) }
    }

    #[test]
    fn perfect_everything() {
        let images: Vec<EvalImage> = (0..4)
            .map(|i| {
                let truth = vec![gt("bag", [i, i, i + 10, i + 10])];
                let preds: Vec<DetectedObject> = truth.iter().map(|g| obj("bag", g.bbox.into())).collect();
                EvalImage {
                    doc_id: DocId(i as u64),
                    ground_truth: truth,
                    text: Some(BTreeSet::from(["bag".to_owned()])),
                    image: Some(preds.clone()),
                    combined: Some(preds),
                }
            })
            .collect();
        let r = evaluate_detections(&images, &["bag"], 0.3).unwrap();
        for c in Condition::ALL {
            assert_eq!(r.average(c), Rates { tp_rate: 1.0, fp_rate: 0.0 });
        }
        assert!(r.to_table().contains("Average"));
        assert_eq!(r.to_records().unwrap().lines().count(), 2);
    }

    #[test]
    fn hand_counted_fixture() {
        // img0: bag truth; text says bag; detector finds it (iou 1) plus a
        //       stray shoe box. combined = bag only (text didn't say shoe).
        // img1: no truth; text says bag (text FP); detector fires bag
        //       (image FP); combined keeps it (combined FP).
        // img2: shoe truth; text silent; detector box overlaps 50/150 ≥ 0.3.
        // img3: shoe truth; text says shoe; detector box iou 0.2 (miss).
        let images = vec![
            EvalImage {
                doc_id: DocId(0),
                ground_truth: vec![gt("bag", [0, 0, 10, 10])],
                text: Some(BTreeSet::from(["bag".to_owned()])),
                image: Some(vec![obj("bag", [0, 0, 10, 10]), obj("shoe", [50, 50, 60, 60])]),
                combined: Some(vec![obj("bag", [0, 0, 10, 10])]),
            },
            EvalImage {
                doc_id: DocId(1),
                ground_truth: vec![],
                text: Some(BTreeSet::from(["bag".to_owned()])),
                image: Some(vec![obj("bag", [0, 0, 4, 4])]),
                combined: Some(vec![obj("bag", [0, 0, 4, 4])]),
            },
            EvalImage {
                doc_id: DocId(2),
                ground_truth: vec![gt("shoe", [0, 0, 10, 10])],
                text: Some(BTreeSet::new()),
                image: Some(vec![obj("shoe", [5, 0, 15, 10])]),
                combined: Some(vec![]),
            },
            EvalImage {
                doc_id: DocId(3),
                ground_truth: vec![gt("shoe", [0, 0, 10, 10])],
                text: Some(BTreeSet::from(["shoe".to_owned()])),
                image: Some(vec![obj("shoe", [0, 0, 10, 2])]),
                combined: Some(vec![obj("shoe", [0, 0, 10, 2])]),
            },
        ];
        let r = evaluate_detections(&images, &["bag", "shoe"], 0.3).unwrap();
        let bag = &r.rows[0];
        let shoe = &r.rows[1];
        assert_eq!((bag.support, shoe.support), (1, 2));
        assert_eq!(bag.text, ConditionCounts { tp: 1, fp: 1 });
        assert_eq!(bag.image, ConditionCounts { tp: 1, fp: 1 });
        assert_eq!(bag.combined, ConditionCounts { tp: 1, fp: 1 });
        assert_eq!(shoe.text, ConditionCounts { tp: 1, fp: 0 });
        // img0's stray shoe box is an image-level FP (img0 has no shoe).
        assert_eq!(shoe.image, ConditionCounts { tp: 1, fp: 1 });
        assert_eq!(shoe.combined, ConditionCounts { tp: 0, fp: 0 });
        assert_eq!(r.rates(shoe, Condition::Image), Rates { tp_rate: 0.5, fp_rate: 0.25 });
    }

    #[test]
    fn greedy_is_one_to_one() {
        let truth = [bx([0, 0, 10, 10])];
        let preds = [bx([0, 0, 10, 10]), bx([1, 1, 10, 10])];
        let t: Vec<&BoundingBox> = truth.iter().collect();
        let p: Vec<&BoundingBox> = preds.iter().collect();
        assert_eq!(match_boxes(&p, &t, 0.3), 1);
    }

    #[test]
    fn missing_condition_and_unknown_category() {
        let img = EvalImage { text: Some(BTreeSet::new()), image: Some(vec![]), ..Default::default() };
        assert!(evaluate_detections(&[img], &["bag"], 0.3).is_err());
        let img = EvalImage {
            ground_truth: vec![gt("hat", [0, 0, 1, 1])],
            text: Some(BTreeSet::new()),
            image: Some(vec![]),
            combined: Some(vec![]),
            ..Default::default()
        };
        assert!(evaluate_detections(&[img], &["bag"], 0.3).is_err());
    }

    fn arb_box() -> impl Strategy<Value = BoundingBox> {
        (0u32..40, 0u32..40, 1u32..30, 1u32..30).prop_map(|(x, y, w, h)| bx([x, y, x + w, y + h]))
    }

    proptest! {
        #[test]
        fn iou_symmetric_bounded_and_matches_pixels(a in arb_box(), b in arb_box()) {
            let v = iou(&a, &b);
            prop_assert_eq!(v, iou(&b, &a));
            prop_assert!((0.0..=1.0).contains(&v));
            prop_assert!((v - pixel_iou(&a, &b)).abs() < 1e-12);
        }
    }
}
