//! Two-step object detection: text rules pick candidate categories, then
//! only those categories' detectors run.

mod detector;
mod eval;
mod rules;

pub use detector::{
    detect_all, run_conditions, two_step_detect, Detector, DetectorBank, DetectorSpec, Detections, FixtureDetector,
};
pub use eval::{
    evaluate_detections, iou, CategoryRow, Condition, ConditionCounts, DetectionReport, EvalImage,
    Rates, DEFAULT_IOU_THRESHOLD,
};
pub use rules::{classify_categories, CategoryRule, RuleSet, DEFAULT_CATEGORIES};
