//! Seeded synthetic data: labelled embedding clusters and detection
//! fixtures, so every workflow runs without external images.

use rand_distr::{Distribution, StandardNormal};

use crate::detection::{DetectorBank, FixtureDetector, RuleSet, DEFAULT_CATEGORIES};
use crate::error::{Error, Result};
use crate::model::{BoundingBox, ImageRecord, LabeledBox, Raster};
use crate::rng::SplitMix64;

const WORDS: [&str; 48] = [
    "linen", "velvet", "denim", "rustic", "boho", "minimal", "vintage", "retro", "coastal", "floral",
    "striped", "plaid", "leather", "marble", "walnut", "brass", "ceramic", "woven", "knit", "silk",
    "pastel", "neon", "matte", "glossy", "tropical", "nordic", "industrial", "cottage", "modern", "classic",
    "summer", "winter", "autumn", "spring", "cozy", "bold", "soft", "warm", "cool", "bright",
    "dark", "sunny", "urban", "garden", "desert", "ocean", "forest", "studio",
];
const WORDS_PER_CLUSTER: usize = 4;

/// How far documents scatter around their cluster centre.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Spread {
    /// Standard deviation per embedding dimension.
    PerDimension(f64),
    /// Expected distance from the centre, as a fraction of the smallest
    /// distance between two centres.
    MinDistanceFraction(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusConfig {
    pub docs: usize,
    pub clusters: usize,
    pub dim: usize,
    pub spread: Spread,
    /// Probability that an annotation word comes from outside the cluster.
    pub annotation_noise: f64,
    /// Attach a small raster tinted by cluster.
    pub pixels: bool,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            docs: 10_000,
            clusters: 64,
            dim: 64,
            spread: Spread::MinDistanceFraction(0.25),
            annotation_noise: 0.2,
            pixels: false,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DemoCorpus {
    /// In generation order; every record carries its cluster label.
    pub records: Vec<ImageRecord>,
    pub centers: Vec<Vec<f64>>,
    pub per_dim_sigma: f64,
    pub min_center_distance: f64,
}

pub fn cluster_label(c: usize) -> String {
    format!("q{c:03}")
}

fn gaussian(rng: &mut SplitMix64) -> f64 {
    StandardNormal.sample(rng)
}

pub fn clustered_corpus(cfg: &CorpusConfig) -> Result<DemoCorpus> {
    if cfg.clusters == 0 || cfg.dim == 0 {
        return Err(Error::invalid("clusters and dim must be at least 1"));
    }
    if !(0.0..=1.0).contains(&cfg.annotation_noise) {
        return Err(Error::invalid("annotation_noise must be in [0, 1]"));
    }
    let mut rng = SplitMix64::new(cfg.seed);
    let centers: Vec<Vec<f64>> =
        (0..cfg.clusters).map(|_| (0..cfg.dim).map(|_| gaussian(&mut rng)).collect()).collect();
    let mut min_center_distance = f64::INFINITY;
    for i in 0..centers.len() {
        for j in i + 1..centers.len() {
            let d: f64 = centers[i].iter().zip(&centers[j]).map(|(a, b)| (a - b) * (a - b)).sum();
            min_center_distance = min_center_distance.min(d.sqrt());
        }
    }
    let per_dim_sigma = match cfg.spread {
        Spread::PerDimension(s) => s,
        Spread::MinDistanceFraction(f) => {
            let d = if min_center_distance.is_finite() { min_center_distance } else { 1.0 };
            f * d / (cfg.dim as f64).sqrt()
        }
    };
    if !(per_dim_sigma >= 0.0 && per_dim_sigma.is_finite()) {
        return Err(Error::invalid(format!("invalid spread {:?}", cfg.spread)));
    }
    let vocab: Vec<[&str; WORDS_PER_CLUSTER]> = (0..cfg.clusters)
        .map(|c| std::array::from_fn(|w| WORDS[(c * 7 + w * 13) % WORDS.len()]))
        .collect();
    let tints: Vec<[u8; 3]> = (0..cfg.clusters)
        .map(|_| [rng.below(256) as u8, rng.below(256) as u8, rng.below(256) as u8])
        .collect();

    let mut records = Vec::with_capacity(cfg.docs);
    for i in 0..cfg.docs {
        let c = rng.below(cfg.clusters as u64) as usize;
        let embedding: Vec<f64> = centers[c].iter().map(|&m| m + per_dim_sigma * gaussian(&mut rng)).collect();
        let mut annotations = Vec::new();
        for _ in 0..2 {
            let w = if rng.next_f64() < cfg.annotation_noise {
                WORDS[rng.below(WORDS.len() as u64) as usize]
            } else {
                vocab[c][rng.below(WORDS_PER_CLUSTER as u64) as usize]
            };
            annotations.push(w);
        }
        let key = format!("demo/{}/{i:06}", cfg.seed);
        let mut rec = ImageRecord::new(&key, annotations, embedding)?.with_label(cluster_label(c));
        if cfg.pixels {
            rec = rec.with_pixels(tinted_raster(&mut rng, tints[c]));
        }
        records.push(rec);
    }
    Ok(DemoCorpus { records, centers, per_dim_sigma, min_center_distance })
}

fn tinted_raster(rng: &mut SplitMix64, tint: [u8; 3]) -> Raster {
    let (w, h) = (12, 12);
    let pixels = (0..w * h)
        .map(|_| tint.map(|v| (v as i32 + rng.below(17) as i32 - 8).clamp(0, 255) as u8))
        .collect();
    Raster::new(w, h, pixels).expect("dimensions match")
}

/// Text rules for [`DEFAULT_CATEGORIES`], one `category<TAB>pattern` per line.
pub const DEMO_RULES: &str = "\
# category\tpattern
shoe\t\\b(shoes?|sneakers?|heels|boots?|loafers?)\\b
dress\t\\b(dress(es)?|gown|sundress)\\b
glasses\t\\b(glasses|sunglasses|eyewear|shades)\\b
bag\t\\b(bags?|handbag|tote|purse|clutch)\\b
watch\t\\b(watch(es)?|wristwatch|timepiece)\\b
pants\t\\b(pants|trousers|jeans|chinos)\\b
shorts\t\\bshorts\\b
bikini\t\\b(bikini|swimsuit|two-piece)\\b
earrings\t\\b(earrings?|studs|hoops)\\b
";

const PHRASES: [(&str, &[&str]); 9] = [
    ("shoe", &["red sneakers", "leather boots", "summer heels", "suede loafers"]),
    ("dress", &["floral dress", "evening gown", "linen sundress"]),
    ("glasses", &["retro sunglasses", "round glasses", "beach shades"]),
    ("bag", &["canvas tote", "leather handbag", "mini clutch"]),
    ("watch", &["gold watch", "vintage wristwatch"]),
    ("pants", &["wide trousers", "skinny jeans", "linen pants"]),
    ("shorts", &["denim shorts", "running shorts"]),
    ("bikini", &["striped bikini", "black swimsuit"]),
    ("earrings", &["pearl earrings", "silver hoops", "tiny studs"]),
];
const FILLER: [&str; 8] = ["street style", "ootd", "weekend look", "inspo", "outfit ideas", "style", "fashion", "lookbook"];

pub fn demo_rules() -> RuleSet {
    RuleSet::parse(DEMO_RULES, &DEFAULT_CATEGORIES).expect("demo rules compile")
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionConfig {
    pub images: usize,
    /// Chance that an image contains any objects at all.
    pub object_rate: f64,
    /// Chance that a present object is mentioned in the text.
    pub text_recall: f64,
    /// Chance per image of mentioning an absent category.
    pub text_false_mention: f64,
    pub seed: u64,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        Self { images: 2_000, object_rate: 0.7, text_recall: 0.85, text_false_mention: 0.5, seed: 11 }
    }
}

const FRAME: u32 = 256;

fn random_box(rng: &mut SplitMix64) -> BoundingBox {
    let w = 32 + rng.below(96) as u32;
    let h = 32 + rng.below(96) as u32;
    let x = rng.below((FRAME - w) as u64) as u32;
    let y = rng.below((FRAME - h) as u64) as u32;
    BoundingBox::new(x, y, x + w, y + h).expect("non-empty")
}

fn phrase(rng: &mut SplitMix64, cat: usize) -> &'static str {
    let options = PHRASES[cat].1;
    options[rng.below(options.len() as u64) as usize]
}

/// Labelled images with 256×256 frames, ground-truth boxes and annotations
/// that mention most of the objects present.
pub fn detection_corpus(cfg: &DetectionConfig) -> Result<Vec<ImageRecord>> {
    let mut rng = SplitMix64::new(cfg.seed);
    let mut out = Vec::with_capacity(cfg.images);
    for i in 0..cfg.images {
        let mut boxes = Vec::new();
        let mut annotations: Vec<&str> = vec![FILLER[rng.below(FILLER.len() as u64) as usize]];
        let mut present = Vec::new();
        if rng.next_f64() < cfg.object_rate {
            for _ in 0..1 + rng.below(2) {
                let cat = rng.below(PHRASES.len() as u64) as usize;
                boxes.push(LabeledBox { category: PHRASES[cat].0.into(), bbox: random_box(&mut rng) });
                if !present.contains(&cat) {
                    present.push(cat);
                }
            }
        }
        for &cat in &present {
            if rng.next_f64() < cfg.text_recall {
                annotations.push(phrase(&mut rng, cat));
            }
        }
        if rng.next_f64() < cfg.text_false_mention {
            let absent: Vec<usize> = (0..PHRASES.len()).filter(|c| !present.contains(c)).collect();
            if !absent.is_empty() {
                let cat = absent[rng.below(absent.len() as u64) as usize];
                annotations.push(phrase(&mut rng, cat));
            }
        }
        let key = format!("detect/{}/{i:06}", cfg.seed);
        out.push(ImageRecord::new(&key, annotations, vec![0.0])?.with_boxes(boxes));
    }
    Ok(out)
}

/// Fixture detectors with mild jitter, misses and spurious boxes.
pub fn demo_detector(seed: u64) -> FixtureDetector {
    FixtureDetector { category: String::new(), jitter: 0.1, miss_rate: 0.1, false_positive_rate: 0.03, seed }
}

pub fn demo_bank(seed: u64) -> DetectorBank {
    DetectorBank::fixtures(&demo_rules(), demo_detector(seed), 0.5)
}
