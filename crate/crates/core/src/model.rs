//! Domain types shared by the pipeline, the index and the query path.

use std::fmt;
use std::str::FromStr;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// FNV-1a, 64-bit.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

/// Hash of an image's canonical identifier. Ordered numerically; every
/// ranking tie in the system is broken by ascending `DocId`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DocId(pub u64);

impl DocId {
    pub fn shard(self, shard_count: usize) -> usize {
        (self.0 % shard_count as u64) as usize
    }
}

/// Hashes `source_key` with FNV-1a 64.
pub fn doc_id_of(source_key: &str) -> Result<DocId> {
    if source_key.is_empty() {
        return Err(Error::invalid("source key must be non-empty"));
    }
    Ok(DocId(fnv1a64(source_key.as_bytes())))
}

impl fmt::Display for DocId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016x}", self.0)
    }
}

impl FromStr for DocId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let hex = s.strip_prefix("0x").unwrap_or(s);
        if hex.is_empty() || hex.len() > 16 {
            return Err(Error::invalid(format!("bad doc id {s:?}")));
        }
        u64::from_str_radix(hex, 16)
            .map(DocId)
            .map_err(|_| Error::invalid(format!("bad doc id {s:?}")))
    }
}

// Hex strings on the wire: 64-bit integers do not survive every JSON parser.
impl Serialize for DocId {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for DocId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Fixed-length bit vector. Bit `i` is stored most-significant-first, so the
/// big-endian byte view puts dimension 0 in the high bit of byte 0.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryCode {
    words: Vec<u64>,
    nbits: usize,
}

impl BinaryCode {
    pub fn zeros(nbits: usize) -> Self {
        Self { words: vec![0; nbits.div_ceil(64)], nbits }
    }

    pub fn from_bits<I: IntoIterator<Item = bool>>(bits: I) -> Self {
        let mut words = Vec::new();
        let mut nbits = 0;
        for bit in bits {
            if nbits % 64 == 0 {
                words.push(0);
            }
            if bit {
                *words.last_mut().unwrap() |= 1u64 << (63 - nbits % 64);
            }
            nbits += 1;
        }
        Self { words, nbits }
    }

    pub fn nbits(&self) -> usize {
        self.nbits
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn get(&self, i: usize) -> bool {
        assert!(i < self.nbits, "bit {i} out of range for {}-bit code", self.nbits);
        self.words[i / 64] >> (63 - i % 64) & 1 == 1
    }

    pub fn set(&mut self, i: usize, value: bool) {
        assert!(i < self.nbits, "bit {i} out of range for {}-bit code", self.nbits);
        let mask = 1u64 << (63 - i % 64);
        if value {
            self.words[i / 64] |= mask;
        } else {
            self.words[i / 64] &= !mask;
        }
    }

    pub fn flip(&mut self, i: usize) {
        let v = self.get(i);
        self.set(i, !v);
    }

    pub fn complement(&self) -> Self {
        let mut out = self.clone();
        for w in &mut out.words {
            *w = !*w;
        }
        out.clear_tail();
        out
    }

    pub fn count_ones(&self) -> u32 {
        self.words.iter().map(|w| w.count_ones()).sum()
    }

    pub fn byte_len(&self) -> usize {
        self.nbits.div_ceil(8)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out: Vec<u8> = self.words.iter().flat_map(|w| w.to_be_bytes()).collect();
        out.truncate(self.byte_len());
        out
    }

    pub fn from_bytes(bytes: &[u8], nbits: usize) -> Result<Self> {
        if bytes.len() != nbits.div_ceil(8) {
            return Err(Error::invalid(format!(
                "{} bytes cannot hold a {nbits}-bit code",
                bytes.len()
            )));
        }
        let mut words = vec![0u64; nbits.div_ceil(64)];
        for (i, &b) in bytes.iter().enumerate() {
            words[i / 8] |= (b as u64) << (56 - 8 * (i % 8));
        }
        let code = Self { words, nbits };
        let mut clean = code.clone();
        clean.clear_tail();
        if clean != code {
            return Err(Error::invalid("padding bits beyond nbits must be zero"));
        }
        Ok(code)
    }

    pub fn to_base64(&self) -> String {
        B64.encode(self.to_bytes())
    }

    pub fn from_base64(s: &str, nbits: usize) -> Result<Self> {
        let bytes = B64
            .decode(s)
            .map_err(|e| Error::invalid(format!("bad base64 code: {e}")))?;
        Self::from_bytes(&bytes, nbits)
    }

    fn clear_tail(&mut self) {
        let rem = self.nbits % 64;
        if rem != 0 {
            if let Some(last) = self.words.last_mut() {
                *last &= !0u64 << (64 - rem);
            }
        }
    }
}

#[derive(Serialize, Deserialize)]
struct BinaryCodeRepr {
    nbits: usize,
    bits: String,
}

impl Serialize for BinaryCode {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        BinaryCodeRepr { nbits: self.nbits, bits: self.to_base64() }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for BinaryCode {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let repr = BinaryCodeRepr::deserialize(d)?;
        BinaryCode::from_base64(&repr.bits, repr.nbits).map_err(serde::de::Error::custom)
    }
}

/// CIE L*a*b* colour (D65 white).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lab {
    pub l: f64,
    pub a: f64,
    pub b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColorCluster {
    pub centroid: Lab,
    pub weight: f64,
}

/// Dominant colours of the salient region, heaviest first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColorSignature {
    pub clusters: Vec<ColorCluster>,
    pub k: usize,
}

/// Half-open pixel rectangle `[x_min, x_max) × [y_min, y_max)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "[u32; 4]", into = "[u32; 4]")]
pub struct BoundingBox {
    pub x_min: u32,
    pub y_min: u32,
    pub x_max: u32,
    pub y_max: u32,
}

impl BoundingBox {
    pub fn new(x_min: u32, y_min: u32, x_max: u32, y_max: u32) -> Result<Self> {
        if x_min >= x_max || y_min >= y_max {
            return Err(Error::invalid(format!(
                "degenerate box ({x_min},{y_min},{x_max},{y_max})"
            )));
        }
        Ok(Self { x_min, y_min, x_max, y_max })
    }

    pub fn width(&self) -> u32 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> u32 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> u64 {
        self.width() as u64 * self.height() as u64
    }

    pub fn intersection(&self, other: &BoundingBox) -> Option<BoundingBox> {
        let x_min = self.x_min.max(other.x_min);
        let y_min = self.y_min.max(other.y_min);
        let x_max = self.x_max.min(other.x_max);
        let y_max = self.y_max.min(other.y_max);
        (x_min < x_max && y_min < y_max).then_some(BoundingBox { x_min, y_min, x_max, y_max })
    }
}

impl TryFrom<[u32; 4]> for BoundingBox {
    type Error = Error;

    fn try_from(c: [u32; 4]) -> Result<Self> {
        BoundingBox::new(c[0], c[1], c[2], c[3])
    }
}

impl From<BoundingBox> for [u32; 4] {
    fn from(b: BoundingBox) -> Self {
        [b.x_min, b.y_min, b.x_max, b.y_max]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectedObject {
    pub category: String,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub score: f64,
}

/// A labelled object in an evaluation fixture.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledBox {
    pub category: String,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FeatureVersion {
    pub name: String,
    pub version: u32,
}

impl FeatureVersion {
    pub fn new(name: impl Into<String>, version: u32) -> Self {
        Self { name: name.into(), version }
    }
}

impl fmt::Display for FeatureVersion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@v{}", self.name, self.version)
    }
}

/// Row-major sRGB raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Raster {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<[u8; 3]>,
}

impl Raster {
    pub fn new(width: u32, height: u32, pixels: Vec<[u8; 3]>) -> Result<Self> {
        if pixels.len() != width as usize * height as usize {
            return Err(Error::invalid(format!(
                "raster {width}x{height} needs {} pixels, got {}",
                width as usize * height as usize,
                pixels.len()
            )));
        }
        Ok(Self { width, height, pixels })
    }

    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Self {
        Self { width, height, pixels: vec![rgb; width as usize * height as usize] }
    }

    pub fn get(&self, x: u32, y: u32) -> [u8; 3] {
        self.pixels[y as usize * self.width as usize + x as usize]
    }

    pub fn put(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        self.pixels[y as usize * self.width as usize + x as usize] = rgb;
    }
}

#[derive(Serialize, Deserialize)]
struct RasterRepr {
    width: u32,
    height: u32,
    rgb: String,
}

impl Serialize for Raster {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let bytes: Vec<u8> = self.pixels.iter().flatten().copied().collect();
        RasterRepr { width: self.width, height: self.height, rgb: B64.encode(bytes) }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Raster {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let repr = RasterRepr::deserialize(d)?;
        let bytes = B64.decode(&repr.rgb).map_err(D::Error::custom)?;
        if bytes.len() % 3 != 0 {
            return Err(D::Error::custom("rgb payload is not a multiple of 3 bytes"));
        }
        let pixels = bytes.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
        Raster::new(repr.width, repr.height, pixels).map_err(D::Error::custom)
    }
}

/// Lowercases, collapses whitespace, drops empties and duplicates. First
/// occurrence order is kept.
pub fn normalize_annotations<I, S>(raw: I) -> Vec<String>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut out: Vec<String> = Vec::new();
    for phrase in raw {
        let norm = phrase
            .as_ref()
            .split_whitespace()
            .collect::<Vec<_>>()
            .join(" ")
            .to_lowercase();
        if !norm.is_empty() && !out.contains(&norm) {
            out.push(norm);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub doc_id: DocId,
    pub source_key: String,
    pub annotations: Vec<String>,
    pub embedding: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pixels: Option<Raster>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub ground_truth_boxes: Vec<LabeledBox>,
    /// Relevance label for retrieval evaluation fixtures.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

impl ImageRecord {
    /// Builds a record, deriving the DocId and normalizing annotations.
    pub fn new<I, S>(source_key: &str, annotations: I, embedding: Vec<f64>) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        if let Some(bad) = embedding.iter().find(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("{source_key}: non-finite embedding value {bad}")));
        }
        Ok(Self {
            doc_id: doc_id_of(source_key)?,
            source_key: source_key.to_owned(),
            annotations: normalize_annotations(annotations),
            embedding,
            pixels: None,
            ground_truth_boxes: Vec::new(),
            label: None,
        })
    }

    pub fn with_pixels(mut self, pixels: Raster) -> Self {
        self.pixels = Some(pixels);
        self
    }

    pub fn with_boxes(mut self, boxes: Vec<LabeledBox>) -> Self {
        self.ground_truth_boxes = boxes;
        self
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }
}

/// The joined, versioned feature record for one image at one epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisualJoin {
    pub doc_id: DocId,
    pub annotations: Vec<String>,
    pub binary_code: BinaryCode,
    /// Raw embedding, kept so index builds can assign visual tokens.
    pub embedding: Vec<f64>,
    #[serde(default)]
    pub color_signature: Option<ColorSignature>,
    #[serde(default)]
    pub detected_objects: Vec<DetectedObject>,
    pub feature_versions: Vec<FeatureVersion>,
    pub epoch: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub doc_id: DocId,
    pub score: f64,
    pub visual_score: f64,
    pub metadata_score: f64,
    pub matched_tokens: u32,
}

impl SearchResult {
    /// Ranking order: score descending, then DocId ascending.
    pub fn rank_cmp(&self, other: &SearchResult) -> std::cmp::Ordering {
        other.score.total_cmp(&self.score).then(self.doc_id.cmp(&other.doc_id))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv_reference_values() {
        // Computed with an independent FNV-1a 64 implementation.
        assert_eq!(doc_id_of("a").unwrap(), DocId(0xAF63_DC4C_8601_EC8C));
        assert_eq!(doc_id_of("b").unwrap(), DocId(0xAF63_DF4C_8601_F1A5));
        assert_eq!(doc_id_of("a").unwrap(), doc_id_of("a").unwrap());
        assert!(matches!(doc_id_of(""), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn doc_id_hex_round_trip() {
        let id = DocId(0xAF63_DC4C_8601_EC8C);
        assert_eq!(id.to_string(), "af63dc4c8601ec8c");
        assert_eq!("af63dc4c8601ec8c".parse::<DocId>().unwrap(), id);
        assert_eq!("0x1".parse::<DocId>().unwrap(), DocId(1));
        assert!("zz".parse::<DocId>().is_err());
        assert_eq!(serde_json::to_string(&id).unwrap(), "\"af63dc4c8601ec8c\"");
    }

    #[test]
    fn code_byte_order_is_msb_first() {
        // dims 0 and 9 set -> byte0 = 0b1000_0000, byte1 = 0b0100_0000
        let mut code = BinaryCode::zeros(12);
        code.set(0, true);
        code.set(9, true);
        assert_eq!(code.to_bytes(), vec![0x80, 0x40]);
        assert_eq!(BinaryCode::from_bytes(&[0x80, 0x40], 12).unwrap(), code);
        assert!(BinaryCode::from_bytes(&[0x80, 0x41], 12).is_err());
        assert!(BinaryCode::from_bytes(&[0x80], 12).is_err());
    }

    #[test]
    fn complement_keeps_padding_clear() {
        let code = BinaryCode::zeros(70);
        let c = code.complement();
        assert_eq!(c.count_ones(), 70);
        assert_eq!(BinaryCode::from_bytes(&c.to_bytes(), 70).unwrap(), c);
    }

    #[test]
    fn annotations_normalized() {
        let a = normalize_annotations(["  Spring  Fashion ", "", "spring fashion", "Tote\twith flowers"]);
        assert_eq!(a, vec!["spring fashion", "tote with flowers"]);
    }

    #[test]
    fn box_validation() {
        assert!(BoundingBox::new(0, 0, 0, 5).is_err());
        assert!(BoundingBox::new(3, 0, 2, 5).is_err());
        let b: BoundingBox = serde_json::from_str("[0,0,10,10]").unwrap();
        assert_eq!(b.area(), 100);
        assert!(serde_json::from_str::<BoundingBox>("[5,5,5,6]").is_err());
    }

    #[test]
    fn record_rejects_nan() {
        assert!(ImageRecord::new("k", ["x"], vec![1.0, f64::NAN]).is_err());
    }
}
