//! The online query path: root ranking over all shards, near-duplicate
//! detection, Related Pins and result blending.

mod blend;
mod neardup;
mod root;

pub use blend::{blend, BlendRatio};
pub use neardup::{near_dup, related_pins, NearDupParams, RelatedItem, RelatedPins, RelatedPinsConfig, SourceTag};
pub use root::{RootRanker, SearchRequest, SearchResponse, DEFAULT_DEADLINE};
