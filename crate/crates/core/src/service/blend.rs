use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `visual` items followed by `production` items, repeated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlendRatio {
    visual: usize,
    production: usize,
}

impl BlendRatio {
    pub fn new(visual: usize, production: usize) -> Result<Self> {
        if visual == 0 && production == 0 {
            return Err(Error::invalid("blend ratio cannot be 0:0"));
        }
        Ok(Self { visual, production })
    }

    pub fn visual(&self) -> usize {
        self.visual
    }

    pub fn production(&self) -> usize {
        self.production
    }
}

impl Default for BlendRatio {
    fn default() -> Self {
        Self { visual: 1, production: 3 }
    }
}

/// Interleaves the two streams by `ratio` until one runs out, then appends
/// the rest of the other. Visual items already in `production` (or repeated
/// within `visual`) are skipped.
pub fn blend<T: PartialEq + Clone>(visual: &[T], production: &[T], ratio: BlendRatio) -> Vec<T> {
    let mut vis: Vec<&T> = Vec::with_capacity(visual.len());
    for v in visual {
        if !production.contains(v) && !vis.contains(&v) {
            vis.push(v);
        }
    }
    let mut out = Vec::with_capacity(vis.len() + production.len());
    let (mut vi, mut pi) = (0, 0);
    while vi < vis.len() && pi < production.len() {
        let v_end = (vi + ratio.visual).min(vis.len());
        out.extend(vis[vi..v_end].iter().map(|&x| x.clone()));
        vi = v_end;
        let p_end = (pi + ratio.production).min(production.len());
        out.extend_from_slice(&production[pi..p_end]);
        pi = p_end;
    }
    out.extend(vis[vi..].iter().map(|&x| x.clone()));
    out.extend_from_slice(&production[pi..]);
    out
}
