//! Visual vocabulary: k-means centroids and nearest-codeword assignment.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::kmeans::{kmeans, squared_distance};
use crate::error::{Error, Result};
use crate::model::fnv1a64;

const MAGIC: &[u8; 4] = b"PQCB";
const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 4 + 4 + 8 + 8;
pub const DEFAULT_MAX_ITER: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct VisualToken(pub u32);

#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    centroids: Vec<Vec<f64>>,
    dim: usize,
    trained_on: u64,
    seed: u64,
}

pub fn train_codebook(samples: &[Vec<f64>], k: usize, seed: u64) -> Result<Codebook> {
    train_codebook_with(samples, k, seed, DEFAULT_MAX_ITER)
}

pub fn train_codebook_with(
    samples: &[Vec<f64>],
    k: usize,
    seed: u64,
    max_iter: usize,
) -> Result<Codebook> {
    let distinct: HashSet<Vec<u64>> = samples
        .iter()
        .map(|s| s.iter().map(|v| v.to_bits()).collect())
        .collect();
    if distinct.len() < k {
        return Err(Error::invalid(format!(
            "{} distinct samples cannot train {k} codewords",
            distinct.len()
        )));
    }
    let out = kmeans(samples, k, seed, max_iter)?;
    Codebook::new(out.centroids, samples.len() as u64, seed)
}

impl Codebook {
    pub fn new(centroids: Vec<Vec<f64>>, trained_on: u64, seed: u64) -> Result<Self> {
        let dim = centroids
            .first()
            .map(Vec::len)
            .ok_or_else(|| Error::invalid("codebook needs at least one centroid"))?;
        if centroids.iter().any(|c| c.len() != dim) {
            return Err(Error::invalid("centroids differ in dimension"));
        }
        let mut seen = HashSet::new();
        for c in &centroids {
            if !seen.insert(c.iter().map(|v| v.to_bits()).collect::<Vec<_>>()) {
                return Err(Error::invalid("codebook contains duplicate centroids"));
            }
        }
        Ok(Self { centroids, dim, trained_on, seed })
    }

    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn centroids(&self) -> &[Vec<f64>] {
        &self.centroids
    }

    pub fn trained_on(&self) -> u64 {
        self.trained_on
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// The `m` nearest codewords, nearest first; equal distances go to the
    /// lower token id.
    pub fn quantize(&self, embedding: &[f64], m: usize) -> Result<Vec<VisualToken>> {
        if m == 0 || m > self.k() {
            return Err(Error::invalid(format!("m must be in 1..={}, got {m}", self.k())));
        }
        if embedding.len() != self.dim {
            return Err(Error::invalid(format!(
                "embedding has {} dims, codebook has {}",
                embedding.len(),
                self.dim
            )));
        }
        let mut scored: Vec<(f64, u32)> = self
            .centroids
            .iter()
            .enumerate()
            .map(|(i, c)| (squared_distance(embedding, c), i as u32))
            .collect();
        if m < scored.len() {
            scored.select_nth_unstable_by(m - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            scored.truncate(m);
        }
        scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        Ok(scored.into_iter().map(|(_, id)| VisualToken(id)).collect())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.k() * self.dim * 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.k() as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.extend_from_slice(&self.trained_on.to_le_bytes());
        for v in self.centroids.iter().flatten() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
            return Err(Error::corrupt("not a codebook file (bad magic)"));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
        let version = u32_at(4);
        if version != FORMAT_VERSION {
            return Err(Error::corrupt(format!("unsupported codebook version {version}")));
        }
        let k = u32_at(8) as usize;
        let dim = u32_at(12) as usize;
        let seed = u64_at(16);
        let trained_on = u64_at(24);
        let body = &bytes[HEADER_LEN..];
        if k == 0 || dim == 0 || body.len() != k * dim * 8 {
            return Err(Error::corrupt(format!(
                "codebook body is {} bytes, header promises {k}x{dim} f64",
                body.len()
            )));
        }
        let values: Vec<f64> = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let centroids = values.chunks_exact(dim).map(<[f64]>::to_vec).collect();
        Codebook::new(centroids, trained_on, seed).map_err(|e| Error::corrupt(e.to_string()))
    }

    /// FNV-1a 64 over the serialized file; shard files pin this value.
    pub fn checksum(&self) -> u64 {
        fnv1a64(&self.to_bytes())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)
            .map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;
    use proptest::prelude::*;
    use rand_distr::{Distribution, StandardNormal};

    fn two() -> Codebook {
        Codebook::new(vec![vec![0.0, 0.0], vec![10.0, 10.0]], 2, 0).unwrap()
    }

    #[test]
    fn nearest_and_ties() {
        let cb = two();
        assert_eq!(cb.quantize(&[1.0, 1.0], 1).unwrap(), vec![VisualToken(0)]);
        assert_eq!(cb.quantize(&[5.0, 5.0], 1).unwrap(), vec![VisualToken(0)]);
        assert_eq!(cb.quantize(&[9.0, 9.0], 2).unwrap(), vec![VisualToken(1), VisualToken(0)]);
        assert!(cb.quantize(&[1.0, 1.0], 0).is_err());
        assert!(cb.quantize(&[1.0, 1.0], 3).is_err());
        assert!(cb.quantize(&[1.0], 1).is_err());
    }

    #[test]
    fn recovers_separated_clusters() {
        let means = [[0.0, 0.0], [20.0, 0.0], [0.0, 20.0]];
        let sigma = 1.0;
        let mut rng = SplitMix64::new(11);
        let samples: Vec<Vec<f64>> = (0..300)
            .map(|i| {
                let m = means[i % 3];
                (0..2)
                    .map(|d| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        m[d] + sigma * z
                    })
                    .collect()
            })
            .collect();
        let cb = train_codebook(&samples, 3, 5).unwrap();
        for c in cb.centroids() {
            let best = means
                .iter()
                .map(|m| squared_distance(c, m).sqrt())
                .fold(f64::INFINITY, f64::min);
            assert!(best < 3.0 * sigma, "centroid {c:?} is {best} from every true mean");
        }
        assert_eq!(cb.trained_on(), 300);
        assert_eq!(cb.seed(), 5);
    }

    #[test]
    fn single_codeword_is_mean() {
        let s = vec![vec![1.0], vec![2.0], vec![6.0]];
        let cb = train_codebook(&s, 1, 0).unwrap();
        assert!((cb.centroids()[0][0] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn duplicates_only_fail_below_k() {
        let s = vec![vec![1.0], vec![1.0], vec![1.0], vec![2.0]];
        assert!(train_codebook(&s, 2, 0).is_ok());
        assert!(train_codebook(&s, 3, 0).is_err());
    }

    #[test]
    fn file_round_trip_and_corruption() {
        let cb = Codebook::new(vec![vec![0.5, -1.25], vec![3.0, 1e-300]], 77, 9).unwrap();
        let bytes = cb.to_bytes();
        assert_eq!(&bytes[..4], b"PQCB");
        assert_eq!(Codebook::from_bytes(&bytes).unwrap(), cb);
        assert!(Codebook::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Codebook::from_bytes(&bad).is_err());
        assert_ne!(cb.checksum(), two().checksum());
    }

    proptest! {
        #[test]
        fn single_assignment_is_argmin(seed in any::<u64>(), k in 1usize..12) {
            let mut rng = SplitMix64::new(seed);
            let cents: Vec<Vec<f64>> = (0..k).map(|_| (0..3).map(|_| rng.next_f64()).collect()).collect();
            let cb = Codebook::new(cents.clone(), 0, 0).unwrap();
            let q: Vec<f64> = (0..3).map(|_| rng.next_f64()).collect();
            let mut best = 0;
            for i in 1..k {
                if squared_distance(&q, &cents[i]) < squared_distance(&q, &cents[best]) {
                    best = i;
                }
            }
            prop_assert_eq!(cb.quantize(&q, 1).unwrap(), vec![VisualToken(best as u32)]);
            let all = cb.quantize(&q, k).unwrap();
            let mut ids: Vec<u32> = all.iter().map(|t| t.0).collect();
            ids.sort();
            prop_assert_eq!(ids, (0..k as u32).collect::<Vec<_>>());
        }
    }
}
