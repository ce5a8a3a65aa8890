//! Salient colour signatures in CIE L*a*b*.

use std::collections::HashSet;

use super::kmeans::kmeans;
use crate::error::{Error, Result};
use crate::model::{ColorCluster, ColorSignature, Lab, Raster};

/// Salient pixels beyond this count are strided down before clustering.
pub const MAX_COLOR_SAMPLES: usize = 4096;
const COLOR_MAX_ITER: usize = 50;

// sRGB -> XYZ (D65).
const RGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.412_456_4, 0.357_576_1, 0.180_437_5],
    [0.212_672_9, 0.715_152_2, 0.072_175_0],
    [0.019_333_9, 0.119_192_0, 0.950_304_1],
];

fn linearize(c: u8) -> f64 {
    let c = c as f64 / 255.0;
    if c <= 0.040_45 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

fn lab_f(t: f64) -> f64 {
    const DELTA: f64 = 6.0 / 29.0;
    if t > DELTA * DELTA * DELTA {
        t.cbrt()
    } else {
        t / (3.0 * DELTA * DELTA) + 4.0 / 29.0
    }
}

pub fn rgb_to_lab(rgb: [u8; 3]) -> Lab {
    let lin = rgb.map(linearize);
    let xyz = RGB_TO_XYZ.map(|row| row[0] * lin[0] + row[1] * lin[1] + row[2] * lin[2]);
    // Reference white is the image of sRGB white, so neutrals land on a = b = 0.
    let white = RGB_TO_XYZ.map(|row| row[0] + row[1] + row[2]);
    let [fx, fy, fz] = [0, 1, 2].map(|i| lab_f(xyz[i] / white[i]));
    Lab { l: 116.0 * fy - 16.0, a: 500.0 * (fx - fy), b: 200.0 * (fy - fz) }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SalientMask {
    pub width: u32,
    pub height: u32,
    pub bits: Vec<bool>,
}

impl SalientMask {
    /// The centred rectangle covering half the width and half the height.
    pub fn center(width: u32, height: u32) -> Self {
        let (x0, w) = (width / 4, (width / 2).max(1));
        let (y0, h) = (height / 4, (height / 2).max(1));
        let bits = (0..height)
            .flat_map(|y| (0..width).map(move |x| (x0..x0 + w).contains(&x) && (y0..y0 + h).contains(&y)))
            .collect();
        Self { width, height, bits }
    }

    pub fn full(width: u32, height: u32) -> Self {
        Self { width, height, bits: vec![true; width as usize * height as usize] }
    }
}

/// k-means over the Lab values of salient pixels. Clusters are sorted by
/// weight, heaviest first; identical colours never split into separate
/// clusters.
pub fn color_signature(
    raster: &Raster,
    mask: Option<&SalientMask>,
    k: usize,
    seed: u64,
) -> Result<ColorSignature> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    let default_mask;
    let mask = match mask {
        Some(m) => m,
        None => {
            default_mask = SalientMask::center(raster.width, raster.height);
            &default_mask
        }
    };
    if mask.width != raster.width || mask.height != raster.height {
        return Err(Error::invalid(format!(
            "mask is {}x{}, raster is {}x{}",
            mask.width, mask.height, raster.width, raster.height
        )));
    }
    let salient: Vec<[u8; 3]> = raster
        .pixels
        .iter()
        .zip(&mask.bits)
        .filter_map(|(p, &on)| on.then_some(*p))
        .collect();
    let stride = salient.len().div_ceil(MAX_COLOR_SAMPLES).max(1);
    let sampled: Vec<[u8; 3]> = salient.into_iter().step_by(stride).collect();
    if sampled.len() < k {
        return Err(Error::InsufficientInput(format!(
            "{} salient pixels for {k} colour clusters",
            sampled.len()
        )));
    }

    let points: Vec<Vec<f64>> = sampled
        .iter()
        .map(|&p| {
            let lab = rgb_to_lab(p);
            vec![lab.l, lab.a, lab.b]
        })
        .collect();
    let distinct = sampled.iter().collect::<HashSet<_>>().len();
    let out = kmeans(&points, k.min(distinct), seed, COLOR_MAX_ITER)?;

    let mut counts = vec![0usize; out.centroids.len()];
    for &a in &out.assignments {
        counts[a] += 1;
    }
    let total = points.len() as f64;
    let mut clusters: Vec<(usize, ColorCluster)> = out
        .centroids
        .iter()
        .zip(&counts)
        .enumerate()
        .filter(|(_, (_, &c))| c > 0)
        .map(|(i, (c, &n))| {
            (i, ColorCluster { centroid: Lab { l: c[0], a: c[1], b: c[2] }, weight: n as f64 / total })
        })
        .collect();
    clusters.sort_by(|(ia, a), (ib, b)| b.weight.total_cmp(&a.weight).then(ia.cmp(ib)));
    Ok(ColorSignature { clusters: clusters.into_iter().map(|(_, c)| c).collect(), k })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: Lab, l: f64, aa: f64, b: f64, tol: f64) -> bool {
        (a.l - l).abs() < tol && (a.a - aa).abs() < tol && (a.b - b).abs() < tol
    }

    #[test]
    fn reference_colours() {
        assert!(close(rgb_to_lab([255, 255, 255]), 100.0, 0.0, 0.0, 1e-2));
        assert!(close(rgb_to_lab([0, 0, 0]), 0.0, 0.0, 0.0, 1e-9));
        let gray = rgb_to_lab([128, 128, 128]);
        assert!(gray.a.abs() < 1e-2 && gray.b.abs() < 1e-2);
        // Published D65 values for pure sRGB red.
        assert!(close(rgb_to_lab([255, 0, 0]), 53.2408, 80.0925, 67.2032, 1e-2));
    }

    #[test]
    fn uniform_image_collapses() {
        let raster = Raster::filled(16, 16, [255, 0, 0]);
        let sig = color_signature(&raster, None, 3, 1).unwrap();
        assert_eq!(sig.clusters.len(), 1);
        assert_eq!(sig.clusters[0].weight, 1.0);
        let red = rgb_to_lab([255, 0, 0]);
        assert!(close(sig.clusters[0].centroid, red.l, red.a, red.b, 1e-9));
    }

    #[test]
    fn half_black_half_white() {
        let mut raster = Raster::filled(20, 10, [0, 0, 0]);
        for y in 0..10 {
            for x in 10..20 {
                raster.put(x, y, [255, 255, 255]);
            }
        }
        let mask = SalientMask::full(20, 10);
        let truth_white = mask.bits.iter().zip(&raster.pixels).filter(|(&m, p)| m && **p == [255, 255, 255]).count();
        let expected = truth_white as f64 / 200.0;
        let sig = color_signature(&raster, Some(&mask), 2, 4).unwrap();
        assert_eq!(sig.clusters.len(), 2);
        for c in &sig.clusters {
            assert!((c.weight - expected).abs() <= 0.01);
        }
        let sum: f64 = sig.clusters.iter().map(|c| c.weight).sum();
        assert!((sum - 1.0).abs() < 1e-6);
    }

    #[test]
    fn default_mask_is_center() {
        let m = SalientMask::center(8, 8);
        assert_eq!(m.bits.iter().filter(|b| **b).count(), 16);
        assert!(m.bits[2 * 8 + 2] && !m.bits[0] && !m.bits[6 * 8 + 6]);
    }

    #[test]
    fn errors() {
        let raster = Raster::filled(2, 2, [1, 2, 3]);
        assert!(matches!(
            color_signature(&raster, None, 2, 0),
            Err(Error::InsufficientInput(_))
        ));
        let mask = SalientMask::full(3, 2);
        assert!(color_signature(&raster, Some(&mask), 1, 0).is_err());
    }

    #[test]
    fn weights_sum_to_one_on_noise() {
        let mut rng = crate::rng::SplitMix64::new(8);
        let pixels = (0..64 * 64).map(|_| [rng.next() as u8, rng.next() as u8, rng.next() as u8]).collect();
        let raster = Raster::new(64, 64, pixels).unwrap();
        let sig = color_signature(&raster, None, 5, 3).unwrap();
        let sum: f64 = sig.clusters.iter().map(|c| c.weight).sum();
        assert!((sum - 1.0).abs() < 1e-6);
        assert!(sig.clusters.windows(2).all(|w| w[0].weight >= w[1].weight));
    }
}
