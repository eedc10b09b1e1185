use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Frame, NO_INSTANCE};
use crate::seeding;

/// Corruption applied to the ground-truth instance masks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmentationNoise {
    /// Probability that an instance is missed entirely.
    pub drop_prob: f64,
    /// Erosion radius in pixels (square structuring element).
    pub erosion_px: u32,
    pub seed: u64,
}

impl Default for SegmentationNoise {
    fn default() -> Self {
        Self {
            drop_prob: 0.0,
            erosion_px: 0,
            seed: 0,
        }
    }
}

impl SegmentationNoise {
    pub fn none() -> Self {
        Self::default()
    }
}

/// Binary mask stored as its bounding box.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mask {
    pub x0: u32,
    pub y0: u32,
    pub width: u32,
    pub height: u32,
    /// Row-major `width x height`.
    pub bits: Vec<bool>,
}

impl Mask {
    pub fn from_pixels(pixels: &[(u32, u32)]) -> Option<Mask> {
        let x0 = pixels.iter().map(|p| p.0).min()?;
        let y0 = pixels.iter().map(|p| p.1).min()?;
        let x1 = pixels.iter().map(|p| p.0).max()?;
        let y1 = pixels.iter().map(|p| p.1).max()?;
        let (width, height) = (x1 - x0 + 1, y1 - y0 + 1);
        let mut bits = vec![false; (width * height) as usize];
        for &(x, y) in pixels {
            bits[((y - y0) * width + (x - x0)) as usize] = true;
        }
        Some(Mask {
            x0,
            y0,
            width,
            height,
            bits,
        })
    }

    pub fn contains(&self, x: u32, y: u32) -> bool {
        x >= self.x0
            && y >= self.y0
            && x < self.x0 + self.width
            && y < self.y0 + self.height
            && self.bits[((y - self.y0) * self.width + (x - self.x0)) as usize]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn pixels(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(k, _)| (self.x0 + k as u32 % self.width, self.y0 + k as u32 / self.width))
    }

    /// Morphological erosion with a `(2r+1)²` square; pixels outside the
    /// bounding box count as background. `None` when nothing survives.
    pub fn eroded(&self, r: u32) -> Option<Mask> {
        if r == 0 {
            return Some(self.clone());
        }
        let r = r as i64;
        let (w, h) = (self.width as i64, self.height as i64);
        let inside = |x: i64, y: i64| x >= 0 && y >= 0 && x < w && y < h && self.bits[(y * w + x) as usize];
        let kept: Vec<(u32, u32)> = (0..h)
            .flat_map(|y| (0..w).map(move |x| (x, y)))
            .filter(|&(x, y)| (-r..=r).all(|dy| (-r..=r).all(|dx| inside(x + dx, y + dy))))
            .map(|(x, y)| (self.x0 + x as u32, self.y0 + y as u32))
            .collect();
        Mask::from_pixels(&kept)
    }
}

/// Per-instance masks for a frame, ordered by instance id. Stands in for a
/// detector + promptable segmenter: ground truth with optional dropout and
/// erosion.
pub fn segment(frame: &Frame, noise: &SegmentationNoise) -> Vec<(u32, Mask)> {
    let w = frame.width();
    let mut pixels: BTreeMap<u32, Vec<(u32, u32)>> = BTreeMap::new();
    for (k, &id) in frame.instances.iter().enumerate() {
        if id != NO_INSTANCE {
            pixels.entry(id).or_default().push((k as u32 % w, k as u32 / w));
        }
    }
    pixels
        .into_iter()
        .filter_map(|(id, px)| {
            if noise.drop_prob > 0.0 {
                let mut rng = seeding::rng(noise.seed, &[seeding::TAG_SEGMENT, frame.frame_id as u64, id as u64]);
                if rng.random::<f64>() < noise.drop_prob {
                    return None;
                }
            }
            let mask = Mask::from_pixels(&px)?.eroded(noise.erosion_px)?;
            Some((id, mask))
        })
        .collect()
}
