use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};

use super::region::Segmentation;
use super::PerceptionError;
use crate::geometry::UnitVec3;
use crate::seeding;
use crate::sim::decode_model_id;

/// Spatial grid used for pooling in the synthetic backend.
pub const GRID: usize = 4;
const GLOBAL_CELL: u64 = (GRID * GRID) as u64;
const AZIMUTH_BINS: usize = 8;

/// Feature image of a region after padding its bounding box to a square and
/// nearest-neighbour resampling it to `resolution x resolution`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedCrop {
    pub resolution: usize,
    /// Row-major feature id per cell, `None` outside the mask or where the
    /// source pixel carries no feature.
    pub cells: Vec<Option<u64>>,
}

impl NormalizedCrop {
    pub fn occupied(&self) -> impl Iterator<Item = (usize, usize, u64)> + '_ {
        let r = self.resolution;
        self.cells
            .iter()
            .enumerate()
            .filter_map(move |(k, c)| c.map(|fid| (k % r, k / r, fid)))
    }
}

pub fn pad_and_resize(seg: &Segmentation, resolution: usize) -> NormalizedCrop {
    let t = seg.square_transform(resolution);
    let mut cells = vec![None; resolution * resolution];
    for j in 0..resolution {
        for i in 0..resolution {
            let (u, v) = t.backward(i as f64 + 0.5, j as f64 + 0.5);
            if u < 0.0 || v < 0.0 {
                continue;
            }
            let (x, y) = (u.floor() as u32, v.floor() as u32);
            if !seg.mask.contains(x, y) {
                continue;
            }
            cells[j * resolution + i] = seg.sample_at(x, y).map(|s| s.sample.feature_id);
        }
    }
    NormalizedCrop { resolution, cells }
}

/// Global descriptor aggregation over a normalized crop: the slot a learned
/// place-recognition network would fill.
pub trait DescriptorBackend: Send + Sync {
    fn dim(&self) -> usize;
    fn aggregate(&self, crop: &NormalizedCrop, obs_vec: &UnitVec3) -> Vec<f64>;
}

/// Pads, resizes and aggregates a region, returning a unit-norm descriptor.
pub fn extract_descriptor(
    seg: &Segmentation,
    obs_vec: &UnitVec3,
    backend: &dyn DescriptorBackend,
    resolution: usize,
) -> Result<Vec<f64>, PerceptionError> {
    if seg.mask.count() == 0 {
        return Err(PerceptionError::EmptyRegion);
    }
    let crop = pad_and_resize(seg, resolution);
    let mut g = backend.aggregate(&crop, obs_vec);
    let n = norm(&g);
    if !(n > 0.0) {
        return Err(PerceptionError::EmptyRegion);
    }
    g.iter_mut().for_each(|x| *x /= n);
    Ok(g)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn add_scaled(acc: &mut [f64], v: &[f64], s: f64) {
    acc.iter_mut().zip(v).for_each(|(a, b)| *a += s * b);
}

fn normalized(mut v: Vec<f64>) -> Vec<f64> {
    let n = norm(&v);
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    v
}

/// Simulator-native backend. Three unit-norm parts are mixed:
/// a per-model appearance code pooled over occupied cells, a seeded random
/// projection of the (feature id, grid cell) histogram, and an azimuth
/// encoding of the observation vector.
#[derive(Debug, Clone)]
pub struct SyntheticDescriptor {
    dim: usize,
    seed: u64,
    appearance: Vec<Vec<f64>>,
    pub appearance_weight: f64,
    pub layout_weight: f64,
    pub direction_weight: f64,
}

impl SyntheticDescriptor {
    pub fn new(dim: usize, seed: u64, model_count: usize) -> Self {
        let mut rng = seeding::rng(seed, &[seeding::TAG_DESCRIPTOR, 0]);
        let raw = DMatrix::<f64>::from_fn(dim, model_count.max(1), |_, _| StandardNormal.sample(&mut rng));
        let appearance = if model_count <= dim {
            let q = raw.qr().q();
            (0..model_count).map(|m| q.column(m).iter().copied().collect()).collect()
        } else {
            (0..model_count)
                .map(|m| normalized(raw.column(m).iter().copied().collect()))
                .collect()
        };
        Self {
            dim,
            seed,
            appearance,
            appearance_weight: 0.4f64.sqrt(),
            layout_weight: 0.55f64.sqrt(),
            direction_weight: 0.05f64.sqrt(),
        }
    }

    fn rademacher(&self, key: &[u64], out: &mut [f64], scale: f64) {
        let words = self.dim.div_ceil(64);
        for w in 0..words {
            let mut tags = Vec::with_capacity(key.len() + 2);
            tags.push(seeding::TAG_DESCRIPTOR);
            tags.extend_from_slice(key);
            tags.push(w as u64);
            let bits = seeding::mix(self.seed, &tags);
            for b in 0..64 {
                let k = w * 64 + b;
                if k >= self.dim {
                    break;
                }
                out[k] += if bits >> b & 1 == 1 { scale } else { -scale };
            }
        }
    }

    fn appearance_code(&self, model_id: u32) -> Option<&[f64]> {
        self.appearance.get(model_id as usize).map(|v| v.as_slice())
    }
}

impl DescriptorBackend for SyntheticDescriptor {
    fn dim(&self) -> usize {
        self.dim
    }

    fn aggregate(&self, crop: &NormalizedCrop, obs_vec: &UnitVec3) -> Vec<f64> {
        let r = crop.resolution;
        let mut models: BTreeMap<u32, usize> = BTreeMap::new();
        let mut histogram: BTreeMap<(u64, u64), usize> = BTreeMap::new();
        for (i, j, fid) in crop.occupied() {
            *models.entry(decode_model_id(fid)).or_default() += 1;
            let cell = ((j * GRID / r) * GRID + i * GRID / r) as u64;
            *histogram.entry((fid, cell)).or_default() += 1;
            *histogram.entry((fid, GLOBAL_CELL)).or_default() += 1;
        }

        let mut appearance = vec![0.0; self.dim];
        for (&model, &count) in &models {
            match self.appearance_code(model) {
                Some(code) => add_scaled(&mut appearance, code, count as f64),
                None => self.rademacher(&[u64::MAX, model as u64], &mut appearance, count as f64),
            }
        }
        let mut layout = vec![0.0; self.dim];
        for (&(fid, cell), &count) in &histogram {
            self.rademacher(&[fid, cell], &mut layout, (count as f64).sqrt());
        }
        let mut direction = vec![0.0; self.dim];
        let (az, polar) = (obs_vec.azimuth(), obs_vec.polar());
        for k in 0..AZIMUTH_BINS {
            let centre = k as f64 * std::f64::consts::TAU / AZIMUTH_BINS as f64;
            let weight = (az - centre).cos().max(0.0) * polar.sin();
            if weight > 0.0 {
                self.rademacher(&[u64::MAX - 1, k as u64], &mut direction, weight);
            }
        }

        let mut g = vec![0.0; self.dim];
        add_scaled(&mut g, &normalized(appearance), self.appearance_weight);
        add_scaled(&mut g, &normalized(layout), self.layout_weight);
        add_scaled(&mut g, &normalized(direction), self.direction_weight);
        g
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec3;
    use crate::perception::region::RegionSample;
    use crate::sim::{FeatureSample, Mask, ObjectModel};

    fn sample(x: u32, y: u32, fid: u64) -> RegionSample {
        RegionSample {
            x,
            y,
            depth: 1.0,
            world: Vec3::zeros(),
            sample: FeatureSample {
                feature_id: fid,
                instance_id: 0,
                u: x as f64 + 0.5,
                v: y as f64 + 0.5,
                view_dir: [0.0, 0.0, 1.0],
            },
        }
    }

    fn synthetic_region(model: u32, x0: u32, y0: u32, w: u32, h: u32) -> Segmentation {
        let px: Vec<(u32, u32)> = (0..h).flat_map(|y| (0..w).map(move |x| (x0 + x, y0 + y))).collect();
        let mask = Mask::from_pixels(&px).unwrap();
        let samples = px
            .iter()
            .filter(|(x, y)| (x + y) % 3 == 0)
            .map(|&(x, y)| sample(x, y, ObjectModel::feature_id(model, ((x - x0) * 7 + (y - y0) * 13) as usize)))
            .collect();
        Segmentation { mask, samples }
    }

    /// Every pixel becomes a 2x2 block.
    fn upsampled(seg: &Segmentation) -> Segmentation {
        let px: Vec<(u32, u32)> = seg
            .mask
            .pixels()
            .flat_map(|(x, y)| [(2 * x, 2 * y), (2 * x + 1, 2 * y), (2 * x, 2 * y + 1), (2 * x + 1, 2 * y + 1)])
            .collect();
        let mut samples: Vec<RegionSample> = seg
            .samples
            .iter()
            .flat_map(|s| {
                [(0, 0), (1, 0), (0, 1), (1, 1)].map(|(dx, dy)| sample(2 * s.x + dx, 2 * s.y + dy, s.sample.feature_id))
            })
            .collect();
        samples.sort_by_key(|s| (s.y, s.x));
        Segmentation {
            mask: Mask::from_pixels(&px).unwrap(),
            samples,
        }
    }

    fn e() -> UnitVec3 {
        UnitVec3::new(Vec3::new(0.3, -0.8, 0.7)).unwrap()
    }

    #[test]
    fn descriptor_is_unit_and_deterministic() {
        let backend = SyntheticDescriptor::new(128, 3, 24);
        let seg = synthetic_region(4, 100, 80, 37, 22);
        let a = extract_descriptor(&seg, &e(), &backend, 64).unwrap();
        let b = extract_descriptor(&seg, &e(), &SyntheticDescriptor::new(128, 3, 24), 64).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 128);
        assert!((norm(&a) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn upsampling_is_absorbed() {
        let backend = SyntheticDescriptor::new(128, 3, 24);
        for (w, h) in [(37, 22), (20, 41), (30, 30)] {
            let seg = synthetic_region(7, 101, 57, w, h);
            let big = upsampled(&seg);
            let a = extract_descriptor(&seg, &e(), &backend, 64).unwrap();
            let b = extract_descriptor(&big, &e(), &backend, 64).unwrap();
            assert!(dot(&a, &b) > 0.995, "{w}x{h}: {}", dot(&a, &b));
            let diff: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            assert!(diff < 0.05);
        }
    }

    #[test]
    fn different_models_are_less_similar() {
        let backend = SyntheticDescriptor::new(128, 0, 24);
        let (mut same, mut other) = (0.0, 0.0);
        for m in 0..24 {
            let a = extract_descriptor(&synthetic_region(m, 50, 50, 30, 24), &e(), &backend, 64).unwrap();
            let a2 = extract_descriptor(&synthetic_region(m, 200, 90, 28, 26), &e(), &backend, 64).unwrap();
            let b = extract_descriptor(&synthetic_region((m + 1) % 24, 50, 50, 30, 24), &e(), &backend, 64).unwrap();
            same += dot(&a, &a2);
            other += dot(&a, &b);
        }
        assert!(same > other + 24.0 * 0.3, "same {same} other {other}");
    }

    #[test]
    fn empty_mask_is_rejected() {
        let seg = Segmentation {
            mask: Mask {
                x0: 0,
                y0: 0,
                width: 2,
                height: 2,
                bits: vec![false; 4],
            },
            samples: vec![],
        };
        let backend = SyntheticDescriptor::new(16, 0, 2);
        assert!(matches!(
            extract_descriptor(&seg, &e(), &backend, 64),
            Err(PerceptionError::EmptyRegion)
        ));
    }

    #[test]
    fn appearance_codes_are_orthonormal() {
        let backend = SyntheticDescriptor::new(128, 9, 24);
        for a in 0..24 {
            for b in 0..24 {
                let d = dot(&backend.appearance[a], &backend.appearance[b]);
                assert!((d - if a == b { 1.0 } else { 0.0 }).abs() < 1e-12);
            }
        }
    }
}
