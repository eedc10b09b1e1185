use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::SimConfig;
use crate::geometry::Vec3;
use crate::seeding;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeFamily {
    Box,
    Cylinder,
    LPrism,
}

/// Point-sampled object surface. The local frame has its origin at the
/// footprint center on the table plane with z up.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectModel {
    pub model_id: u32,
    pub family: ShapeFamily,
    pub points: Vec<Vec3>,
    pub normals: Vec<Vec3>,
    pub feature_ids: Vec<u64>,
    /// Row-major `points.len() x descriptor_dim`, each row unit norm.
    pub descriptors: Vec<f32>,
    pub descriptor_dim: usize,
    pub footprint_radius: f64,
    pub height: f64,
    /// Sampling spacing used to build the surface, meters.
    pub spacing: f64,
}

impl ObjectModel {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn descriptor(&self, index: usize) -> &[f32] {
        &self.descriptors[index * self.descriptor_dim..(index + 1) * self.descriptor_dim]
    }

    pub fn feature_id(model_id: u32, index: usize) -> u64 {
        ((model_id as u64 + 1) << 32) | index as u64
    }

    /// Index of a feature id within its model.
    pub fn point_index(feature_id: u64) -> usize {
        (feature_id & 0xffff_ffff) as usize
    }
}

pub fn decode_model_id(feature_id: u64) -> u32 {
    ((feature_id >> 32) - 1) as u32
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelLibrary {
    pub seed: u64,
    pub models: Vec<ObjectModel>,
}

impl ModelLibrary {
    pub fn get(&self, model_id: u32) -> Option<&ObjectModel> {
        self.models.get(model_id as usize).filter(|m| m.model_id == model_id)
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    /// Point descriptor for a global feature id.
    pub fn point_descriptor(&self, feature_id: u64) -> Option<&[f32]> {
        let model = self.get(decode_model_id(feature_id))?;
        let idx = ObjectModel::point_index(feature_id);
        (idx < model.len()).then(|| model.descriptor(idx))
    }
}

/// Procedural stand-in for a scanned-object asset library. Families cycle
/// box, cylinder, L-prism; dimensions and per-point descriptors come from the
/// library seed.
pub fn generate_model_library(config: &SimConfig) -> ModelLibrary {
    let models = (0..config.library_size)
        .map(|i| {
            let mut rng = seeding::rng(config.library_seed, &[seeding::TAG_LIBRARY, i as u64]);
            let family = match i % 3 {
                0 => ShapeFamily::Box,
                1 => ShapeFamily::Cylinder,
                _ => ShapeFamily::LPrism,
            };
            build_model(i as u32, family, config.point_spacing, config.point_descriptor_dim, &mut rng)
        })
        .collect();
    ModelLibrary {
        seed: config.library_seed,
        models,
    }
}

struct SurfaceBuilder<'a, R: Rng> {
    spacing: f64,
    rng: &'a mut R,
    points: Vec<Vec3>,
    normals: Vec<Vec3>,
}

impl<'a, R: Rng> SurfaceBuilder<'a, R> {
    fn jitter(&mut self) -> f64 {
        self.rng.random_range(-0.4..0.4)
    }

    /// Stratified samples on the parallelogram `origin + s*ea + t*eb`,
    /// `s,t in [0,1]`, kept where `keep` holds.
    fn patch(&mut self, origin: Vec3, ea: Vec3, eb: Vec3, normal: Vec3, keep: impl Fn(&Vec3) -> bool) {
        let na = ((ea.norm() / self.spacing).round() as usize).max(1);
        let nb = ((eb.norm() / self.spacing).round() as usize).max(1);
        for ia in 0..na {
            for ib in 0..nb {
                let s = (ia as f64 + 0.5 + self.jitter()) / na as f64;
                let t = (ib as f64 + 0.5 + self.jitter()) / nb as f64;
                let p = origin + ea * s + eb * t;
                if keep(&p) {
                    self.points.push(p);
                    self.normals.push(normal);
                }
            }
        }
    }

    /// Vertical side wall along the segment `a -> b` of a counter-clockwise
    /// outline.
    fn wall(&mut self, a: (f64, f64), b: (f64, f64), height: f64) {
        let d = Vec3::new(b.0 - a.0, b.1 - a.1, 0.0);
        let normal = Vec3::new(d.y, -d.x, 0.0).normalize();
        self.patch(Vec3::new(a.0, a.1, 0.0), d, Vec3::new(0.0, 0.0, height), normal, |_| true);
    }
}

fn build_model<R: Rng>(model_id: u32, family: ShapeFamily, spacing: f64, dim: usize, rng: &mut R) -> ObjectModel {
    let mut sb = SurfaceBuilder {
        spacing,
        rng,
        points: Vec::new(),
        normals: Vec::new(),
    };
    let height;
    match family {
        ShapeFamily::Box => {
            let hx = sb.rng.random_range(0.025..0.05);
            let hy = sb.rng.random_range(0.02..0.045);
            height = sb.rng.random_range(0.04..0.12);
            let outline = [(-hx, -hy), (hx, -hy), (hx, hy), (-hx, hy)];
            prism(&mut sb, &outline, height, |_| true);
        }
        ShapeFamily::Cylinder => {
            let r = sb.rng.random_range(0.025..0.05);
            height = sb.rng.random_range(0.04..0.12);
            let cols = ((2.0 * PI * r / spacing).round() as usize).max(8);
            let rows = ((height / spacing).round() as usize).max(1);
            for c in 0..cols {
                for k in 0..rows {
                    let a = 2.0 * PI * (c as f64 + 0.5 + sb.jitter()) / cols as f64;
                    let z = height * (k as f64 + 0.5 + sb.jitter()) / rows as f64;
                    let n = Vec3::new(a.cos(), a.sin(), 0.0);
                    sb.points.push(Vec3::new(r * n.x, r * n.y, z));
                    sb.normals.push(n);
                }
            }
            let inside = move |p: &Vec3| p.x * p.x + p.y * p.y <= r * r;
            let (o, ea, eb) = (Vec3::new(-r, -r, 0.0), Vec3::new(2.0 * r, 0.0, 0.0), Vec3::new(0.0, 2.0 * r, 0.0));
            sb.patch(o + Vec3::new(0.0, 0.0, height), ea, eb, Vec3::z(), inside);
            sb.patch(o, ea, eb, -Vec3::z(), inside);
        }
        ShapeFamily::LPrism => {
            let a = sb.rng.random_range(0.06..0.1);
            let b = sb.rng.random_range(0.05..0.09);
            let wa = sb.rng.random_range(0.02..0.035);
            let wb = sb.rng.random_range(0.02..0.035);
            height = sb.rng.random_range(0.03..0.1);
            let (x0, y0, x1, y1) = (-a / 2.0, -b / 2.0, a / 2.0, b / 2.0);
            let outline = [(x0, y0), (x1, y0), (x1, y0 + wb), (x0 + wa, y0 + wb), (x0 + wa, y1), (x0, y1)];
            prism(&mut sb, &outline, height, move |p| p.x <= x0 + wa || p.y <= y0 + wb);
        }
    }

    let points = sb.points;
    let normals = sb.normals;
    let footprint_radius = points.iter().map(|p| p.x.hypot(p.y)).fold(0.0, f64::max);
    let feature_ids = (0..points.len()).map(|i| ObjectModel::feature_id(model_id, i)).collect();
    let mut descriptors = Vec::with_capacity(points.len() * dim);
    for _ in 0..points.len() {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut *sb.rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        descriptors.extend(v.iter().map(|x| (x / n) as f32));
    }
    ObjectModel {
        model_id,
        family,
        points,
        normals,
        feature_ids,
        descriptors,
        descriptor_dim: dim,
        footprint_radius,
        height,
        spacing,
    }
}

/// Extruded counter-clockwise outline with top and bottom caps.
fn prism<R: Rng>(sb: &mut SurfaceBuilder<'_, R>, outline: &[(f64, f64)], height: f64, inside: impl Fn(&Vec3) -> bool + Copy) {
    for i in 0..outline.len() {
        sb.wall(outline[i], outline[(i + 1) % outline.len()], height);
    }
    let (mut lo, mut hi) = ((f64::MAX, f64::MAX), (f64::MIN, f64::MIN));
    for &(x, y) in outline {
        lo = (lo.0.min(x), lo.1.min(y));
        hi = (hi.0.max(x), hi.1.max(y));
    }
    let ea = Vec3::new(hi.0 - lo.0, 0.0, 0.0);
    let eb = Vec3::new(0.0, hi.1 - lo.1, 0.0);
    sb.patch(Vec3::new(lo.0, lo.1, height), ea, eb, Vec3::z(), inside);
    sb.patch(Vec3::new(lo.0, lo.1, 0.0), ea, eb, -Vec3::z(), inside);
}
