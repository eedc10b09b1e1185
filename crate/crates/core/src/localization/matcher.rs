use std::collections::{HashMap, HashSet};
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::perception::Segmentation;
use crate::seeding;
use crate::sim::ModelLibrary;

/// One correspondence in matching coordinates: both crops padded to a square
/// and resized to `resolution x resolution`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Match2D {
    pub goal: [f64; 2],
    pub candidate: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Correspondences2D {
    pub resolution: usize,
    pub matches: Vec<Match2D>,
}

impl Correspondences2D {
    pub fn len(&self) -> usize {
        self.matches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matches.is_empty()
    }
}

/// Local feature matching between a goal crop and a candidate crop. The
/// `stream` identifies the pair so that stochastic matchers stay
/// deterministic.
pub trait MatcherBackend: Send + Sync {
    fn match_regions(&self, goal: &Segmentation, candidate: &Segmentation, resolution: usize, stream: u64)
        -> Correspondences2D;
}

fn in_square(p: (f64, f64), resolution: usize) -> bool {
    let r = resolution as f64;
    p.0 >= 0.0 && p.1 >= 0.0 && p.0 < r && p.1 < r
}

fn view_angle_deg(a: &[f32; 3], b: &[f32; 3]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum();
    d.clamp(-1.0, 1.0).acos().to_degrees()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleMatcherConfig {
    /// Fraction of true matches removed.
    pub drop_rate: f64,
    /// Gaussian noise on goal-side locations, source-image pixels.
    pub sigma_px: f64,
    /// Fraction of matches whose goal location is replaced by a uniformly
    /// random point of the goal crop.
    pub outlier_rate: f64,
    /// Largest change in local viewing direction across which a surface
    /// point is still recognized, degrees.
    pub max_view_angle_deg: f64,
    pub seed: u64,
}

impl Default for OracleMatcherConfig {
    fn default() -> Self {
        Self {
            drop_rate: 0.0,
            sigma_px: 0.0,
            outlier_rate: 0.0,
            max_view_angle_deg: 55.0,
            seed: 0,
        }
    }
}

/// Pairs pixels that show the same surface point, then corrupts the set.
#[derive(Debug, Clone, Default)]
pub struct OracleMatcher {
    pub config: OracleMatcherConfig,
}

impl OracleMatcher {
    pub fn new(config: OracleMatcherConfig) -> Self {
        Self { config }
    }
}

impl MatcherBackend for OracleMatcher {
    fn match_regions(
        &self,
        goal: &Segmentation,
        candidate: &Segmentation,
        resolution: usize,
        stream: u64,
    ) -> Correspondences2D {
        let cfg = &self.config;
        let tg = goal.square_transform(resolution);
        let tc = candidate.square_transform(resolution);
        let by_feature: HashMap<u64, usize> = candidate
            .samples
            .iter()
            .enumerate()
            .map(|(i, s)| (s.sample.feature_id, i))
            .collect();
        let mut rng = seeding::rng(cfg.seed, &[seeding::TAG_MATCH, stream]);
        let noise = Normal::new(0.0, cfg.sigma_px.max(0.0)).expect("finite sigma");
        let (gx0, gy0) = (goal.mask.x0 as f64, goal.mask.y0 as f64);
        let (gw, gh) = (goal.mask.width as f64, goal.mask.height as f64);

        let mut seen = HashSet::new();
        let mut matches = Vec::new();
        for gs in &goal.samples {
            let Some(&ci) = by_feature.get(&gs.sample.feature_id) else {
                continue;
            };
            let cs = &candidate.samples[ci];
            if view_angle_deg(&gs.sample.view_dir, &cs.sample.view_dir) > cfg.max_view_angle_deg {
                continue;
            }
            // draws happen in a fixed order per surviving pair
            let dropped = rng.random::<f64>() < cfg.drop_rate;
            let outlier = rng.random::<f64>() < cfg.outlier_rate;
            let (nu, nv) = (noise.sample(&mut rng), noise.sample(&mut rng));
            let (ou, ov) = (rng.random::<f64>(), rng.random::<f64>());
            if dropped {
                continue;
            }
            let (u, v) = if outlier {
                (gx0 + ou * gw, gy0 + ov * gh)
            } else {
                (gs.sample.u + nu, gs.sample.v + nv)
            };
            let g = tg.forward(u, v);
            let c = tc.forward(cs.x as f64 + 0.5, cs.y as f64 + 0.5);
            if !in_square(g, resolution) || !in_square(c, resolution) {
                continue;
            }
            if !seen.insert((g.0.to_bits(), g.1.to_bits())) {
                continue;
            }
            matches.push(Match2D {
                goal: [g.0, g.1],
                candidate: [c.0, c.1],
            });
        }
        Correspondences2D { resolution, matches }
    }
}

/// Mutual nearest neighbours over per-point descriptors with a ratio test.
#[derive(Debug, Clone)]
pub struct DescriptorNNMatcher {
    pub library: Arc<ModelLibrary>,
    pub ratio: f64,
}

impl DescriptorNNMatcher {
    pub fn new(library: Arc<ModelLibrary>) -> Self {
        Self { library, ratio: 0.8 }
    }
}

fn sq_dist(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (*x as f64 - *y as f64).powi(2)).sum()
}

/// Index of the nearest and the ratio of nearest to second-nearest distance.
fn nearest_two(query: &[f32], pool: &[&[f32]]) -> Option<(usize, f64)> {
    let (mut best, mut d1, mut d2) = (None, f64::INFINITY, f64::INFINITY);
    for (i, d) in pool.iter().enumerate() {
        let dist = sq_dist(query, d);
        if dist < d1 {
            d2 = d1;
            d1 = dist;
            best = Some(i);
        } else if dist < d2 {
            d2 = dist;
        }
    }
    let ratio = if d2 > 0.0 { (d1 / d2).sqrt() } else if d1 > 0.0 { 1.0 } else { 0.0 };
    best.map(|i| (i, ratio))
}

impl MatcherBackend for DescriptorNNMatcher {
    fn match_regions(
        &self,
        goal: &Segmentation,
        candidate: &Segmentation,
        resolution: usize,
        _stream: u64,
    ) -> Correspondences2D {
        let lookup = |seg: &Segmentation| -> Vec<(usize, &[f32])> {
            seg.samples
                .iter()
                .enumerate()
                .filter_map(|(i, s)| self.library.point_descriptor(s.sample.feature_id).map(|d| (i, d)))
                .collect()
        };
        let g = lookup(goal);
        let c = lookup(candidate);
        let gd: Vec<&[f32]> = g.iter().map(|x| x.1).collect();
        let cd: Vec<&[f32]> = c.iter().map(|x| x.1).collect();
        let tg = goal.square_transform(resolution);
        let tc = candidate.square_transform(resolution);
        let mut matches = Vec::new();
        for (gi, d) in gd.iter().enumerate() {
            let Some((ci, ratio)) = nearest_two(d, &cd) else {
                continue;
            };
            if ratio >= self.ratio {
                continue;
            }
            if nearest_two(cd[ci], &gd).map(|(back, _)| back) != Some(gi) {
                continue;
            }
            let gs = &goal.samples[g[gi].0];
            let cs = &candidate.samples[c[ci].0];
            let gp = tg.forward(gs.sample.u, gs.sample.v);
            let cp = tc.forward(cs.x as f64 + 0.5, cs.y as f64 + 0.5);
            if in_square(gp, resolution) && in_square(cp, resolution) {
                matches.push(Match2D {
                    goal: [gp.0, gp.1],
                    candidate: [cp.0, cp.1],
                });
            }
        }
        Correspondences2D { resolution, matches }
    }
}
