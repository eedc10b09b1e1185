use rand::Rng;
use serde::{Deserialize, Serialize};

use super::PerceptionError;
use crate::geometry::Vec3;
use crate::seeding;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KMeansConfig {
    pub max_iterations: usize,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            restarts: 10,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    pub assignments: Vec<usize>,
    pub centers: Vec<Vec3>,
    pub inertia: f64,
}

fn nearest(centers: &[Vec3], p: &Vec3) -> (usize, f64) {
    centers
        .iter()
        .enumerate()
        .map(|(i, c)| (i, (p - c).norm_squared()))
        .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
}

fn seed_centers<R: Rng>(points: &[Vec3], k: usize, rng: &mut R) -> Vec<Vec3> {
    let mut centers = vec![points[rng.random_range(0..points.len())]];
    let mut d2: Vec<f64> = points.iter().map(|p| (p - centers[0]).norm_squared()).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            let mut idx = points.len() - 1;
            for (i, &d) in d2.iter().enumerate() {
                if r < d {
                    idx = i;
                    break;
                }
                r -= d;
            }
            idx
        } else {
            rng.random_range(0..points.len())
        };
        centers.push(points[pick]);
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min((p - points[pick]).norm_squared());
        }
    }
    centers
}

fn lloyd(points: &[Vec3], mut centers: Vec<Vec3>, max_iterations: usize) -> Clustering {
    let k = centers.len();
    let mut assignments: Vec<usize> = points.iter().map(|p| nearest(&centers, p).0).collect();
    for _ in 0..max_iterations {
        let mut sums = vec![Vec3::zeros(); k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assignments) {
            sums[a] += p;
            counts[a] += 1;
        }
        for c in 0..k {
            if counts[c] > 0 {
                centers[c] = sums[c] / counts[c] as f64;
            } else {
                // re-seed an empty cluster at the worst-fit point
                let far = points
                    .iter()
                    .zip(&assignments)
                    .enumerate()
                    .map(|(i, (p, &a))| (i, (p - centers[a]).norm_squared()))
                    .fold((0, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best })
                    .0;
                centers[c] = points[far];
            }
        }
        let next: Vec<usize> = points.iter().map(|p| nearest(&centers, p).0).collect();
        if next == assignments {
            break;
        }
        assignments = next;
    }
    let inertia = points.iter().zip(&assignments).map(|(p, &a)| (p - centers[a]).norm_squared()).sum();
    Clustering {
        assignments,
        centers,
        inertia,
    }
}

/// k-means with D²-weighted seeding and restarts; the lowest-inertia run
/// wins, earliest on ties.
pub fn kmeans(points: &[Vec3], k: usize, config: &KMeansConfig) -> Result<Clustering, PerceptionError> {
    if k == 0 || k > points.len() {
        return Err(PerceptionError::ClusterCountInfeasible { k, regions: points.len() });
    }
    let mut best: Option<Clustering> = None;
    for restart in 0..config.restarts.max(1) {
        let mut rng = seeding::rng(config.seed, &[seeding::TAG_KMEANS, restart as u64]);
        let run = lloyd(points, seed_centers(points, k, &mut rng), config.max_iterations);
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// Groups point indices by cluster and orders the groups by their smallest
/// member, so the numbering does not depend on the seeding.
pub fn canonical_groups(assignments: &[usize], k: usize) -> Vec<Vec<usize>> {
    let mut groups = vec![Vec::new(); k];
    for (i, &a) in assignments.iter().enumerate() {
        groups[a].push(i);
    }
    groups.retain(|g| !g.is_empty());
    groups.sort_by_key(|g| g[0]);
    groups
}

/// Number of instances: the largest region count seen in any one frame.
pub fn infer_k(region_counts: &[usize]) -> Result<usize, PerceptionError> {
    match region_counts.iter().copied().max() {
        Some(k) if k > 0 => Ok(k),
        _ => Err(PerceptionError::NoRegions),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn infer_k_examples() {
        assert_eq!(infer_k(&[3, 4, 4, 2]).unwrap(), 4);
        assert_eq!(infer_k(&[1]).unwrap(), 1);
        assert!(matches!(infer_k(&[0, 0]), Err(PerceptionError::NoRegions)));
        assert!(matches!(infer_k(&[]), Err(PerceptionError::NoRegions)));
    }

    #[test]
    fn separated_blobs_are_recovered() {
        let centres = [Vec3::new(-0.3, 0.0, 0.05), Vec3::new(0.0, 0.2, 0.05), Vec3::new(0.25, -0.1, 0.05)];
        let mut points = Vec::new();
        let mut truth = Vec::new();
        for v in 0..8 {
            for (c, centre) in centres.iter().enumerate() {
                let jitter = Vec3::new((v as f64 * 0.7).sin(), (v as f64 * 1.3).cos(), 0.0) * 0.01;
                points.push(centre + jitter);
                truth.push(c);
            }
        }
        let cl = kmeans(&points, 3, &KMeansConfig::default()).unwrap();
        let groups = canonical_groups(&cl.assignments, 3);
        assert_eq!(groups.len(), 3);
        for g in &groups {
            assert!(g.iter().all(|&i| truth[i] == truth[g[0]]));
        }
    }

    #[test]
    fn k_bounds() {
        let pts = vec![Vec3::zeros(), Vec3::x(), Vec3::y()];
        let one = kmeans(&pts, 1, &KMeansConfig::default()).unwrap();
        assert!(one.assignments.iter().all(|&a| a == 0));
        assert!(matches!(
            kmeans(&pts, 4, &KMeansConfig::default()),
            Err(PerceptionError::ClusterCountInfeasible { k: 4, regions: 3 })
        ));
        let all = kmeans(&pts, 3, &KMeansConfig::default()).unwrap();
        assert_eq!(canonical_groups(&all.assignments, 3).len(), 3);
        assert!(all.inertia < 1e-24);
    }

    #[test]
    fn duplicate_points_do_not_break_seeding() {
        let pts = vec![Vec3::zeros(); 5];
        let cl = kmeans(&pts, 2, &KMeansConfig::default()).unwrap();
        assert_eq!(cl.inertia, 0.0);
    }

    proptest! {
        #[test]
        fn kmeans_is_deterministic_and_locally_optimal(
            raw in proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0, 0.0f64..0.2), 3..40),
            k in 1usize..4,
            seed in 0u64..100,
        ) {
            let pts: Vec<Vec3> = raw.iter().map(|&(x, y, z)| Vec3::new(x, y, z)).collect();
            let cfg = KMeansConfig { seed, ..KMeansConfig::default() };
            let a = kmeans(&pts, k, &cfg).unwrap();
            let b = kmeans(&pts, k, &cfg).unwrap();
            prop_assert_eq!(&a, &b);
            // every point sits with its nearest center
            for (p, &c) in pts.iter().zip(&a.assignments) {
                let d = (p - a.centers[c]).norm_squared();
                prop_assert!(a.centers.iter().all(|o| d <= (p - o).norm_squared() + 1e-12));
            }
        }
    }
}
