use serde::{Deserialize, Serialize};

use crate::geometry::angular_distance;
use crate::perception::{dot, Database, RegionRef};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub region: RegionRef,
    pub score: f64,
    pub pruned: bool,
    pub visited: bool,
}

/// All regions of one instance, most similar first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateList {
    pub instance: usize,
    pub candidates: Vec<Candidate>,
}

impl CandidateList {
    /// Index of the next candidate to evaluate.
    pub fn next_open(&self) -> Option<usize> {
        self.candidates.iter().position(|c| !c.pruned && !c.visited)
    }
}

/// Every database region scored by descriptor dot product, best first;
/// equal scores keep database order.
pub fn rank_regions(goal_descriptor: &[f64], db: &Database, excluded: &[usize]) -> Vec<(RegionRef, f64)> {
    let mut ranked: Vec<(RegionRef, f64)> = db
        .regions()
        .filter(|(r, _)| !excluded.contains(&r.instance))
        .map(|(r, region)| (r, dot(goal_descriptor, &region.descriptor)))
        .collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked
}

/// Instances ordered by votes among the `top_n` best regions. Ties, and
/// instances without votes, are ordered by their best region's rank.
pub fn rank_instances(goal_descriptor: &[f64], db: &Database, top_n: usize, excluded: &[usize]) -> Vec<(usize, usize)> {
    let ranked = rank_regions(goal_descriptor, db, excluded);
    let mut votes = vec![0usize; db.instance_count()];
    let mut first_rank = vec![usize::MAX; db.instance_count()];
    for (pos, (r, _)) in ranked.iter().enumerate() {
        if pos < top_n {
            votes[r.instance] += 1;
        }
        first_rank[r.instance] = first_rank[r.instance].min(pos);
    }
    let mut order: Vec<usize> = (0..db.instance_count()).filter(|&i| first_rank[i] != usize::MAX).collect();
    order.sort_by_key(|&i| (std::cmp::Reverse(votes[i]), first_rank[i]));
    order.into_iter().map(|i| (i, votes[i])).collect()
}

pub fn candidates_of(goal_descriptor: &[f64], db: &Database, instance: usize) -> CandidateList {
    let mut candidates: Vec<Candidate> = db.instances[instance]
        .iter()
        .enumerate()
        .map(|(index, region)| Candidate {
            region: RegionRef { instance, index },
            score: dot(goal_descriptor, &region.descriptor),
            pruned: false,
            visited: false,
        })
        .collect();
    candidates.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.region.cmp(&b.region)));
    CandidateList { instance, candidates }
}

/// Picks the instance voted for most often among the `top_n` most similar
/// regions and returns all of its regions by similarity.
pub fn retrieve_candidates(goal_descriptor: &[f64], db: &Database, top_n: usize) -> Option<CandidateList> {
    let (instance, _) = *rank_instances(goal_descriptor, db, top_n, &[]).first()?;
    Some(candidates_of(goal_descriptor, db, instance))
}

/// Marks the rejected candidate and every open candidate observed from a
/// direction closer than `theta` to it.
pub fn prune_after_rejection(list: &mut CandidateList, rejected: usize, db: &Database, theta: f64) {
    let e_rej = db.region(list.candidates[rejected].region).obs_vec;
    list.candidates[rejected].pruned = true;
    for c in list.candidates.iter_mut() {
        if c.visited || c.pruned {
            continue;
        }
        if angular_distance(&db.region(c.region).obs_vec, &e_rej) < theta {
            c.pruned = true;
        }
    }
}
