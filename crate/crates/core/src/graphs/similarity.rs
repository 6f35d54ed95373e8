//! User-user and item-item graphs from cosine similarity of binary
//! interaction profiles.
//!
//! An edge joins two distinct nodes whose similarity is positive and at
//! least the threshold. The threshold is calibrated so that the average
//! undirected degree (`2 * edges / nodes`) reaches a target.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::InteractionDataset;
use crate::error::{Error, Result};

/// Cosine similarity of two binary vectors given as sorted index lists:
/// `|a ∩ b| / sqrt(|a| |b|)`, and 0 when either is empty.
pub fn cosine_similarity(a: &[usize], b: &[usize]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    let (mut i, mut j, mut common) = (0, 0, 0usize);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                common += 1;
                i += 1;
                j += 1;
            }
        }
    }
    common as f64 / ((a.len() * b.len()) as f64).sqrt()
}

/// Anything that can list the positive similarities of one node to every
/// other node.
pub trait PairwiseSimilarity: Sync {
    fn num_nodes(&self) -> usize;

    /// `(other, similarity)` for every `other != node` with similarity > 0,
    /// in any order.
    fn similarities(&self, node: usize) -> Vec<(usize, f64)>;
}

/// Cosine similarity between rows of the binary train matrix (users) or
/// between its columns (items), computed through an inverted index.
pub struct CosineProfiles {
    profiles: Vec<Vec<usize>>,
    inverted: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Users,
    Items,
}

impl CosineProfiles {
    /// `profiles[n]` is the sorted support of node `n`; `width` is the
    /// length of the underlying binary vectors.
    pub fn new(profiles: Vec<Vec<usize>>, width: usize) -> Self {
        let mut inverted = vec![Vec::new(); width];
        for (n, p) in profiles.iter().enumerate() {
            for &k in p {
                inverted[k].push(n);
            }
        }
        CosineProfiles { profiles, inverted }
    }

    pub fn from_dataset(ds: &InteractionDataset, axis: Axis) -> Self {
        let by_user: Vec<Vec<usize>> = (0..ds.num_users()).map(|u| ds.train_items(u).to_vec()).collect();
        match axis {
            Axis::Users => Self::new(by_user, ds.num_items()),
            Axis::Items => {
                let mut by_item = vec![Vec::new(); ds.num_items()];
                for (u, items) in by_user.iter().enumerate() {
                    for &i in items {
                        by_item[i].push(u);
                    }
                }
                Self::new(by_item, ds.num_users())
            }
        }
    }

    pub fn profile(&self, node: usize) -> &[usize] {
        &self.profiles[node]
    }
}

impl PairwiseSimilarity for CosineProfiles {
    fn num_nodes(&self) -> usize {
        self.profiles.len()
    }

    fn similarities(&self, node: usize) -> Vec<(usize, f64)> {
        let mine = &self.profiles[node];
        let mut common: Vec<(usize, usize)> = Vec::new();
        let mut slot = std::collections::HashMap::new();
        for &k in mine {
            for &other in &self.inverted[k] {
                if other == node {
                    continue;
                }
                let idx = *slot.entry(other).or_insert_with(|| {
                    common.push((other, 0));
                    common.len() - 1
                });
                common[idx].1 += 1;
            }
        }
        common
            .into_iter()
            .map(|(other, c)| {
                let denom = ((mine.len() * self.profiles[other].len()) as f64).sqrt();
                (other, c as f64 / denom)
            })
            .collect()
    }
}

/// Knobs for threshold calibration and graph construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityConfig {
    pub target_avg_degree: f64,
    /// Per-node cap; an edge survives only if it is within the top
    /// `max_degree` of both endpoints.
    pub max_degree: usize,
    /// Above this many nodes the degree is estimated on a node sample.
    pub exact_cutoff: usize,
    pub estimate_sample: usize,
    pub seed: u64,
}

impl Default for SimilarityConfig {
    fn default() -> Self {
        SimilarityConfig {
            target_avg_degree: 10.0,
            max_degree: 64,
            exact_cutoff: 20_000,
            estimate_sample: 2_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub threshold: f64,
    /// Average degree at `threshold` on the nodes used for calibration.
    pub avg_degree: f64,
    /// Set when even the loosest threshold falls short of the target.
    pub unreachable: bool,
}

const THRESHOLD_TOLERANCE: f64 = 1e-4;

/// Finds the largest threshold whose average degree is at least
/// `target_avg_degree`, by bisection on `[0, 1]`.
///
/// The bisection result is snapped up to the smallest similarity value not
/// below it, which keeps the same edge set, so with exact counting the
/// returned threshold is the exact optimum.
pub fn calibrate_threshold(
    sims: &dyn PairwiseSimilarity,
    cfg: &SimilarityConfig,
) -> Result<Calibration> {
    if !(cfg.target_avg_degree >= 1.0) {
        return Err(Error::Config(format!(
            "target average degree must be at least 1, got {}",
            cfg.target_avg_degree
        )));
    }
    let n = sims.num_nodes();
    if n == 0 {
        return Err(Error::EmptyDataset("similarity graph without nodes".into()));
    }
    let nodes: Vec<usize> = if n > cfg.exact_cutoff {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut picked = sample(&mut rng, n, cfg.estimate_sample.min(n)).into_vec();
        picked.sort_unstable();
        picked
    } else {
        (0..n).collect()
    };
    let rows: Vec<Vec<f64>> = nodes
        .par_iter()
        .map(|&node| {
            let mut s: Vec<f64> = sims.similarities(node).into_iter().map(|(_, v)| v).collect();
            s.sort_unstable_by(|a, b| b.total_cmp(a));
            s
        })
        .collect();
    let avg_degree = |t: f64| -> f64 {
        let total: usize = rows
            .iter()
            .map(|r| r.partition_point(|&s| s >= t && s > 0.0))
            .sum();
        total as f64 / rows.len() as f64
    };

    let loosest = avg_degree(0.0);
    if loosest < cfg.target_avg_degree {
        log::warn!(
            "average degree {} unreachable (at most {loosest:.3}); using threshold 0",
            cfg.target_avg_degree
        );
        return Ok(Calibration {
            threshold: 0.0,
            avg_degree: loosest,
            unreachable: true,
        });
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    if avg_degree(hi) >= cfg.target_avg_degree {
        lo = hi;
    }
    while hi - lo > THRESHOLD_TOLERANCE {
        let mid = 0.5 * (lo + hi);
        if avg_degree(mid) >= cfg.target_avg_degree {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let snapped = rows
        .iter()
        .flat_map(|r| r.iter().copied())
        .filter(|&s| s >= lo)
        .fold(f64::INFINITY, f64::min);
    let threshold = if snapped.is_finite() { snapped } else { lo };
    Ok(Calibration {
        threshold,
        avg_degree: avg_degree(threshold),
        unreachable: false,
    })
}

/// Homogeneous neighbour graph with sorted, symmetric, loop-free lists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityGraph {
    pub neighbors: Vec<Vec<usize>>,
    pub threshold: f64,
    pub target_avg_degree: f64,
    pub unreachable: bool,
}

impl SimilarityGraph {
    pub fn num_nodes(&self) -> usize {
        self.neighbors.len()
    }

    pub fn num_edges(&self) -> usize {
        self.neighbors.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn avg_degree(&self) -> f64 {
        if self.neighbors.is_empty() {
            return 0.0;
        }
        self.neighbors.iter().map(Vec::len).sum::<usize>() as f64 / self.neighbors.len() as f64
    }

    pub fn is_symmetric(&self) -> bool {
        self.neighbors.iter().enumerate().all(|(a, ns)| {
            ns.iter()
                .all(|&b| self.neighbors[b].binary_search(&a).is_ok())
        })
    }

    pub fn has_self_loops(&self) -> bool {
        self.neighbors
            .iter()
            .enumerate()
            .any(|(a, ns)| ns.binary_search(&a).is_ok())
    }
}

/// Keeps every pair with similarity at or above `threshold` (and above
/// zero), capped at `max_degree` mutual top neighbours.
pub fn threshold_graph(
    sims: &dyn PairwiseSimilarity,
    threshold: f64,
    max_degree: usize,
) -> Vec<Vec<usize>> {
    let n = sims.num_nodes();
    let kept: Vec<Vec<usize>> = (0..n)
        .into_par_iter()
        .map(|a| {
            let mut row: Vec<(usize, f64)> = sims
                .similarities(a)
                .into_iter()
                .filter(|&(b, s)| b != a && s > 0.0 && s >= threshold)
                .collect();
            row.sort_unstable_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));
            row.truncate(max_degree);
            let mut ids: Vec<usize> = row.into_iter().map(|(b, _)| b).collect();
            ids.sort_unstable();
            ids
        })
        .collect();
    (0..n)
        .map(|a| {
            kept[a]
                .iter()
                .copied()
                .filter(|&b| kept[b].binary_search(&a).is_ok())
                .collect()
        })
        .collect()
}

pub fn build_similarity_graph(
    ds: &InteractionDataset,
    axis: Axis,
    cfg: &SimilarityConfig,
) -> Result<SimilarityGraph> {
    let profiles = CosineProfiles::from_dataset(ds, axis);
    build_from_similarity(&profiles, cfg)
}

pub fn build_from_similarity(
    sims: &dyn PairwiseSimilarity,
    cfg: &SimilarityConfig,
) -> Result<SimilarityGraph> {
    let cal = calibrate_threshold(sims, cfg)?;
    Ok(SimilarityGraph {
        neighbors: threshold_graph(sims, cal.threshold, cfg.max_degree),
        threshold: cal.threshold,
        target_avg_degree: cfg.target_avg_degree,
        unreachable: cal.unreachable,
    })
}
