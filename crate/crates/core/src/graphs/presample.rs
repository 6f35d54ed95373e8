use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Fixed-size neighbour samples drawn ahead of training.
///
/// For every node there are `num_sets` independent sets; each set holds one
/// list per hop, of length `sizes[hop]`, sampled uniformly with
/// replacement from the node's neighbours. Nodes without neighbours get
/// empty lists.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampledNeighborTable {
    num_nodes: usize,
    num_sets: usize,
    sizes: Vec<usize>,
    has_neighbors: Vec<bool>,
    data: Vec<usize>,
}

impl SampledNeighborTable {
    pub(crate) fn from_raw(
        num_nodes: usize,
        num_sets: usize,
        sizes: Vec<usize>,
        has_neighbors: Vec<bool>,
        data: Vec<usize>,
    ) -> Result<Self> {
        let stride = num_sets * sizes.iter().sum::<usize>();
        if has_neighbors.len() != num_nodes || data.len() != num_nodes * stride {
            return Err(Error::Format("sampled table size mismatch".into()));
        }
        Ok(SampledNeighborTable {
            num_nodes,
            num_sets,
            sizes,
            has_neighbors,
            data,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_sets(&self) -> usize {
        self.num_sets
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn num_hops(&self) -> usize {
        self.sizes.len()
    }

    pub(crate) fn has_neighbors(&self) -> &[bool] {
        &self.has_neighbors
    }

    pub(crate) fn raw_data(&self) -> &[usize] {
        &self.data
    }

    fn stride(&self) -> usize {
        self.num_sets * self.sizes.iter().sum::<usize>()
    }

    /// The hop-`hop` list of `node` in set `set`.
    pub fn list(&self, node: usize, set: usize, hop: usize) -> &[usize] {
        if !self.has_neighbors[node] {
            return &[];
        }
        let per_set: usize = self.sizes.iter().sum();
        let start = node * self.stride() + set * per_set + self.sizes[..hop].iter().sum::<usize>();
        &self.data[start..start + self.sizes[hop]]
    }

    /// Distinct nodes appearing in any set's hop-`hop` list of `node`, sorted.
    pub fn union(&self, node: usize, hop: usize) -> Vec<usize> {
        let mut all: Vec<usize> = (0..self.num_sets)
            .flat_map(|s| self.list(node, s, hop).iter().copied())
            .collect();
        all.sort_unstable();
        all.dedup();
        all
    }
}

/// Draws the table. Node `n` uses its own ChaCha stream `n` of the master
/// seed, so the result does not depend on how the work is scheduled.
pub fn presample(
    adjacency: &[Vec<usize>],
    sizes: &[usize],
    num_sets: usize,
    seed: u64,
) -> Result<SampledNeighborTable> {
    if sizes.is_empty() || sizes.contains(&0) || num_sets == 0 {
        return Err(Error::Config(format!(
            "sample sizes {sizes:?} and set count {num_sets} must all be at least 1"
        )));
    }
    let per_node = num_sets * sizes.iter().sum::<usize>();
    let mut data = vec![0usize; adjacency.len() * per_node];
    data.par_chunks_mut(per_node.max(1))
        .zip(adjacency.par_iter())
        .enumerate()
        .for_each(|(node, (chunk, neighbors))| {
            if neighbors.is_empty() {
                return;
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(node as u64);
            for slot in chunk.iter_mut() {
                *slot = neighbors[rng.gen_range(0..neighbors.len())];
            }
        });
    Ok(SampledNeighborTable {
        num_nodes: adjacency.len(),
        num_sets,
        sizes: sizes.to_vec(),
        has_neighbors: adjacency.iter().map(|n| !n.is_empty()).collect(),
        data,
    })
}
