//! Planted-block interaction generator.
//!
//! Users and items are split into `blocks` contiguous groups. A user
//! interacts with each item of its own block with probability
//! `p_within` and with every other item with probability `p_across`.
//! The block labels are returned alongside the interactions so tests can
//! check that learned structure lines up with the planted one.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{InteractionDataset, RawInteraction};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockConfig {
    pub users: usize,
    pub items: usize,
    pub blocks: usize,
    pub p_within: f64,
    pub p_across: f64,
}

impl Default for BlockConfig {
    fn default() -> Self {
        BlockConfig {
            users: 200,
            items: 300,
            blocks: 5,
            p_within: 0.3,
            p_across: 0.01,
        }
    }
}

impl BlockConfig {
    /// A quick variant for unit tests.
    pub fn small() -> Self {
        BlockConfig {
            users: 40,
            items: 50,
            blocks: 2,
            p_within: 0.4,
            p_across: 0.02,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BlockData {
    pub raw: Vec<RawInteraction>,
    pub user_block: Vec<usize>,
    pub item_block: Vec<usize>,
}

fn block_of(index: usize, total: usize, blocks: usize) -> usize {
    index * blocks / total
}

pub fn block_dataset(cfg: &BlockConfig, seed: u64) -> BlockData {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let user_block: Vec<usize> = (0..cfg.users).map(|u| block_of(u, cfg.users, cfg.blocks)).collect();
    let item_block: Vec<usize> = (0..cfg.items).map(|i| block_of(i, cfg.items, cfg.blocks)).collect();
    let mut raw = Vec::new();
    for u in 0..cfg.users {
        for i in 0..cfg.items {
            let p = if user_block[u] == item_block[i] {
                cfg.p_within
            } else {
                cfg.p_across
            };
            if rng.gen::<f64>() < p {
                raw.push((format!("u{u}"), format!("i{i}")));
            }
        }
    }
    BlockData {
        raw,
        user_block,
        item_block,
    }
}

impl BlockData {
    /// Block label of every user index in `ds`.
    pub fn user_labels(&self, ds: &InteractionDataset) -> Vec<usize> {
        ds.user_ids()
            .iter()
            .map(|id| self.user_block[id[1..].parse::<usize>().expect("synthetic user id")])
            .collect()
    }

    /// Block label of every item index in `ds`.
    pub fn item_labels(&self, ds: &InteractionDataset) -> Vec<usize> {
        ds.item_ids()
            .iter()
            .map(|id| self.item_block[id[1..].parse::<usize>().expect("synthetic item id")])
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn within_block_density_dominates() {
        let cfg = BlockConfig::default();
        let data = block_dataset(&cfg, 1);
        let within = data
            .raw
            .iter()
            .filter(|(u, i)| {
                let u: usize = u[1..].parse().unwrap();
                let i: usize = i[1..].parse().unwrap();
                data.user_block[u] == data.item_block[i]
            })
            .count();
        // 200 users * 60 same-block items * 0.3 = 3600 expected.
        assert!((3300..3900).contains(&within), "within = {within}");
        assert!(data.raw.len() - within < 700);
    }

    #[test]
    fn seeded() {
        let a = block_dataset(&BlockConfig::small(), 9).raw;
        let b = block_dataset(&BlockConfig::small(), 9).raw;
        assert_eq!(a, b);
    }
}
