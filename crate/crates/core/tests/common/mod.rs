//! Fixtures shared by the integration tests.
#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mgccf::dataset::synthetic::{block_dataset, BlockConfig};
use mgccf::dataset::{filter_and_index, split, InteractionDataset, SplitRatios, Triplet};
use mgccf::model::{EncodeContext, FusionMode, Model, ModelConfig, MultiGccf, NeighborSource};
use mgccf::graphs::CosineProfiles;
use mgccf::numerics::Tape;

/// A tiny random instance: per-hop neighbour lists for both sides plus
/// symmetric similarity graphs.
#[derive(Debug, Clone)]
pub struct Toy {
    pub num_users: usize,
    pub num_items: usize,
    /// `[hop][node]`.
    pub user_lists: Vec<Vec<Vec<usize>>>,
    pub item_lists: Vec<Vec<Vec<usize>>>,
    pub user_graph: Vec<Vec<usize>>,
    pub item_graph: Vec<Vec<usize>>,
}

fn random_lists(rng: &mut ChaCha8Rng, nodes: usize, targets: usize, hops: &[usize]) -> Vec<Vec<Vec<usize>>> {
    hops.iter()
        .map(|&size| {
            (0..nodes)
                .map(|_| (0..size).map(|_| rng.gen_range(0..targets)).collect())
                .collect()
        })
        .collect()
}

fn random_graph(rng: &mut ChaCha8Rng, n: usize, p: f64) -> Vec<Vec<usize>> {
    let mut g = vec![Vec::new(); n];
    for a in 0..n {
        for b in a + 1..n {
            if rng.gen_bool(p) {
                g[a].push(b);
                g[b].push(a);
            }
        }
    }
    g
}

impl Toy {
    pub fn new(num_users: usize, num_items: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Toy {
            num_users,
            num_items,
            user_lists: random_lists(&mut rng, num_users, num_items, &[3, 2]),
            item_lists: random_lists(&mut rng, num_items, num_users, &[3, 2]),
            user_graph: random_graph(&mut rng, num_users, 0.4),
            item_graph: random_graph(&mut rng, num_items, 0.4),
        }
    }

    pub fn ctx(&self) -> EncodeContext<'_> {
        EncodeContext {
            neighbors: NeighborSource::Fixed {
                users: self.user_lists.clone(),
                items: self.item_lists.clone(),
            },
            user_graph: &self.user_graph,
            item_graph: &self.item_graph,
        }
    }

    /// The same instance with every neighbour list shuffled.
    pub fn shuffled(&self, seed: u64) -> Toy {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut t = self.clone();
        for lists in t.user_lists.iter_mut().chain(t.item_lists.iter_mut()) {
            for l in lists.iter_mut() {
                l.shuffle(&mut rng);
            }
        }
        t
    }

    pub fn batch(&self, n: usize, seed: u64) -> Vec<Triplet> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| Triplet {
                u: rng.gen_range(0..self.num_users),
                i: rng.gen_range(0..self.num_items),
                j: rng.gen_range(0..self.num_items),
            })
            .collect()
    }
}

pub fn toy_config(fusion: FusionMode, use_mge: bool, use_skip: bool) -> ModelConfig {
    ModelConfig {
        input_dim: 4,
        layer1_dim: 3,
        output_dim: 3,
        fusion,
        use_mge,
        use_skip,
        ..Default::default()
    }
}

/// Every fusion mode crossed with the four branch combinations.
pub fn all_variants() -> Vec<ModelConfig> {
    let mut out = Vec::new();
    for fusion in [FusionMode::Sum, FusionMode::Concat, FusionMode::Attention] {
        for (mge, skip) in [(true, true), (false, true), (true, false), (false, false)] {
            out.push(toy_config(fusion, mge, skip));
        }
    }
    out
}

fn loss_at(model: &Model, toy: &Toy, batch: &[Triplet], seed: u64) -> f64 {
    let ctx = toy.ctx();
    let mut tape = Tape::new(model.params());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let terms = model.batch_loss(&mut tape, batch, Some(&ctx), &mut rng).unwrap();
    tape.scalar(terms.total)
}

/// Largest `|a - n| / max(|a|, |n|, 1e-4)` between tape gradients and
/// central differences over every parameter entry. Dropout masks are
/// reproduced by reseeding for each evaluation.
pub fn max_gradient_error(model: &mut Model, toy: &Toy, batch: &[Triplet], seed: u64) -> f64 {
    let ctx = toy.ctx();
    let grads = {
        let mut tape = Tape::new(model.params());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let terms = model.batch_loss(&mut tape, batch, Some(&ctx), &mut rng).unwrap();
        tape.backward(terms.total).unwrap()
    };
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let ids: Vec<_> = model.params().ids().collect();
    for id in ids {
        let analytic = grads
            .get(id)
            .cloned()
            .unwrap_or_else(|| {
                let (r, c) = model.params().get(id).shape();
                mgccf::numerics::Matrix::zeros(r, c)
            });
        for idx in 0..analytic.len() {
            let orig = model.params().value(id).as_slice()[idx];
            model.params_mut().get_mut(id).value.as_mut_slice()[idx] = orig + h;
            let up = loss_at(model, toy, batch, seed);
            model.params_mut().get_mut(id).value.as_mut_slice()[idx] = orig - h;
            let down = loss_at(model, toy, batch, seed);
            model.params_mut().get_mut(id).value.as_mut_slice()[idx] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic.as_slice()[idx];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-4);
            worst = worst.max(err);
        }
    }
    worst
}

pub fn toy_model(cfg: ModelConfig, toy: &Toy, seed: u64) -> Model {
    Model::from(MultiGccf::new(cfg, toy.num_users, toy.num_items, seed).unwrap())
}

/// Planted-block dataset with the given generator settings.
pub fn block_split(cfg: &BlockConfig, min_interactions: usize, seed: u64) -> InteractionDataset {
    let data = block_dataset(cfg, seed);
    let idx = filter_and_index(&data.raw, min_interactions).unwrap();
    split(&idx, SplitRatios::default(), seed).unwrap()
}

/// `n` random binary profiles over `width` features.
pub fn random_profiles(n: usize, width: usize, density: f64, seed: u64) -> CosineProfiles {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let profiles = (0..n)
        .map(|_| (0..width).filter(|_| rng.gen_bool(density)).collect())
        .collect();
    CosineProfiles::new(profiles, width)
}

/// Full sort of all candidates, then the textbook formulas.
pub fn brute_force(scores: &[f64], excluded: &[usize], relevant: &[usize], k: usize) -> (f64, f64) {
    let mut order: Vec<usize> = (0..scores.len()).filter(|i| !excluded.contains(i)).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    let top = &order[..k.min(order.len())];
    let hits = top.iter().filter(|i| relevant.contains(i)).count();
    let recall = hits as f64 / relevant.len() as f64;
    let mut dcg = 0.0;
    for (pos, item) in top.iter().enumerate() {
        if relevant.contains(item) {
            dcg += (2f64.powi(1) - 1.0) / ((pos + 2) as f64).log2();
        }
    }
    let mut idcg = 0.0;
    for pos in 0..k.min(relevant.len()) {
        idcg += 1.0 / ((pos + 2) as f64).log2();
    }
    (recall, dcg / idcg)
}

pub fn random_case(rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<usize>, Vec<usize>, usize) {
    let n = rng.gen_range(5..60);
    // coarse scores so ties are common
    let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0..8) as f64 / 4.0).collect();
    let mut items: Vec<usize> = (0..n).collect();
    items.shuffle(rng);
    let n_ex = rng.gen_range(0..n / 2);
    let mut excluded = items[..n_ex].to_vec();
    excluded.sort_unstable();
    let n_rel = rng.gen_range(1..=(n - n_ex).min(8));
    let relevant = items[n_ex..n_ex + n_rel].to_vec();
    let k = rng.gen_range(1..=n);
    (scores, excluded, relevant, k)
}
