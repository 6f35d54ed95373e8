use crate::dataset::InteractionDataset;

/// User-item graph built from train interactions. Both adjacency lists are
/// sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BipartiteGraph {
    pub user_neighbors: Vec<Vec<usize>>,
    pub item_neighbors: Vec<Vec<usize>>,
}

impl BipartiteGraph {
    pub fn num_edges(&self) -> usize {
        self.user_neighbors.iter().map(Vec::len).sum()
    }

    pub fn is_symmetric(&self) -> bool {
        self.user_neighbors.iter().enumerate().all(|(u, items)| {
            items
                .iter()
                .all(|&v| self.item_neighbors[v].binary_search(&u).is_ok())
        }) && self.num_edges() == self.item_neighbors.iter().map(Vec::len).sum::<usize>()
    }
}

pub fn build_bipartite(ds: &InteractionDataset) -> BipartiteGraph {
    let user_neighbors: Vec<Vec<usize>> = (0..ds.num_users())
        .map(|u| ds.train_items(u).to_vec())
        .collect();
    let mut item_neighbors = vec![Vec::new(); ds.num_items()];
    for (u, items) in user_neighbors.iter().enumerate() {
        for &v in items {
            item_neighbors[v].push(u);
        }
    }
    BipartiteGraph {
        user_neighbors,
        item_neighbors,
    }
}
