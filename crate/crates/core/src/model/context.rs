use crate::graphs::{BipartiteGraph, GraphBundle, SampledNeighborTable};

/// Which side of the bipartite graph a node lives on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    User,
    Item,
}

impl Side {
    pub fn other(self) -> Side {
        match self {
            Side::User => Side::Item,
            Side::Item => Side::User,
        }
    }
}

/// Where the Bipar-GCN takes its per-hop neighbour lists from.
#[derive(Debug, Clone)]
pub enum NeighborSource<'a> {
    /// One pre-sampled set; used while training.
    Sampled {
        users: &'a SampledNeighborTable,
        items: &'a SampledNeighborTable,
        set: usize,
    },
    /// Explicit lists indexed `[hop][node]`. A source with a single hop entry
    /// serves that entry at every hop.
    Fixed {
        users: Vec<Vec<Vec<usize>>>,
        items: Vec<Vec<Vec<usize>>>,
    },
}

impl<'a> NeighborSource<'a> {
    pub fn sampled(bundle: &'a GraphBundle, set: usize) -> Self {
        NeighborSource::Sampled {
            users: &bundle.user_samples,
            items: &bundle.item_samples,
            set: set % bundle.user_samples.num_sets(),
        }
    }

    /// Every bipartite neighbour, keeping at most `cap` of them per node.
    /// When truncating, the highest-degree neighbours win (ties go to the
    /// smaller index).
    pub fn full(graph: &BipartiteGraph, cap: usize) -> Self {
        let users = capped(&graph.user_neighbors, &graph.item_neighbors, cap);
        let items = capped(&graph.item_neighbors, &graph.user_neighbors, cap);
        NeighborSource::Fixed {
            users: vec![users],
            items: vec![items],
        }
    }

    /// The union of all pre-sampled sets, hop by hop.
    pub fn presampled_union(bundle: &GraphBundle) -> Self {
        let union = |t: &SampledNeighborTable| -> Vec<Vec<Vec<usize>>> {
            (0..t.num_hops())
                .map(|h| (0..t.num_nodes()).map(|n| t.union(n, h)).collect())
                .collect()
        };
        NeighborSource::Fixed {
            users: union(&bundle.user_samples),
            items: union(&bundle.item_samples),
        }
    }

    /// The hop-`hop` neighbour list of `node`, sorted ascending with
    /// duplicates kept (sampling is with replacement).
    pub fn list(&self, side: Side, node: usize, hop: usize) -> Vec<usize> {
        let mut out = match self {
            NeighborSource::Sampled { users, items, set } => {
                let t = if side == Side::User { users } else { items };
                t.list(node, *set, hop).to_vec()
            }
            NeighborSource::Fixed { users, items } => {
                let per_hop = if side == Side::User { users } else { items };
                let lists = &per_hop[hop.min(per_hop.len() - 1)];
                lists[node].clone()
            }
        };
        out.sort_unstable();
        out
    }
}

fn capped(adj: &[Vec<usize>], other_adj: &[Vec<usize>], cap: usize) -> Vec<Vec<usize>> {
    adj.iter()
        .map(|nbrs| {
            if nbrs.len() <= cap {
                return nbrs.clone();
            }
            let mut ranked = nbrs.clone();
            ranked.sort_by(|&a, &b| other_adj[b].len().cmp(&other_adj[a].len()).then(a.cmp(&b)));
            ranked.truncate(cap);
            ranked.sort_unstable();
            ranked
        })
        .collect()
}

/// Graph inputs for one forward pass.
#[derive(Debug, Clone)]
pub struct EncodeContext<'a> {
    pub neighbors: NeighborSource<'a>,
    pub user_graph: &'a [Vec<usize>],
    pub item_graph: &'a [Vec<usize>],
}

impl<'a> EncodeContext<'a> {
    pub fn training(bundle: &'a GraphBundle, set: usize) -> Self {
        EncodeContext {
            neighbors: NeighborSource::sampled(bundle, set),
            user_graph: &bundle.user_graph.neighbors,
            item_graph: &bundle.item_graph.neighbors,
        }
    }

    pub fn with_neighbors(bundle: &'a GraphBundle, neighbors: NeighborSource<'a>) -> Self {
        EncodeContext {
            neighbors,
            user_graph: &bundle.user_graph.neighbors,
            item_graph: &bundle.item_graph.neighbors,
        }
    }

    pub fn similarity(&self, side: Side) -> &'a [Vec<usize>] {
        match side {
            Side::User => self.user_graph,
            Side::Item => self.item_graph,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_source_caps_by_degree() {
        // user 0 sees items 0..4; item degrees 1, 3, 2, 3
        let graph = BipartiteGraph {
            user_neighbors: vec![vec![0, 1, 2, 3], vec![1, 2, 3], vec![1, 3]],
            item_neighbors: vec![vec![0], vec![0, 1, 2], vec![0, 1], vec![0, 1, 2]],
        };
        let src = NeighborSource::full(&graph, 2);
        assert_eq!(src.list(Side::User, 0, 0), vec![1, 3]);
        assert_eq!(src.list(Side::User, 0, 1), vec![1, 3]);
        assert_eq!(src.list(Side::User, 2, 0), vec![1, 3]);
        assert_eq!(src.list(Side::Item, 1, 0), vec![0, 1]);
        let wide = NeighborSource::full(&graph, 50);
        assert_eq!(wide.list(Side::User, 0, 0), vec![0, 1, 2, 3]);
    }
}
