mod common;

use proptest::prelude::*;

use mgccf::dataset::synthetic::{block_dataset, BlockConfig};
use mgccf::dataset::{filter_and_index, split, SplitRatios};
use mgccf::graphs::{
    build_bipartite, build_from_similarity, calibrate_threshold, threshold_graph, GraphBundle,
    GraphConfig, SimilarityConfig,
};

fn degree(g: &[Vec<usize>]) -> f64 {
    g.iter().map(Vec::len).sum::<usize>() as f64 / g.len() as f64
}

#[test]
fn hundred_nodes_calibrate_near_target() {
    for seed in 0..5 {
        let sims = common::random_profiles(100, 80, 0.1, seed);
        let g = build_from_similarity(&sims, &SimilarityConfig::default()).unwrap();
        let d = g.avg_degree();
        assert!((8.0..=12.0).contains(&d), "seed {seed}: {d}");
        assert!(g.is_symmetric() && !g.has_self_loops());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn higher_threshold_never_adds_edges(seed in 0u64..500, a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let sims = common::random_profiles(60, 40, 0.15, seed);
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let g_lo = threshold_graph(&sims, lo, usize::MAX);
        let g_hi = threshold_graph(&sims, hi, usize::MAX);
        for (x, y) in g_lo.iter().zip(&g_hi) {
            prop_assert!(y.iter().all(|n| x.binary_search(n).is_ok()));
        }
        prop_assert!(degree(&g_hi) <= degree(&g_lo));
    }

    #[test]
    fn graphs_are_symmetric_and_loop_free(seed in 0u64..500, target in 2.0f64..15.0, cap in 3usize..20) {
        let sims = common::random_profiles(50, 30, 0.2, seed);
        let cfg = SimilarityConfig { target_avg_degree: target, max_degree: cap, ..Default::default() };
        let g = build_from_similarity(&sims, &cfg).unwrap();
        prop_assert!(g.is_symmetric());
        prop_assert!(!g.has_self_loops());
        prop_assert!(g.neighbors.iter().all(|n| n.len() <= cap));
    }
}

#[test]
fn calibration_estimate_agrees_with_exact_count() {
    let sims = common::random_profiles(400, 200, 0.05, 3);
    let exact = calibrate_threshold(&sims, &SimilarityConfig::default()).unwrap();
    let sampled = calibrate_threshold(
        &sims,
        &SimilarityConfig {
            exact_cutoff: 100,
            estimate_sample: 200,
            ..Default::default()
        },
    )
    .unwrap();
    assert!((exact.avg_degree - 10.0).abs() < 2.0);
    assert!((sampled.threshold - exact.threshold).abs() < 0.1);
}

#[test]
fn block_similarity_graphs_follow_the_blocks() {
    let cfg = BlockConfig::default();
    let data = block_dataset(&cfg, 1);
    let idx = filter_and_index(&data.raw, 5).unwrap();
    let ds = split(&idx, SplitRatios::default(), 1).unwrap();
    let bundle = GraphBundle::build(&ds, &GraphConfig::default()).unwrap();
    let labels = [data.user_labels(&ds), data.item_labels(&ds)];
    for (g, lab) in [(&bundle.user_graph, &labels[0]), (&bundle.item_graph, &labels[1])] {
        let mut within = 0;
        let mut total = 0;
        for (a, ns) in g.neighbors.iter().enumerate() {
            for &b in ns {
                total += 1;
                within += usize::from(lab[a] == lab[b]);
            }
        }
        let frac = within as f64 / total as f64;
        assert!(frac >= 0.9, "within-block fraction {frac}");
        assert!((8.0..=12.0).contains(&g.avg_degree()));
    }
}

#[test]
fn bipartite_graph_mirrors_train_split() {
    let ds = common::block_split(&BlockConfig::small(), 3, 2);
    let g = build_bipartite(&ds);
    assert_eq!(g.num_edges(), ds.train().len());
    assert!(g.is_symmetric());
    for u in 0..ds.num_users() {
        assert_eq!(g.user_neighbors[u], ds.train_items(u));
    }
}

#[test]
fn presampled_lists_draw_from_train_neighbours() {
    let ds = common::block_split(&BlockConfig::small(), 3, 5);
    let bundle = GraphBundle::build(&ds, &GraphConfig::default()).unwrap();
    let t = &bundle.user_samples;
    assert_eq!(t.num_sets(), 30);
    for u in 0..ds.num_users() {
        for s in 0..t.num_sets() {
            for h in 0..t.num_hops() {
                let l = t.list(u, s, h);
                assert_eq!(l.len(), GraphConfig::default().sample_sizes[h]);
                assert!(l.iter().all(|i| ds.is_train(u, *i)));
            }
        }
    }
    let again = GraphBundle::build(&ds, &GraphConfig::default()).unwrap();
    assert_eq!(again, bundle);
}
