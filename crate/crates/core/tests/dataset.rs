mod common;

use std::collections::{HashMap, HashSet};

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use mgccf::dataset::synthetic::BlockConfig;
use mgccf::dataset::{
    filter_and_index, parse_interactions, read_snapshot, sample_triplets, split, write_snapshot, InputFormat,
    RawInteraction, SplitRatios,
};

fn raw_strategy() -> impl Strategy<Value = Vec<RawInteraction>> {
    prop::collection::vec((0u8..30, 0u8..40), 1..400).prop_map(|pairs| {
        pairs
            .into_iter()
            .map(|(u, i)| (format!("u{u}"), format!("i{i}")))
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn filtering_reaches_a_fixed_point(raw in raw_strategy(), min in 1usize..6) {
        let distinct: HashSet<_> = raw.iter().cloned().collect();
        match filter_and_index(&raw, min) {
            Ok(idx) => {
                let mut users: HashMap<usize, usize> = HashMap::new();
                let mut items: HashMap<usize, usize> = HashMap::new();
                for x in &idx.interactions {
                    *users.entry(x.user).or_default() += 1;
                    *items.entry(x.item).or_default() += 1;
                }
                prop_assert!(users.values().all(|&c| c >= min));
                prop_assert!(items.values().all(|&c| c >= min));
                prop_assert_eq!(users.len(), idx.num_users);
                prop_assert_eq!(items.len(), idx.num_items);
                // every surviving pair came from the input
                for x in &idx.interactions {
                    let pair = (idx.user_ids[x.user].clone(), idx.item_ids[x.item].clone());
                    prop_assert!(distinct.contains(&pair));
                }
                // filtering the output again changes nothing
                let raw2: Vec<RawInteraction> = idx.interactions.iter()
                    .map(|x| (idx.user_ids[x.user].clone(), idx.item_ids[x.item].clone()))
                    .collect();
                let again = filter_and_index(&raw2, min).unwrap();
                prop_assert_eq!(again.interactions.len(), idx.interactions.len());
            }
            Err(_) => prop_assert!(min > 1),
        }
    }

    #[test]
    fn split_partitions_each_user(seed in 0u64..1000) {
        let cfg = BlockConfig::small();
        let ds = common::block_split(&cfg, 3, seed);
        let mut seen = HashSet::new();
        for part in [ds.train(), ds.validation(), ds.test()] {
            for x in part {
                prop_assert!(seen.insert(*x), "duplicate {:?}", x);
            }
        }
        prop_assert_eq!(seen.len(), ds.num_interactions());
        for u in 0..ds.num_users() {
            prop_assert!(!ds.train_items(u).is_empty());
            prop_assert!(!ds.validation_items(u).is_empty());
            prop_assert!(!ds.test_items(u).is_empty());
        }
        let mut covered = vec![false; ds.num_items()];
        for x in ds.train() {
            covered[x.item] = true;
        }
        prop_assert!(covered.iter().all(|&c| c));
    }
}

#[test]
fn parsed_file_survives_snapshot_round_trip() {
    let mut text = String::from("# user item rating\n");
    for u in 0..12 {
        for i in 0..15 {
            if (u + i) % 3 != 0 {
                text.push_str(&format!("user{u},item{i},5\n"));
            }
        }
    }
    let raw = parse_interactions(text.as_bytes(), InputFormat::Auto).unwrap();
    let idx = filter_and_index(&raw, 3).unwrap();
    let ds = split(&idx, SplitRatios::default(), 4).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ds.snapshot");
    write_snapshot(&path, &ds).unwrap();
    let back = read_snapshot(&path).unwrap();
    assert_eq!(back.fingerprint(), ds.fingerprint());
    assert_eq!(back.train(), ds.train());
    assert_eq!(back.user_ids(), ds.user_ids());
    let bytes = std::fs::read(&path).unwrap();
    write_snapshot(&path, &back).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), bytes);
}

#[test]
fn splitting_is_seeded() {
    let cfg = BlockConfig::small();
    let a = common::block_split(&cfg, 3, 11);
    let b = common::block_split(&cfg, 3, 11);
    let c = common::block_split(&cfg, 3, 12);
    assert_eq!(a.fingerprint(), b.fingerprint());
    assert_ne!(a.fingerprint(), c.fingerprint());
}

#[test]
fn triplets_are_valid_and_negatives_uniform() {
    let ds = common::block_split(&BlockConfig::default(), 5, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let batch = sample_triplets(&ds, 1024, &mut rng).unwrap();
    assert_eq!(batch.len(), 1024);
    for t in &batch {
        assert!(ds.is_train(t.u, t.i));
        assert!(!ds.is_observed(t.u, t.j));
    }

    // Negatives for one user: chi-square against the uniform law over the
    // user's unobserved items.
    let user = 0;
    let candidates: Vec<usize> = (0..ds.num_items()).filter(|&j| !ds.is_observed(user, j)).collect();
    let mut counts: HashMap<usize, usize> = HashMap::new();
    let mut draws = 0usize;
    while draws < 200_000 {
        for t in sample_triplets(&ds, 4096, &mut rng).unwrap() {
            if t.u == user {
                *counts.entry(t.j).or_default() += 1;
                draws += 1;
            }
        }
    }
    let expected = draws as f64 / candidates.len() as f64;
    let chi2: f64 = candidates
        .iter()
        .map(|j| {
            let o = *counts.get(j).unwrap_or(&0) as f64;
            (o - expected).powi(2) / expected
        })
        .sum();
    // dof ≈ 280; the 0.999 quantile is below 380.
    let dof = candidates.len() as f64 - 1.0;
    let bound = dof + 3.1 * (2.0 * dof).sqrt() + 10.0;
    assert!(chi2 < bound, "chi2 {chi2} bound {bound}");
}

#[test]
fn every_train_interaction_is_drawn() {
    let ds = common::block_split(&BlockConfig::small(), 3, 6);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut seen = HashSet::new();
    for _ in 0..40 {
        for t in sample_triplets(&ds, ds.train().len(), &mut rng).unwrap() {
            seen.insert((t.u, t.i));
        }
    }
    assert_eq!(seen.len(), ds.train().len());
}
