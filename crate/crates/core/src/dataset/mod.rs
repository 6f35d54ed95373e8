//! Implicit-feedback interaction data.
//!
//! The pipeline is `load_interactions` → [`filter_and_index`] → [`split`],
//! producing an immutable [`InteractionDataset`]. Training batches are
//! drawn from it with [`sample_triplets`].

mod snapshot;
pub mod synthetic;

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use snapshot::{read_snapshot, write_snapshot, SNAPSHOT_HEADER};

/// A raw `(user, item)` pair as it appears in the input file.
pub type RawInteraction = (String, String);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Interaction {
    pub user: usize,
    pub item: usize,
}

impl Interaction {
    pub fn new(user: usize, item: usize) -> Self {
        Interaction { user, item }
    }
}

/// A BPR training example: user `u` prefers observed item `i` over
/// unobserved item `j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Triplet {
    pub u: usize,
    pub i: usize,
    pub j: usize,
}

/// Column separator of the input file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputFormat {
    /// Comma if the line contains one, otherwise whitespace.
    #[default]
    Auto,
    Whitespace,
    Csv,
}

/// Reads `user item [rating [timestamp]]` records. Extra columns are
/// dropped, `#` lines and blank lines skipped, duplicates collapsed keeping
/// first-occurrence order.
pub fn load_interactions(path: impl AsRef<Path>, format: InputFormat) -> Result<Vec<RawInteraction>> {
    let file = File::open(path)?;
    parse_interactions(BufReader::new(file), format)
}

pub fn parse_interactions<R: BufRead>(input: R, format: InputFormat) -> Result<Vec<RawInteraction>> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (lineno, line) in input.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let comma = match format {
            InputFormat::Csv => true,
            InputFormat::Whitespace => false,
            InputFormat::Auto => trimmed.contains(','),
        };
        let fields: Vec<&str> = if comma {
            trimmed.split(',').map(str::trim).collect()
        } else {
            trimmed.split_whitespace().collect()
        };
        if fields.len() < 2 || fields[0].is_empty() || fields[1].is_empty() {
            return Err(Error::Parse {
                line: lineno + 1,
                message: format!("expected at least user and item fields, got {:?}", trimmed),
            });
        }
        let pair = (fields[0].to_string(), fields[1].to_string());
        if seen.insert(pair.clone()) {
            out.push(pair);
        }
    }
    if out.is_empty() {
        return Err(Error::EmptyDataset("no interactions in input".into()));
    }
    Ok(out)
}

/// Filtered interactions with contiguous ids, before splitting.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexedInteractions {
    pub num_users: usize,
    pub num_items: usize,
    pub interactions: Vec<Interaction>,
    pub user_ids: Vec<String>,
    pub item_ids: Vec<String>,
}

/// Drops users and items with fewer than `min_interactions` interactions,
/// repeating until nothing changes, then assigns contiguous indices in
/// order of first appearance.
pub fn filter_and_index(raw: &[RawInteraction], min_interactions: usize) -> Result<IndexedInteractions> {
    if min_interactions == 0 {
        return Err(Error::Config("min_interactions must be at least 1".into()));
    }
    let mut alive = vec![true; raw.len()];
    loop {
        let mut user_count: HashMap<&str, usize> = HashMap::new();
        let mut item_count: HashMap<&str, usize> = HashMap::new();
        for ((u, i), _) in raw.iter().zip(&alive).filter(|(_, a)| **a) {
            *user_count.entry(u).or_default() += 1;
            *item_count.entry(i).or_default() += 1;
        }
        let mut changed = false;
        for ((u, i), a) in raw.iter().zip(alive.iter_mut()) {
            if *a && (user_count[u.as_str()] < min_interactions || item_count[i.as_str()] < min_interactions) {
                *a = false;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }

    let mut user_index: HashMap<&str, usize> = HashMap::new();
    let mut item_index: HashMap<&str, usize> = HashMap::new();
    let mut user_ids = Vec::new();
    let mut item_ids = Vec::new();
    let mut interactions = Vec::new();
    for ((u, i), _) in raw.iter().zip(&alive).filter(|(_, a)| **a) {
        let ui = *user_index.entry(u).or_insert_with(|| {
            user_ids.push(u.clone());
            user_ids.len() - 1
        });
        let ii = *item_index.entry(i).or_insert_with(|| {
            item_ids.push(i.clone());
            item_ids.len() - 1
        });
        interactions.push(Interaction::new(ui, ii));
    }
    if interactions.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "every interaction was filtered out at min_interactions = {min_interactions}"
        )));
    }
    Ok(IndexedInteractions {
        num_users: user_ids.len(),
        num_items: item_ids.len(),
        interactions,
        user_ids,
        item_ids,
    })
}

/// Train / validation / test proportions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.8,
            validation: 0.1,
            test: 0.1,
        }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        let all = [self.train, self.validation, self.test];
        if all.iter().any(|r| !(*r > 0.0)) || (all.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split ratios must be positive and sum to 1, got {all:?}"
            )));
        }
        Ok(())
    }

    /// `(train, validation, test)` counts for a user with `n` interactions.
    /// Each held-out part gets at least one interaction; train keeps the rest.
    pub fn counts(&self, n: usize) -> (usize, usize, usize) {
        let val = ((n as f64 * self.validation).round() as usize).max(1);
        let test = ((n as f64 * self.test).round() as usize).max(1);
        let held = (val + test).min(n.saturating_sub(1));
        let test = test.min(held);
        let val = held - test;
        (n - held, val, test)
    }
}

/// Interaction data split into train / validation / test.
///
/// Built once and immutable afterwards. Besides the three interaction
/// lists it keeps per-user sorted item lists for fast membership tests.
#[derive(Debug, Clone)]
pub struct InteractionDataset {
    num_users: usize,
    num_items: usize,
    train: Vec<Interaction>,
    validation: Vec<Interaction>,
    test: Vec<Interaction>,
    user_ids: Vec<String>,
    item_ids: Vec<String>,
    train_by_user: Vec<Vec<usize>>,
    validation_by_user: Vec<Vec<usize>>,
    test_by_user: Vec<Vec<usize>>,
    observed_by_user: Vec<Vec<usize>>,
}

impl PartialEq for InteractionDataset {
    fn eq(&self, other: &Self) -> bool {
        self.num_users == other.num_users
            && self.num_items == other.num_items
            && self.train == other.train
            && self.validation == other.validation
            && self.test == other.test
            && self.user_ids == other.user_ids
            && self.item_ids == other.item_ids
    }
}

fn by_user(num_users: usize, parts: &[&[Interaction]]) -> Vec<Vec<usize>> {
    let mut lists = vec![Vec::new(); num_users];
    for part in parts {
        for x in *part {
            lists[x.user].push(x.item);
        }
    }
    lists.iter_mut().for_each(|l| {
        l.sort_unstable();
        l.dedup();
    });
    lists
}

impl InteractionDataset {
    /// Assembles a dataset from explicit parts, checking that indices are in
    /// range and that no pair appears twice. See [`Self::check_coverage`]
    /// for the no-cold-start invariant.
    pub fn from_parts(
        user_ids: Vec<String>,
        item_ids: Vec<String>,
        mut train: Vec<Interaction>,
        mut validation: Vec<Interaction>,
        mut test: Vec<Interaction>,
    ) -> Result<Self> {
        let (num_users, num_items) = (user_ids.len(), item_ids.len());
        let mut seen = HashSet::new();
        for x in train.iter().chain(&validation).chain(&test) {
            if x.user >= num_users || x.item >= num_items {
                return Err(Error::Constraint(format!(
                    "interaction {x:?} out of range ({num_users} users, {num_items} items)"
                )));
            }
            if !seen.insert(*x) {
                return Err(Error::Constraint(format!("duplicate interaction {x:?}")));
            }
        }
        if train.is_empty() {
            return Err(Error::EmptyDataset("train split is empty".into()));
        }
        train.sort_unstable();
        validation.sort_unstable();
        test.sort_unstable();
        let train_by_user = by_user(num_users, &[&train]);
        let validation_by_user = by_user(num_users, &[&validation]);
        let test_by_user = by_user(num_users, &[&test]);
        let observed_by_user = by_user(num_users, &[&train, &validation, &test]);
        Ok(InteractionDataset {
            num_users,
            num_items,
            train,
            validation,
            test,
            user_ids,
            item_ids,
            train_by_user,
            validation_by_user,
            test_by_user,
            observed_by_user,
        })
    }

    /// Every user and every item must have at least one train interaction.
    pub fn check_coverage(&self) -> Result<()> {
        if let Some(u) = self.train_by_user.iter().position(Vec::is_empty) {
            return Err(Error::Constraint(format!("user {u} has no train interaction")));
        }
        let mut item_seen = vec![false; self.num_items];
        for x in &self.train {
            item_seen[x.item] = true;
        }
        if let Some(i) = item_seen.iter().position(|s| !s) {
            return Err(Error::Constraint(format!("item {i} has no train interaction")));
        }
        Ok(())
    }

    /// FNV-1a hash over the id maps and all three splits; used to tie graph
    /// bundles and checkpoints to the snapshot they were built from.
    pub fn fingerprint(&self) -> u64 {
        const PRIME: u64 = 0x0000_0100_0000_01b3;
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |bytes: &[u8]| {
            for &b in bytes {
                h ^= u64::from(b);
                h = h.wrapping_mul(PRIME);
            }
        };
        for id in self.user_ids.iter().chain(&self.item_ids) {
            eat(id.as_bytes());
            eat(&[0xff]);
        }
        for (tag, part) in [(b'T', &self.train), (b'V', &self.validation), (b'E', &self.test)] {
            for x in part.iter() {
                eat(&[tag]);
                eat(&(x.user as u64).to_le_bytes());
                eat(&(x.item as u64).to_le_bytes());
            }
        }
        h
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn num_interactions(&self) -> usize {
        self.train.len() + self.validation.len() + self.test.len()
    }

    /// Fraction of the user-item matrix that is observed.
    pub fn density(&self) -> f64 {
        self.num_interactions() as f64 / (self.num_users as f64 * self.num_items as f64)
    }

    pub fn train(&self) -> &[Interaction] {
        &self.train
    }

    pub fn validation(&self) -> &[Interaction] {
        &self.validation
    }

    pub fn test(&self) -> &[Interaction] {
        &self.test
    }

    pub fn user_ids(&self) -> &[String] {
        &self.user_ids
    }

    pub fn item_ids(&self) -> &[String] {
        &self.item_ids
    }

    pub fn user_index(&self, raw: &str) -> Option<usize> {
        self.user_ids.iter().position(|u| u == raw)
    }

    pub fn item_index(&self, raw: &str) -> Option<usize> {
        self.item_ids.iter().position(|i| i == raw)
    }

    /// Sorted train items of `user`.
    pub fn train_items(&self, user: usize) -> &[usize] {
        &self.train_by_user[user]
    }

    pub fn validation_items(&self, user: usize) -> &[usize] {
        &self.validation_by_user[user]
    }

    pub fn test_items(&self, user: usize) -> &[usize] {
        &self.test_by_user[user]
    }

    /// Sorted union of train, validation and test items of `user`.
    pub fn observed_items(&self, user: usize) -> &[usize] {
        &self.observed_by_user[user]
    }

    pub fn is_observed(&self, user: usize, item: usize) -> bool {
        self.observed_by_user[user].binary_search(&item).is_ok()
    }

    pub fn is_train(&self, user: usize, item: usize) -> bool {
        self.train_by_user[user].binary_search(&item).is_ok()
    }
}

/// Per-user random split with the no-cold-start constraint: an interaction
/// is only held out if its item keeps at least one other interaction that
/// can stay in train. Users are visited in a seeded random order.
pub fn split(data: &IndexedInteractions, ratios: SplitRatios, seed: u64) -> Result<InteractionDataset> {
    ratios.validate()?;
    let mut per_user = vec![Vec::new(); data.num_users];
    let mut item_total = vec![0usize; data.num_items];
    for x in &data.interactions {
        per_user[x.user].push(x.item);
        item_total[x.item] += 1;
    }
    if let Some((u, items)) = per_user.iter().enumerate().find(|(_, l)| l.len() < 3) {
        return Err(Error::Constraint(format!(
            "user {} has {} interactions; at least 3 are needed to populate every split",
            data.user_ids[u],
            items.len()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..data.num_users).collect();
    order.shuffle(&mut rng);
    let mut held_out = vec![0usize; data.num_items];
    let (mut train, mut validation, mut test) = (Vec::new(), Vec::new(), Vec::new());

    for u in order {
        let mut items = per_user[u].clone();
        items.sort_unstable();
        items.shuffle(&mut rng);
        let (_, n_val, n_test) = ratios.counts(items.len());
        let (mut want_test, mut want_val) = (n_test, n_val);
        for item in items {
            let can_hold = item_total[item] - held_out[item] >= 2;
            if can_hold && want_test > 0 {
                want_test -= 1;
                held_out[item] += 1;
                test.push(Interaction::new(u, item));
            } else if can_hold && want_val > 0 {
                want_val -= 1;
                held_out[item] += 1;
                validation.push(Interaction::new(u, item));
            } else {
                train.push(Interaction::new(u, item));
            }
        }
    }
    let ds = InteractionDataset::from_parts(
        data.user_ids.clone(),
        data.item_ids.clone(),
        train,
        validation,
        test,
    )?;
    ds.check_coverage()?;
    Ok(ds)
}

const MAX_NEGATIVE_ATTEMPTS: usize = 10_000;

/// Draws `batch_size` BPR triplets: a train interaction uniformly at random,
/// then a negative item uniformly among the user's unobserved items by
/// rejection. Users who have interacted with every item are skipped.
pub fn sample_triplets<R: Rng + ?Sized>(
    data: &InteractionDataset,
    batch_size: usize,
    rng: &mut R,
) -> Result<Vec<Triplet>> {
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be at least 1".into()));
    }
    let mut out = Vec::with_capacity(batch_size);
    let mut skipped = 0usize;
    while out.len() < batch_size {
        let pos = data.train[rng.gen_range(0..data.train.len())];
        if data.observed_items(pos.user).len() >= data.num_items {
            skipped += 1;
            if skipped > MAX_NEGATIVE_ATTEMPTS {
                return Err(Error::Sampling(
                    "every sampled user has interacted with all items".into(),
                ));
            }
            continue;
        }
        let mut attempts = 0;
        let j = loop {
            let j = rng.gen_range(0..data.num_items);
            if !data.is_observed(pos.user, j) {
                break j;
            }
            attempts += 1;
            if attempts > MAX_NEGATIVE_ATTEMPTS {
                return Err(Error::Sampling(format!(
                    "no negative item found for user {}",
                    pos.user
                )));
            }
        };
        out.push(Triplet {
            u: pos.user,
            i: pos.item,
            j,
        });
    }
    Ok(out)
}
