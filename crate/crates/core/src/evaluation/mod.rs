//! Top-k ranking metrics.
//!
//! Every item is scored for every evaluated user. Items the user already
//! interacted with in the masked splits are excluded, ties are broken by
//! ascending item index, and the relevant set is the user's held-out items.

use std::cmp::Ordering;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::InteractionDataset;
use crate::error::{Error, Result};
use crate::graphs::GraphBundle;
use crate::model::{EncodeContext, Embeddings, Model, NeighborSource};
use crate::numerics::dot;

/// Held-out split to score against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    /// Relevant: validation items. Masked: train items.
    Validation,
    /// Relevant: test items. Masked: train and validation items.
    Test,
}

impl Target {
    pub fn relevant<'d>(&self, ds: &'d InteractionDataset, user: usize) -> &'d [usize] {
        match self {
            Target::Validation => ds.validation_items(user),
            Target::Test => ds.test_items(user),
        }
    }

    fn masked(&self, ds: &InteractionDataset, user: usize) -> Vec<usize> {
        match self {
            Target::Validation => ds.train_items(user).to_vec(),
            Target::Test => {
                let mut m = ds.train_items(user).to_vec();
                m.extend_from_slice(ds.validation_items(user));
                m.sort_unstable();
                m
            }
        }
    }
}

impl std::fmt::Display for Target {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Target::Validation => "validation",
            Target::Test => "test",
        })
    }
}

/// Neighbourhoods used by the bipartite branch at inference time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalNeighborhood {
    /// All bipartite neighbours, capped at `max_eval_neighbors`.
    Full,
    /// The union of the pre-sampled training sets.
    PresampledUnion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub cutoffs: Vec<usize>,
    pub neighborhood: EvalNeighborhood,
    pub max_eval_neighbors: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            cutoffs: vec![20],
            neighborhood: EvalNeighborhood::Full,
            max_eval_neighbors: 50,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.cutoffs.is_empty() || self.cutoffs.contains(&0) {
            return Err(Error::Config("cutoffs must be a non-empty list of positive k".into()));
        }
        if self.max_eval_neighbors == 0 {
            return Err(Error::Config("max_eval_neighbors must be at least 1".into()));
        }
        Ok(())
    }

    pub fn source<'a>(&self, bundle: &'a GraphBundle) -> NeighborSource<'a> {
        match self.neighborhood {
            EvalNeighborhood::Full => NeighborSource::full(&bundle.bipartite, self.max_eval_neighbors),
            EvalNeighborhood::PresampledUnion => NeighborSource::presampled_union(bundle),
        }
    }
}

/// The `k` best items by score, skipping `excluded` (sorted). Ties go to the
/// smaller item index.
pub fn top_k(scores: &[f64], excluded: &[usize], k: usize) -> Vec<usize> {
    let mut cand: Vec<usize> = (0..scores.len())
        .filter(|i| excluded.binary_search(i).is_err())
        .collect();
    let order = |a: &usize, b: &usize| -> Ordering {
        scores[*b].total_cmp(&scores[*a]).then(a.cmp(b))
    };
    if cand.len() > k && k > 0 {
        cand.select_nth_unstable_by(k - 1, order);
        cand.truncate(k);
    }
    cand.sort_unstable_by(order);
    cand.truncate(k);
    cand
}

/// `|relevant ∩ ranked[..k]| / |relevant|`; zero when nothing is relevant.
pub fn recall_at_k(ranked: &[usize], relevant: &[usize], k: usize) -> f64 {
    if relevant.is_empty() {
        return 0.0;
    }
    let hits = ranked
        .iter()
        .take(k)
        .filter(|i| relevant.contains(i))
        .count();
    hits as f64 / relevant.len() as f64
}

/// Binary-relevance NDCG with the ideal ranking placing
/// `min(k, |relevant|)` hits first.
pub fn ndcg_at_k(ranked: &[usize], relevant: &[usize], k: usize) -> f64 {
    if relevant.is_empty() {
        return 0.0;
    }
    let gain = |rank: usize| 1.0 / ((rank + 2) as f64).log2();
    let dcg: f64 = ranked
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, i)| relevant.contains(i))
        .map(|(r, _)| gain(r))
        .sum();
    let idcg: f64 = (0..k.min(relevant.len())).map(gain).sum();
    dcg / idcg
}

/// Metrics at one cutoff, averaged over evaluated users.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CutoffMetrics {
    pub k: usize,
    pub recall: f64,
    pub ndcg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub target: Target,
    pub metrics: Vec<CutoffMetrics>,
    pub users_evaluated: usize,
    /// Users left out because their relevant set was empty.
    pub users_skipped: usize,
}

impl EvalReport {
    pub fn at(&self, k: usize) -> Option<&CutoffMetrics> {
        self.metrics.iter().find(|m| m.k == k)
    }

    pub fn recall(&self, k: usize) -> f64 {
        self.at(k).map_or(f64::NAN, |m| m.recall)
    }

    pub fn ndcg(&self, k: usize) -> f64 {
        self.at(k).map_or(f64::NAN, |m| m.ndcg)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("target,k,recall,ndcg,users_evaluated,users_skipped\n");
        for m in &self.metrics {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                self.target, m.k, m.recall, m.ndcg, self.users_evaluated, self.users_skipped
            );
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Writes `<stem>.json` and `<stem>.csv`.
    pub fn write(&self, stem: impl AsRef<Path>) -> Result<()> {
        let stem = stem.as_ref();
        std::fs::write(stem.with_extension("json"), self.to_json()?)?;
        std::fs::write(stem.with_extension("csv"), self.to_csv())?;
        Ok(())
    }
}

/// Scores `users` (all users when `None`) against `target`.
pub fn evaluate_embeddings(
    emb: &Embeddings,
    ds: &InteractionDataset,
    target: Target,
    cutoffs: &[usize],
    users: Option<&[usize]>,
) -> Result<EvalReport> {
    if emb.users.rows() != ds.num_users() || emb.items.rows() != ds.num_items() {
        return Err(Error::dim(
            "evaluate",
            (emb.users.rows(), emb.items.rows()),
            (ds.num_users(), ds.num_items()),
        ));
    }
    if cutoffs.is_empty() || cutoffs.contains(&0) {
        return Err(Error::Config("cutoffs must be positive".into()));
    }
    let all: Vec<usize>;
    let users = match users {
        Some(u) => u,
        None => {
            all = (0..ds.num_users()).collect();
            &all
        }
    };
    let kmax = *cutoffs.iter().max().expect("non-empty");
    let per_user: Vec<Option<Vec<(f64, f64)>>> = users
        .par_iter()
        .map(|&u| {
            let relevant = target.relevant(ds, u);
            if relevant.is_empty() {
                return None;
            }
            let urow = emb.users.row(u);
            let scores: Vec<f64> = (0..ds.num_items())
                .map(|i| dot(urow, emb.items.row(i)))
                .collect();
            let ranked = top_k(&scores, &target.masked(ds, u), kmax);
            Some(
                cutoffs
                    .iter()
                    .map(|&k| (recall_at_k(&ranked, relevant, k), ndcg_at_k(&ranked, relevant, k)))
                    .collect(),
            )
        })
        .collect();
    let mut sums = vec![(0.0, 0.0); cutoffs.len()];
    let mut evaluated = 0;
    for row in per_user.iter().flatten() {
        evaluated += 1;
        for (s, (r, n)) in sums.iter_mut().zip(row) {
            s.0 += r;
            s.1 += n;
        }
    }
    let denom = evaluated.max(1) as f64;
    Ok(EvalReport {
        target,
        metrics: cutoffs
            .iter()
            .zip(&sums)
            .map(|(&k, &(r, n))| CutoffMetrics {
                k,
                recall: r / denom,
                ndcg: n / denom,
            })
            .collect(),
        users_evaluated: evaluated,
        users_skipped: users.len() - evaluated,
    })
}

/// Computes inference embeddings for `model` under `config`.
pub fn inference_embeddings(
    model: &Model,
    bundle: Option<&GraphBundle>,
    config: &EvalConfig,
) -> Result<Embeddings> {
    match (model.needs_graphs(), bundle) {
        (false, _) => model.embed_all(None),
        (true, Some(b)) => {
            let ctx = EncodeContext::with_neighbors(b, config.source(b));
            model.embed_all(Some(&ctx))
        }
        (true, None) => Err(Error::Config("graph bundle required to evaluate this model".into())),
    }
}

pub fn evaluate_model(
    model: &Model,
    bundle: Option<&GraphBundle>,
    ds: &InteractionDataset,
    target: Target,
    config: &EvalConfig,
) -> Result<EvalReport> {
    config.validate()?;
    let emb = inference_embeddings(model, bundle, config)?;
    evaluate_embeddings(&emb, ds, target, &config.cutoffs, None)
}
