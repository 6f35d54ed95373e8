//! Recommendation models.
//!
//! [`MultiGccf`] combines three per-side branches over the initial
//! embedding tables:
//!
//! * a bipartite GCN whose layer `k` maps `[h^{k-1}; tanh(mean(h_nbr) Q^k)]`
//!   through `W^k` and `tanh`, with separate weights for users and items;
//! * a multi-graph encoder summing neighbours on the user-user or item-item
//!   similarity graph, projected by `M`;
//! * a skip connection `tanh(e S)`.
//!
//! The branches are merged by element-wise sum, concatenation or a learned
//! softmax attention. [`Bprmf`] is the factorisation baseline, and
//! [`Model`] wraps either one for training, evaluation and checkpoints.

mod bprmf;
mod config;
mod context;
mod multigccf;

pub use bprmf::Bprmf;
pub use config::{FusionMode, ModelConfig};
pub use context::{EncodeContext, NeighborSource, Side};
pub use multigccf::{Branches, Encoded, MultiGccf};

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::dataset::Triplet;
use crate::error::{Error, Result};
use crate::numerics::{dot, Checkpoint, Matrix, ParameterStore, Tape, Var};

/// Handles to the pieces of a batch loss on a tape.
#[derive(Debug, Clone, Copy)]
pub struct LossTerms {
    pub total: Var,
    pub pairwise: Var,
    pub weight_reg: Var,
    pub embedding_reg: Var,
}

/// Final user and item representations, one row per node.
#[derive(Debug, Clone, PartialEq)]
pub struct Embeddings {
    pub users: Matrix,
    pub items: Matrix,
}

impl Embeddings {
    pub fn score(&self, user: usize, item: usize) -> f64 {
        dot(self.users.row(user), self.items.row(item))
    }
}

/// Preference score: the inner product of two embedding rows.
pub fn score(user: &[f64], item: &[f64]) -> Result<f64> {
    if user.len() != item.len() {
        return Err(Error::dim("score", (1, user.len()), (1, item.len())));
    }
    Ok(dot(user, item))
}

/// `-Σ_rows log σ(<u, i> - <u, j>)`.
pub fn bpr_pairwise(tape: &mut Tape<'_>, eu: Var, ei: Var, ej: Var) -> Result<Var> {
    let pos = tape.mul(eu, ei)?;
    let pos = tape.row_sum(pos);
    let neg = tape.mul(eu, ej)?;
    let neg = tape.row_sum(neg);
    let diff = tape.sub(pos, neg)?;
    let ll = tape.log_sigmoid(diff);
    let total = tape.sum(ll);
    Ok(tape.scale(total, -1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    MultiGccf,
    Bprmf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    kind: ModelKind,
    num_users: usize,
    num_items: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    config: Option<ModelConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dataset_fingerprint: Option<u64>,
}

/// Either model, as used by the trainer and the evaluator.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    MultiGccf(MultiGccf),
    Bprmf(Bprmf),
}

impl From<MultiGccf> for Model {
    fn from(m: MultiGccf) -> Self {
        Model::MultiGccf(m)
    }
}

impl From<Bprmf> for Model {
    fn from(m: Bprmf) -> Self {
        Model::Bprmf(m)
    }
}

impl Model {
    pub fn kind(&self) -> ModelKind {
        match self {
            Model::MultiGccf(_) => ModelKind::MultiGccf,
            Model::Bprmf(_) => ModelKind::Bprmf,
        }
    }

    pub fn num_users(&self) -> usize {
        match self {
            Model::MultiGccf(m) => m.num_users(),
            Model::Bprmf(m) => m.num_users(),
        }
    }

    pub fn num_items(&self) -> usize {
        match self {
            Model::MultiGccf(m) => m.num_items(),
            Model::Bprmf(m) => m.num_items(),
        }
    }

    pub fn needs_graphs(&self) -> bool {
        matches!(self, Model::MultiGccf(_))
    }

    pub fn params(&self) -> &ParameterStore {
        match self {
            Model::MultiGccf(m) => m.params(),
            Model::Bprmf(m) => m.params(),
        }
    }

    pub fn params_mut(&mut self) -> &mut ParameterStore {
        match self {
            Model::MultiGccf(m) => m.params_mut(),
            Model::Bprmf(m) => m.params_mut(),
        }
    }

    /// Training-mode loss. Graph-based models require `ctx`.
    pub fn batch_loss<'s>(
        &'s self,
        tape: &mut Tape<'s>,
        batch: &[Triplet],
        ctx: Option<&EncodeContext<'_>>,
        rng: &mut dyn RngCore,
    ) -> Result<LossTerms> {
        match self {
            Model::MultiGccf(m) => m.batch_loss(tape, batch, require(ctx)?, rng),
            Model::Bprmf(m) => m.batch_loss(tape, batch),
        }
    }

    pub fn embed_all(&self, ctx: Option<&EncodeContext<'_>>) -> Result<Embeddings> {
        match self {
            Model::MultiGccf(m) => m.embed_all(require(ctx)?),
            Model::Bprmf(m) => Ok(m.embed_all()),
        }
    }

    pub fn to_checkpoint(&self, dataset_fingerprint: Option<u64>) -> Result<Checkpoint> {
        let mut header = Header {
            kind: self.kind(),
            num_users: self.num_users(),
            num_items: self.num_items(),
            config: None,
            dim: None,
            lambda: None,
            dataset_fingerprint,
        };
        match self {
            Model::MultiGccf(m) => header.config = Some(m.config().clone()),
            Model::Bprmf(m) => {
                header.dim = Some(m.dim());
                header.lambda = Some(m.lambda());
            }
        }
        Ok(Checkpoint {
            header: serde_json::to_value(&header)?,
            params: self.params().clone(),
        })
    }

    /// Rebuilds a model; returns it with the dataset fingerprint it was
    /// trained on, when recorded.
    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<(Model, Option<u64>)> {
        let header: Header = serde_json::from_value(ckpt.header)
            .map_err(|e| Error::Format(format!("checkpoint header: {e}")))?;
        let model = match header.kind {
            ModelKind::MultiGccf => {
                let config = header
                    .config
                    .ok_or_else(|| Error::Format("checkpoint lacks a model config".into()))?;
                Model::MultiGccf(MultiGccf::from_parts(
                    config,
                    header.num_users,
                    header.num_items,
                    ckpt.params,
                )?)
            }
            ModelKind::Bprmf => {
                let dim = header
                    .dim
                    .ok_or_else(|| Error::Format("checkpoint lacks a dimension".into()))?;
                Model::Bprmf(Bprmf::from_parts(dim, header.lambda.unwrap_or(0.0), ckpt.params)?)
            }
        };
        if model.num_users() != header.num_users || model.num_items() != header.num_items {
            return Err(Error::Format("checkpoint tables disagree with header".into()));
        }
        Ok((model, header.dataset_fingerprint))
    }
}

fn require<'c, 'g>(ctx: Option<&'c EncodeContext<'g>>) -> Result<&'c EncodeContext<'g>> {
    ctx.ok_or_else(|| Error::Config("this model needs graph inputs".into()))
}

#[cfg(test)]
mod tests;
