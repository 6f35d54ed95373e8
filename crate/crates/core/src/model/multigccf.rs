use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::config::{FusionMode, ModelConfig};
use super::context::{EncodeContext, Side};
use super::{bpr_pairwise, Embeddings, LossTerms};
use crate::dataset::Triplet;
use crate::error::{Error, Result};
use crate::numerics::{xavier_init, Matrix, ParamId, Parameter, ParameterStore, Tape, Var};

const ATTENTION_BRANCHES: usize = 3;
const INFERENCE_CHUNK: usize = 2048;

#[derive(Debug, Clone, PartialEq)]
struct SideParams {
    embedding: ParamId,
    w: Vec<ParamId>,
    q: Vec<ParamId>,
    mge: Option<ParamId>,
    skip: Option<ParamId>,
    /// `W_a1`, `W_a2`, `W_a3`, `W_as`.
    attention: Option<[ParamId; 4]>,
}

/// The three per-side branch outputs plus their fusion, as plain matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct Branches {
    pub bipar: Option<Matrix>,
    pub mge: Option<Matrix>,
    pub skip: Option<Matrix>,
    pub fused: Matrix,
    /// Per-row weights over the active branches (attention fusion only).
    pub attention: Option<Matrix>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Encoded {
    pub users: Branches,
    pub items: Branches,
}

struct SideVars {
    bipar: Option<Var>,
    mge: Option<Var>,
    skip: Option<Var>,
    fused: Var,
    attention: Option<Var>,
}

/// Bipar-GCN + multi-graph encoder + skip connection, fused per side.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiGccf {
    config: ModelConfig,
    num_users: usize,
    num_items: usize,
    params: ParameterStore,
    user: SideParams,
    item: SideParams,
}

fn side_prefix(side: Side) -> &'static str {
    match side {
        Side::User => "user",
        Side::Item => "item",
    }
}

impl MultiGccf {
    /// Xavier-initialised model. Parameters are drawn in a fixed order
    /// (embeddings, GCN layers, multi-graph, skip, attention) so toggling a
    /// later branch leaves the earlier draws unchanged.
    pub fn new(config: ModelConfig, num_users: usize, num_items: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        if num_users == 0 || num_items == 0 {
            return Err(Error::Config("model needs at least one user and one item".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParameterStore::new();
        let mut add = |name: String, rows: usize, cols: usize, regularized: bool| {
            let mut p = Parameter::new(name, xavier_init(rows, cols, &mut rng));
            p.regularized = regularized;
            store.add(p);
        };
        let d0 = config.input_dim;
        let d = config.output_dim;
        add("user.embedding".into(), num_users, d0, config.regularize_embeddings);
        add("item.embedding".into(), num_items, d0, config.regularize_embeddings);
        if config.use_bipar {
            let dims = config.layer_dims();
            for side in [Side::User, Side::Item] {
                for k in 1..=config.num_gcn_layers {
                    let (prev, next) = (dims[k - 1], dims[k]);
                    add(format!("{}.gcn{k}.Q", side_prefix(side)), prev, prev, true);
                    add(format!("{}.gcn{k}.W", side_prefix(side)), 2 * prev, next, true);
                }
            }
        }
        if config.use_mge {
            for side in [Side::User, Side::Item] {
                add(format!("{}.mge.M", side_prefix(side)), d0, d, true);
            }
        }
        if config.use_skip {
            for side in [Side::User, Side::Item] {
                add(format!("{}.skip.S", side_prefix(side)), d0, d, true);
            }
        }
        if config.fusion == FusionMode::Attention {
            for side in [Side::User, Side::Item] {
                let p = side_prefix(side);
                for b in 1..=ATTENTION_BRANCHES {
                    add(format!("{p}.att.W{b}"), d, d, true);
                }
                add(format!("{p}.att.Ws"), d, ATTENTION_BRANCHES, true);
            }
        }
        Self::from_parts(config, num_users, num_items, store)
    }

    /// Reassembles a model around an existing parameter store (for example
    /// one read from a checkpoint), checking every expected tensor.
    pub fn from_parts(
        config: ModelConfig,
        num_users: usize,
        num_items: usize,
        params: ParameterStore,
    ) -> Result<Self> {
        config.validate()?;
        let lookup = |name: String, shape: (usize, usize)| -> Result<ParamId> {
            let id = params
                .find(&name)
                .ok_or_else(|| Error::Format(format!("missing parameter {name}")))?;
            let got = params.get(id).shape();
            if got != shape {
                return Err(Error::Format(format!(
                    "parameter {name} has shape {got:?}, expected {shape:?}"
                )));
            }
            Ok(id)
        };
        let dims = config.layer_dims();
        let (d0, d) = (config.input_dim, config.output_dim);
        let side = |side: Side, count: usize| -> Result<SideParams> {
            let p = side_prefix(side);
            let mut w = Vec::new();
            let mut q = Vec::new();
            if config.use_bipar {
                for k in 1..=config.num_gcn_layers {
                    let (prev, next) = (dims[k - 1], dims[k]);
                    q.push(lookup(format!("{p}.gcn{k}.Q"), (prev, prev))?);
                    w.push(lookup(format!("{p}.gcn{k}.W"), (2 * prev, next))?);
                }
            }
            let attention = if config.fusion == FusionMode::Attention {
                Some([
                    lookup(format!("{p}.att.W1"), (d, d))?,
                    lookup(format!("{p}.att.W2"), (d, d))?,
                    lookup(format!("{p}.att.W3"), (d, d))?,
                    lookup(format!("{p}.att.Ws"), (d, ATTENTION_BRANCHES))?,
                ])
            } else {
                None
            };
            Ok(SideParams {
                embedding: lookup(format!("{p}.embedding"), (count, d0))?,
                w,
                q,
                mge: config
                    .use_mge
                    .then(|| lookup(format!("{p}.mge.M"), (d0, d)))
                    .transpose()?,
                skip: config
                    .use_skip
                    .then(|| lookup(format!("{p}.skip.S"), (d0, d)))
                    .transpose()?,
                attention,
            })
        };
        let user = side(Side::User, num_users)?;
        let item = side(Side::Item, num_items)?;
        Ok(MultiGccf {
            config,
            num_users,
            num_items,
            params,
            user,
            item,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn params(&self) -> &ParameterStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterStore {
        &mut self.params
    }

    pub fn embedding_id(&self, side: Side) -> ParamId {
        self.side(side).embedding
    }

    fn side(&self, side: Side) -> &SideParams {
        match side {
            Side::User => &self.user,
            Side::Item => &self.item,
        }
    }

    /// Copies pre-trained embedding tables in and freezes them.
    pub fn warm_start(&mut self, users: &Matrix, items: &Matrix) -> Result<()> {
        for (side, table) in [(Side::User, users), (Side::Item, items)] {
            let id = self.side(side).embedding;
            let p = self.params.get_mut(id);
            if p.shape() != table.shape() {
                return Err(Error::dim("warm_start", p.shape(), table.shape()));
            }
            p.value = table.clone();
            p.frozen = true;
        }
        Ok(())
    }

    /// Layer-wise Bipar-GCN for arbitrary user and item lists. Rows of the
    /// returned vars follow the order of `users` and `items`.
    ///
    /// Layer `k` of `K` aggregates over hop `K - k` lists, so the final
    /// layer sees the first-hop sample. Every node carries one list per hop,
    /// which makes `h^k(n)` a single well-defined value shared by all roots.
    fn bipar_vars(
        &self,
        tape: &mut Tape<'_>,
        ctx: &EncodeContext<'_>,
        users: &[usize],
        items: &[usize],
        training: bool,
        rng: &mut dyn RngCore,
    ) -> Result<(Var, Var)> {
        let k_max = self.config.num_gcn_layers;
        let mut need_u = vec![Vec::new(); k_max + 1];
        let mut need_i = vec![Vec::new(); k_max + 1];
        let mut lists_u = vec![Vec::new(); k_max + 1];
        let mut lists_i = vec![Vec::new(); k_max + 1];
        need_u[k_max] = sorted_unique(users);
        need_i[k_max] = sorted_unique(items);
        for k in (1..=k_max).rev() {
            let hop = k_max - k;
            let lu: Vec<Vec<usize>> = need_u[k]
                .iter()
                .map(|&u| ctx.neighbors.list(Side::User, u, hop))
                .collect();
            let li: Vec<Vec<usize>> = need_i[k]
                .iter()
                .map(|&i| ctx.neighbors.list(Side::Item, i, hop))
                .collect();
            let mut nu = need_u[k].clone();
            nu.extend(li.iter().flatten());
            let mut ni = need_i[k].clone();
            ni.extend(lu.iter().flatten());
            need_u[k - 1] = sorted_unique(&nu);
            need_i[k - 1] = sorted_unique(&ni);
            lists_u[k] = lu;
            lists_i[k] = li;
        }
        if let Some(&bad) = need_u[0].iter().find(|&&u| u >= self.num_users) {
            return Err(Error::Constraint(format!("user index {bad} out of range")));
        }
        if let Some(&bad) = need_i[0].iter().find(|&&i| i >= self.num_items) {
            return Err(Error::Constraint(format!("item index {bad} out of range")));
        }
        let eu = tape.param(self.user.embedding);
        let ei = tape.param(self.item.embedding);
        let mut hu = tape.gather_rows(eu, &need_u[0])?;
        let mut hi = tape.gather_rows(ei, &need_i[0])?;
        for k in 1..=k_max {
            let next_u = self.gcn_layer(
                tape, Side::User, k, (hu, &need_u[k - 1]), (hi, &need_i[k - 1]),
                &need_u[k], &lists_u[k], training, rng,
            )?;
            let next_i = self.gcn_layer(
                tape, Side::Item, k, (hi, &need_i[k - 1]), (hu, &need_u[k - 1]),
                &need_i[k], &lists_i[k], training, rng,
            )?;
            hu = next_u;
            hi = next_i;
        }
        let hu = reorder(tape, hu, &need_u[k_max], users)?;
        let hi = reorder(tape, hi, &need_i[k_max], items)?;
        Ok((hu, hi))
    }

    #[allow(clippy::too_many_arguments)]
    fn gcn_layer(
        &self,
        tape: &mut Tape<'_>,
        side: Side,
        k: usize,
        own: (Var, &[usize]),
        other: (Var, &[usize]),
        targets: &[usize],
        lists: &[Vec<usize>],
        training: bool,
        rng: &mut dyn RngCore,
    ) -> Result<Var> {
        let sp = self.side(side);
        let self_rows = positions(own.1, targets);
        let mut flat = Vec::new();
        let mut offsets = Vec::with_capacity(lists.len() + 1);
        offsets.push(0);
        for list in lists {
            flat.extend(positions(other.1, list));
            offsets.push(flat.len());
        }
        let hs = tape.gather_rows(own.0, &self_rows)?;
        let nbr = tape.gather_rows(other.0, &flat)?;
        let mean = tape.segment_mean(nbr, &offsets)?;
        let q = tape.param(sp.q[k - 1]);
        let agg = tape.matmul(mean, q)?;
        let agg = tape.tanh(agg);
        let agg = tape.dropout(agg, self.config.dropout_rate, rng, training)?;
        let cat = tape.concat_cols(&[hs, agg])?;
        let w = tape.param(sp.w[k - 1]);
        let out = tape.matmul(cat, w)?;
        Ok(tape.tanh(out))
    }

    /// `tanh((Σ_{n' ∈ N(n)} e_{n'}) M)` over the homogeneous graph; nodes
    /// without neighbours get the zero vector.
    fn mge_var(
        &self,
        tape: &mut Tape<'_>,
        ctx: &EncodeContext<'_>,
        side: Side,
        nodes: &[usize],
        m: ParamId,
    ) -> Result<Var> {
        let graph = ctx.similarity(side);
        let mut flat = Vec::new();
        let mut offsets = vec![0];
        for &n in nodes {
            let nbrs = graph
                .get(n)
                .ok_or_else(|| Error::Constraint(format!("node {n} missing from similarity graph")))?;
            flat.extend_from_slice(nbrs);
            offsets.push(flat.len());
        }
        let e = tape.param(self.side(side).embedding);
        let rows = tape.gather_rows(e, &flat)?;
        let summed = tape.segment_sum(rows, &offsets)?;
        let m = tape.param(m);
        let out = tape.matmul(summed, m)?;
        Ok(tape.tanh(out))
    }

    fn skip_var(&self, tape: &mut Tape<'_>, side: Side, nodes: &[usize], s: ParamId) -> Result<Var> {
        let e = tape.param(self.side(side).embedding);
        let rows = tape.gather_rows(e, nodes)?;
        let s = tape.param(s);
        let out = tape.matmul(rows, s)?;
        Ok(tape.tanh(out))
    }

    fn fuse_vars(
        &self,
        tape: &mut Tape<'_>,
        side: Side,
        branches: [Option<Var>; 3],
    ) -> Result<(Var, Option<Var>)> {
        let active: Vec<(usize, Var)> = branches
            .iter()
            .enumerate()
            .filter_map(|(b, v)| v.map(|v| (b, v)))
            .collect();
        let vars: Vec<Var> = active.iter().map(|(_, v)| *v).collect();
        match self.config.fusion {
            FusionMode::Sum => Ok((tape.add_all(&vars)?, None)),
            FusionMode::Concat => Ok((tape.concat_cols(&vars)?, None)),
            FusionMode::Attention => {
                let ids = self.side(side).attention.expect("attention parameters exist");
                let mut projected = Vec::with_capacity(active.len());
                for &(b, v) in &active {
                    let w = tape.param(ids[b]);
                    projected.push(tape.matmul(v, w)?);
                }
                let pre = tape.add_all(&projected)?;
                let act = tape.tanh(pre);
                let ws = tape.param(ids[3]);
                let logits = tape.matmul(act, ws)?;
                let cols: Vec<usize> = active.iter().map(|(b, _)| *b).collect();
                let logits = tape.gather_cols(logits, &cols)?;
                let weights = tape.softmax_rows(logits);
                let mut weighted = Vec::with_capacity(active.len());
                for (pos, &(_, v)) in active.iter().enumerate() {
                    let a = tape.gather_cols(weights, &[pos])?;
                    weighted.push(tape.scale_rows(v, a)?);
                }
                Ok((tape.add_all(&weighted)?, Some(weights)))
            }
        }
    }

    fn side_vars(
        &self,
        tape: &mut Tape<'_>,
        ctx: &EncodeContext<'_>,
        side: Side,
        nodes: &[usize],
        bipar: Option<Var>,
    ) -> Result<SideVars> {
        let sp = self.side(side);
        let mge = sp.mge.map(|m| self.mge_var(tape, ctx, side, nodes, m)).transpose()?;
        let skip = sp.skip.map(|s| self.skip_var(tape, side, nodes, s)).transpose()?;
        let (fused, attention) = self.fuse_vars(tape, side, [bipar, mge, skip])?;
        Ok(SideVars {
            bipar,
            mge,
            skip,
            fused,
            attention,
        })
    }

    fn forward(
        &self,
        tape: &mut Tape<'_>,
        ctx: &EncodeContext<'_>,
        users: &[usize],
        items: &[usize],
        training: bool,
        rng: &mut dyn RngCore,
    ) -> Result<(SideVars, SideVars)> {
        let (hu, hi) = if self.config.use_bipar {
            let (hu, hi) = self.bipar_vars(tape, ctx, users, items, training, rng)?;
            (Some(hu), Some(hi))
        } else {
            (None, None)
        };
        let u = self.side_vars(tape, ctx, Side::User, users, hu)?;
        let i = self.side_vars(tape, ctx, Side::Item, items, hi)?;
        Ok((u, i))
    }

    /// Inference-mode encoding of the given nodes, every branch included.
    pub fn encode(&self, ctx: &EncodeContext<'_>, users: &[usize], items: &[usize]) -> Result<Encoded> {
        let mut tape = Tape::new(&self.params);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (u, i) = self.forward(&mut tape, ctx, users, items, false, &mut rng)?;
        let grab = |tape: &Tape<'_>, s: &SideVars| Branches {
            bipar: s.bipar.map(|v| tape.value(v).clone()),
            mge: s.mge.map(|v| tape.value(v).clone()),
            skip: s.skip.map(|v| tape.value(v).clone()),
            fused: tape.value(s.fused).clone(),
            attention: s.attention.map(|v| tape.value(v).clone()),
        };
        Ok(Encoded {
            users: grab(&tape, &u),
            items: grab(&tape, &i),
        })
    }

    /// Final Bipar-GCN output `h^K` for the given nodes (inference mode).
    pub fn bipar_encode(&self, ctx: &EncodeContext<'_>, users: &[usize], items: &[usize]) -> Result<(Matrix, Matrix)> {
        if !self.config.use_bipar {
            return Err(Error::Config("bipartite branch is disabled".into()));
        }
        let mut tape = Tape::new(&self.params);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (hu, hi) = self.bipar_vars(&mut tape, ctx, users, items, false, &mut rng)?;
        Ok((tape.value(hu).clone(), tape.value(hi).clone()))
    }

    /// Pairwise BPR loss plus both L2 terms over one batch of triplets.
    pub fn batch_loss<'s>(
        &'s self,
        tape: &mut Tape<'s>,
        batch: &[Triplet],
        ctx: &EncodeContext<'_>,
        rng: &mut dyn RngCore,
    ) -> Result<LossTerms> {
        let n = batch.len();
        let users: Vec<usize> = batch.iter().map(|t| t.u).collect();
        let items: Vec<usize> = batch
            .iter()
            .map(|t| t.i)
            .chain(batch.iter().map(|t| t.j))
            .collect();
        let (u, i) = self.forward(tape, ctx, &users, &items, true, rng)?;
        let pos: Vec<usize> = (0..n).collect();
        let neg: Vec<usize> = (n..2 * n).collect();
        let eu = u.fused;
        let ei = tape.gather_rows(i.fused, &pos)?;
        let ej = tape.gather_rows(i.fused, &neg)?;
        let pairwise = bpr_pairwise(tape, eu, ei, ej)?;

        let mut penalties = Vec::new();
        for id in self.params.ids() {
            if self.params.get(id).regularized {
                let p = tape.param(id);
                penalties.push(tape.sum_squares(p));
            }
        }
        let weight_reg = if penalties.is_empty() {
            tape.constant(Matrix::zeros(1, 1))
        } else {
            let s = tape.add_all(&penalties)?;
            tape.scale(s, self.config.lambda)
        };
        let norms = [tape.sum_squares(eu), tape.sum_squares(ei), tape.sum_squares(ej)];
        let s = tape.add_all(&norms)?;
        let embedding_reg = tape.scale(s, self.config.beta);
        let total = tape.add_all(&[pairwise, weight_reg, embedding_reg])?;
        Ok(LossTerms {
            total,
            pairwise,
            weight_reg,
            embedding_reg,
        })
    }

    /// Fused embeddings of every user and item, computed in chunks in
    /// parallel. Results do not depend on the chunking.
    pub fn embed_all(&self, ctx: &EncodeContext<'_>) -> Result<Embeddings> {
        let run = |side: Side, count: usize| -> Result<Matrix> {
            let chunks: Vec<Vec<usize>> = (0..count)
                .collect::<Vec<_>>()
                .chunks(INFERENCE_CHUNK)
                .map(<[usize]>::to_vec)
                .collect();
            let parts: Vec<Matrix> = chunks
                .par_iter()
                .map(|chunk| {
                    let mut tape = Tape::new(&self.params);
                    let mut rng = ChaCha8Rng::seed_from_u64(0);
                    let (users, items): (&[usize], &[usize]) = match side {
                        Side::User => (chunk, &[]),
                        Side::Item => (&[], chunk),
                    };
                    let (u, i) = self.forward(&mut tape, ctx, users, items, false, &mut rng)?;
                    let v = if side == Side::User { u.fused } else { i.fused };
                    Ok(tape.value(v).clone())
                })
                .collect::<Result<_>>()?;
            let cols = self.config.fused_dim();
            let mut data = Vec::with_capacity(count * cols);
            for p in parts {
                data.extend(p.into_vec());
            }
            Matrix::from_vec(count, cols, data)
        };
        Ok(Embeddings {
            users: run(Side::User, self.num_users)?,
            items: run(Side::Item, self.num_items)?,
        })
    }
}

fn sorted_unique(xs: &[usize]) -> Vec<usize> {
    let mut v = xs.to_vec();
    v.sort_unstable();
    v.dedup();
    v
}

fn positions(index: &[usize], nodes: &[usize]) -> Vec<usize> {
    nodes
        .iter()
        .map(|n| index.binary_search(n).expect("node collected during expansion"))
        .collect()
}

fn reorder(tape: &mut Tape<'_>, v: Var, index: &[usize], wanted: &[usize]) -> Result<Var> {
    if index == wanted {
        return Ok(v);
    }
    tape.gather_rows(v, &positions(index, wanted))
}
