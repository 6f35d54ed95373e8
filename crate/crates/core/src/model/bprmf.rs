use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{bpr_pairwise, Embeddings, LossTerms};
use crate::dataset::Triplet;
use crate::error::{Error, Result};
use crate::numerics::{xavier_init, Matrix, ParamId, Parameter, ParameterStore, Tape};

/// Plain matrix factorisation trained with the same pairwise loss.
#[derive(Debug, Clone, PartialEq)]
pub struct Bprmf {
    dim: usize,
    lambda: f64,
    params: ParameterStore,
    users: ParamId,
    items: ParamId,
}

impl Bprmf {
    pub fn new(num_users: usize, num_items: usize, dim: usize, lambda: f64, seed: u64) -> Result<Self> {
        if num_users == 0 || num_items == 0 || dim == 0 {
            return Err(Error::Config("BPRMF needs users, items and a positive dimension".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParameterStore::new();
        params.add(Parameter::new("user.embedding", xavier_init(num_users, dim, &mut rng)));
        params.add(Parameter::new("item.embedding", xavier_init(num_items, dim, &mut rng)));
        Self::from_parts(dim, lambda, params)
    }

    pub fn from_parts(dim: usize, lambda: f64, params: ParameterStore) -> Result<Self> {
        let find = |name: &str| {
            let id = params
                .find(name)
                .ok_or_else(|| Error::Format(format!("missing parameter {name}")))?;
            if params.get(id).shape().1 != dim {
                return Err(Error::Format(format!("{name} does not have {dim} columns")));
            }
            Ok(id)
        };
        let users = find("user.embedding")?;
        let items = find("item.embedding")?;
        if !(lambda >= 0.0) {
            return Err(Error::Config("lambda must be non-negative".into()));
        }
        Ok(Bprmf {
            dim,
            lambda,
            params,
            users,
            items,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn num_users(&self) -> usize {
        self.params.get(self.users).shape().0
    }

    pub fn num_items(&self) -> usize {
        self.params.get(self.items).shape().0
    }

    pub fn params(&self) -> &ParameterStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterStore {
        &mut self.params
    }

    pub fn user_table(&self) -> &Matrix {
        self.params.value(self.users)
    }

    pub fn item_table(&self) -> &Matrix {
        self.params.value(self.items)
    }

    /// `-Σ log σ(x_ui - x_uj) + λ (‖E_u‖² + ‖E_i‖²)`.
    pub fn batch_loss<'s>(&'s self, tape: &mut Tape<'s>, batch: &[Triplet]) -> Result<LossTerms> {
        let u: Vec<usize> = batch.iter().map(|t| t.u).collect();
        let i: Vec<usize> = batch.iter().map(|t| t.i).collect();
        let j: Vec<usize> = batch.iter().map(|t| t.j).collect();
        let eu_all = tape.param(self.users);
        let ei_all = tape.param(self.items);
        let eu = tape.gather_rows(eu_all, &u)?;
        let ei = tape.gather_rows(ei_all, &i)?;
        let ej = tape.gather_rows(ei_all, &j)?;
        let pairwise = bpr_pairwise(tape, eu, ei, ej)?;
        let nu = tape.sum_squares(eu_all);
        let ni = tape.sum_squares(ei_all);
        let norms = tape.add(nu, ni)?;
        let weight_reg = tape.scale(norms, self.lambda);
        let embedding_reg = tape.constant(Matrix::zeros(1, 1));
        let total = tape.add(pairwise, weight_reg)?;
        Ok(LossTerms {
            total,
            pairwise,
            weight_reg,
            embedding_reg,
        })
    }

    pub fn embed_all(&self) -> Embeddings {
        Embeddings {
            users: self.user_table().clone(),
            items: self.item_table().clone(),
        }
    }
}
