//! Dense numerics: matrices, a reverse-mode tape, parameter storage with
//! Adam, Xavier initialisation, inverted dropout and checkpoint files.

mod checkpoint;
mod dropout;
mod init;
mod matrix;
mod param;
mod tape;

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_MAGIC};
pub use dropout::{dropout_mask, neighborhood_dropout};
pub use init::{xavier_bound, xavier_init};
pub use matrix::{dot, Matrix};
pub use param::{adam_step, AdamConfig, ParamId, Parameter, ParameterStore};
pub use tape::{log_logistic, logistic, softmax_rows, Gradients, Tape, Var};
