//! Dense tensors, a sparse propagation matrix, and a reverse-mode tape.
//!
//! Just enough machinery for the GCN encoder, the MLP regressors and the
//! pointwise/pairwise losses. Everything is `f64`.

mod adam;
pub mod check;
mod mlp;
mod sparse;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use mlp::{Mlp, MlpVars};
pub use sparse::SparseMatrix;
pub use tape::{Gradients, Tape, Var};
pub use tensor::{add_bias, concat_cols, matmul, matmul_nt, matmul_tn, relu, segment_mean, Tensor};
