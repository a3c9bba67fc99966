//! Differentiable layers, models and losses.

pub mod loss;
pub mod models;
pub mod tape;
pub mod tensor;

pub use loss::{loss_cross_entropy, loss_mse};
pub use models::{gcn_operator, simple_dcn_forward, Activation, Dcn, FbGcnn, Gcn, Mlp, Model, Pdcn};
pub use tape::{Tape, Var};
pub use tensor::{NamedArray, ParamSet, ParamSnapshot, Tensor2};
