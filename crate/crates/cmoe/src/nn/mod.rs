//! Minimal f64 neural-net substrate: dense tensors, a reverse-mode tape,
//! MLPs, Adam, and a binary checkpoint container. Deliberately not a general
//! autodiff framework; it covers exactly the graphs the training losses need.

pub mod checkpoint;
pub mod gradcheck;
pub mod mlp;
pub mod optim;
pub mod store;
pub mod tape;
pub mod tensor;

pub use mlp::{Activation, Mlp};
pub use optim::Adam;
pub use store::{Grads, ParamId, ParamStore};
pub use tape::{Tape, Var};
pub use tensor::Tensor;
