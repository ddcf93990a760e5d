pub mod config;
pub mod controller;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod ged;
pub mod macro_net;
pub mod reward;
pub mod search;
pub mod search_space;
pub mod tensor;
pub mod workflow;

pub use error::{Error, Result};
pub use tensor::{ActivationKind, Graph, Tensor, Var};
