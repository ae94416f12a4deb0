//! Character-level adversarial attacks on subword-tokenized transformer
//! classifiers, built around a continuous relaxation of the choice of
//! middle subtokens inside selected words.

pub mod autograd;
pub mod data;
pub mod error;
pub mod eval;
pub mod exec;
pub mod model;
pub mod optim;
pub mod search;
pub mod seed;
pub mod selector;
pub mod train;
pub mod visual;
pub mod vocab;

pub use error::{Error, Result};
