//! Document, wave and user representations from toy language models and a
//! human language model with recurrent user states, evaluated by ridge
//! regression under user-grouped cross-validation.

pub mod corpus;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod hulm;
pub mod par;
pub mod repr;
pub mod seed;
pub mod toylm;

pub use error::{Error, Result};
