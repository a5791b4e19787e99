//! Toy transformer language models trained from scratch: a causal decoder
//! and a bidirectional masked encoder, both exposing every layer's hidden
//! states.

pub mod checkpoint;
pub mod model;
pub mod tape;
pub mod tokenizer;
pub mod train;

pub use checkpoint::Checkpoint;
pub use model::{Family, HiddenStates, LossSum, ModelConfig, ParamStore, ToyLm};
pub use tape::{Mat, Tape, Var};
pub use tokenizer::{build_tokenizer, SpecialIds, Tokenizer};
pub use train::{fit, train, TrainConfig, Trainable};
