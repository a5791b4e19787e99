//! Config-driven experiment runner and the synthetic corpus generator.

pub mod compare;
pub mod config;
pub mod extract;
pub mod run;
pub mod synth;

pub use compare::{cmd_compare, Comparison};
pub use config::ExperimentConfig;
pub use extract::TrainedModel;
pub use run::{cmd_run, run_experiment, RunOutput};
pub use synth::{cmd_synth, SynthConfig};
