//! Simulation of blockchain-coordinated federated learning with
//! step-by-step contributivity scoring.
//!
//! Clients train a shared MLP in rounds. Model updates live in a
//! content-addressed store and are referenced from a simulated ledger
//! contract by digest. After training, an evaluator scores every update by
//! how much it reduced holdout loss relative to the global model it started
//! from, and pays integer tokens accordingly. Two protocols are provided:
//! Crowdsource (one evaluator with a private holdout) and Consortium
//! (each member evaluates the model trained by all the others).

pub mod cas;
pub mod config;
pub mod contributivity;
pub mod data;
pub mod error;
pub(crate) mod exec;
pub mod ledger;
pub mod model;
pub mod protocol;
pub mod replay;
pub mod report;
pub mod seed;

pub use cas::{Cid, ContentStore};
pub use config::RunConfig;
pub use data::Dataset;
pub use error::{Error, Result};
pub use ledger::{Address, Ledger};
pub use model::{Architecture, EvalResult, ModelParams, TrainingConfig};
pub use protocol::{run_experiment, ExperimentConfig, ExperimentRun, Protocol};
pub use report::ContributivityReport;
