//! Configuration-driven sweeps over the baseline, DP-SGD and PATE
//! pipelines, and the tables they produce.
//!
//! Seed policy: the master seed `s` yields the dataset seed
//! `derive_seed(s, "dataset", 0)` and the run seeds
//! `derive_seed(s, "run", k)` for `k = 0..seeds_per_cell`. Every sweep cell
//! reuses the same run seeds, so any single run can be repeated from the
//! master seed and its index.

pub mod commands;
pub mod config;
pub mod table;

pub use commands::{
    cmd_account, cmd_gen_data, cmd_report, cmd_train_baseline, cmd_train_dpsgd, cmd_train_pate,
    load_data, run_seed, run_seeds, AccountQuery, Context, EncodedData,
};
pub use config::{ExperimentConfig, CONFIG_FORMAT};
pub use table::{DpSgdRow, EpsilonRow, PateRow};
