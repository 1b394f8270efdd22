//! Two-stage trading workbench: an ensemble of GRU price predictors produces
//! up/down signals that a PPO agent turns into portfolio allocations, with
//! temporal cross-segmentation separating the data each stage learns from.

pub mod checkpoint;
pub mod config;
pub mod crossseg;
pub mod data;
pub mod env;
pub mod error;
pub mod eval;
pub mod features;
pub mod linalg;
pub mod optim;
pub mod pipeline;
pub mod plots;
pub mod ppo;
pub mod predictor;
pub mod seeding;

pub use error::{Error, Result};
