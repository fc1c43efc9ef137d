//! Leader-follower consensus of unknown nonlinear agents, with Gaussian
//! process models of the residual dynamics shared between neighbors.
//!
//! The pipeline: [`plant`] generates noisy residual samples, [`gp`] fits one
//! exact GP per agent and output dimension, [`fusion`] combines neighbor
//! predictions, [`control`] and [`sim`] close the loop, and [`experiment`]
//! ties it together with artifacts on disk.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod config;
pub mod control;
pub mod domain;
pub mod error;
pub mod experiment;
pub mod fusion;
pub mod gp;
pub mod io;
pub mod plant;
pub mod sim;
pub mod strategy;
pub mod topology;

pub use config::{ConfigFile, ExperimentConfig};
pub use control::{ControlMode, Gains};
pub use domain::Domain;
pub use error::{Error, Result};
pub use gp::{AgentModels, Dataset, GpModel, KernelParams};
pub use plant::{Plant, PlantRegistry};
pub use sim::{SimConfig, TrajectoryLog};
pub use strategy::{LearningStrategy, StrategyRegistry};
pub use topology::Topology;
