//! Federated learning with noise sifting.
//!
//! Clients train locally and return parameters. In the first round each
//! one also reports the per-batch norms of its last-layer gradients; the
//! variance of those norms separates clean clients (high) from clients
//! whose data is corrupted (low). The server then reweights aggregation
//! towards the clean side for the rest of training.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases at the crate root fix it to `f64`, which the simulator uses by
//! default.

pub mod aggregation;
pub mod config;
pub mod dataspace;
pub mod detection;
pub mod error;
pub mod model;
pub mod rng;
pub mod scalar;
pub mod simulator;
pub mod sweep;

pub use aggregation::{aggregate, AggregationPlan, ClientUpdate, Strategy};
pub use config::{parse_config, parse_config_str, ExperimentConfig};
pub use dataspace::{CorruptionKind, Quality, Severity};
pub use detection::{detect, kmeans_1d, ClientScore};
pub use error::{Error, Result};
pub use model::{NormOrder, OptConfig};
pub use scalar::Scalar;
pub use simulator::{build_world, export_report, run_experiment, ExperimentReport, RoundMetrics};
pub use sweep::{parse_sweep, run_sweep, SweepSpec};

pub type Params = model::ModelParams<f64>;
pub type Params32 = model::ModelParams<f32>;
pub type Grads = model::Gradients<f64>;
pub type Data = dataspace::Dataset<f64>;
pub type Data32 = dataspace::Dataset<f32>;
pub type Client = dataspace::ClientDataset<f64>;
pub type Update = aggregation::ClientUpdate<f64>;
pub type World = simulator::World<f64>;
