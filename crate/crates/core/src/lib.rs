//! Switchable excitation attention on a pre-activation bottleneck ResNet,
//! with a small reverse-mode autodiff engine, CIFAR ingestion and the
//! training / ablation harness.

pub mod attention;
pub mod autodiff;
pub mod backbone;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod kernels;
pub mod optim;
pub mod params;
pub mod rng;
pub mod tensor;
pub mod train;

pub use attention::{
    AttentionOverride, Baseline, DecisionMode, Operator, OperatorSet, SemConfig, SemParams,
};
pub use autodiff::{Graph, Var};
pub use backbone::{build_network, AttentionMode, Model, NetworkConfig};
pub use data::{AugmentConfig, ChannelStats, DatasetRecord};
pub use error::{Result, SemError};
pub use kernels::Activation;
pub use rng::RngState;
pub use tensor::{Element, Tensor};
pub use train::{MetricsRecord, RunConfig};
