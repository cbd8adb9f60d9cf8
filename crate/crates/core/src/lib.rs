//! Boolean spurious-correlation laboratory.
//!
//! Inputs are `±1` vectors split into a spurious block, a core block and a
//! noise block. The label is a Boolean function of the core block; a second
//! function of the spurious block agrees with the label with probability `λ`.
//! The crate samples these tasks, trains ReLU networks on them with momentum
//! SGD, measures which feature the network uses, and provides closed-form
//! quantities (Fourier coefficients, population gradients, optimal margins)
//! to check the training runs against.
//!
//! Numeric code is generic over [`scalar::Scalar`]; the aliases below fix the
//! scalar to `f64`.

pub mod boolfn;
pub mod dataset;
pub mod debias;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod network;
pub mod probe;
pub mod rng;
pub mod scalar;
pub mod theory;

pub use boolfn::{BitVector, Estimate, FeatureKind, FeatureSpec, FourierMode};
pub use dataset::{FeatureTarget, FiniteDataset, Group, LabeledSample, SpuriousTaskConfig};
pub use error::{Error, Result};
pub use experiment::ExperimentConfig;
pub use metrics::{CorrelationMode, MetricPlan};
pub use network::{EpochRecord, InitScheme, TrainConfig};
pub use scalar::Scalar;

pub type Mlp = network::MlpModel<f64>;
pub type Layer = network::DenseLayer<f64>;
pub type Gradient = network::ModelGrad<f64>;
pub type Probe = probe::LogisticProbe;
