//! Feed-forward ReLU networks: initialization, backpropagation, momentum SGD,
//! Monte-Carlo population gradients and the layer-wise training procedure.

mod batch;
mod layerwise;
mod model;
mod population;
mod snapshot;
mod train;

pub use batch::BatchWorkspace;
pub use layerwise::{layerwise_train, LayerwiseConfig, LayerwiseReport};
pub use model::{loss, DenseLayer, InitScheme, MlpModel, ModelGrad, Workspace};
pub use population::{population_gradient_mc, GradientEstimate, MIN_POPULATION_SAMPLES};
pub use snapshot::{SNAPSHOT_FORMAT, SNAPSHOT_VERSION};
pub use train::{
    no_observer, sgd_train, DataSource, EpochControl, EpochRecord, TrainConfig, TrainOutcome,
};
