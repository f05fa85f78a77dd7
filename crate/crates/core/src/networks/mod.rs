//! Generator, missingness network, the adversarial pretraining networks and
//! the optional mean-field Bayesian layers they are built from.

mod checkpoint;
mod layers;
mod models;

pub use checkpoint::Checkpoint;
pub use layers::{
    inverse_softplus, Activation, Bound, BoundLayer, BoundMlp, DenseLayer, Draw, Layer, Mlp,
    VariationalDense, INITIAL_WEIGHT_SCALE, LEAKY_SLOPE,
};
pub use models::{
    BoundFeedForward, BoundGenerator, DiscriminatorNet, EncoderNet, FeedForward, GeneratorNet,
    MissingnessNet, DEFAULT_VAR_FLOOR,
};
