//! Dense autoencoder with hand-written backpropagation, Adam and gradient checking.

pub mod adam;
pub mod autoencoder;
pub mod checkpoint;
pub mod gradcheck;

pub use adam::{AdamConfig, AdamState};
pub use autoencoder::{Activation, Autoencoder, AutoencoderGrads, Dense, ForwardCache, LayerGrad, ParamBlocks};
pub use checkpoint::Checkpoint;
pub use gradcheck::{gradcheck, FlatParams, GradCheckOptions, GradCheckReport};
