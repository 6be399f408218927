//! Desk-scale token classifier: featurization, trunk and branch heads,
//! gradients, optimizer and checkpoints.

pub mod adam;
pub mod checkpoint;
pub mod features;
pub mod network;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::Checkpoint;
pub use features::{featurize, FeatureMatrix, FEATURE_DIM};
pub use network::{forward, loss_and_grad, Input, LossTerm, ModelDims, ModelParams, ParamGroup};
