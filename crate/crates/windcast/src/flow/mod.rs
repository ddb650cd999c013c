//! Invertible joint density model: coupling layers, conditioning nets,
//! mixture latent, likelihood training, and exact inversion.

pub mod coupling;
pub mod latent;
pub mod model;
pub mod theta;
pub mod train;

pub use coupling::{constrain_theta, h_deriv, h_eval, h_invert, Theta};
pub use latent::GaussianMixture;
pub use model::{CouplingLayer, FlowModel, FLOW_VERSION};
pub use theta::ThetaNet;
pub use train::{train_flow, train_flow_on_joint, FlowCheckpoint, FlowTrainConfig, TrainedFlow};
