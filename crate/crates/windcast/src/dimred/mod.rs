//! Information-preserving dimension reduction and its baselines.

pub mod baselines;
pub mod cov;
pub mod knn;
pub mod reducer;
pub mod train;

pub use baselines::{gridpoint_reducer, pca_reducer};
pub use cov::{empirical_cov, gaussian_mi, schur_objective, CovBlocks};
pub use knn::knn_joint_density;
pub use reducer::{Reducer, ReducerKind, ReducerMap, REDUCER_VERSION};
pub use train::{
    train_reducer, BatchMode, ReducerArch, ReducerTrainConfig, TrainedReducer,
};
