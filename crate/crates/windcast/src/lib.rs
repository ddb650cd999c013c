//! Probabilistic forecasting of gridded series in two stages: a trained
//! dimension reduction that preserves the predictive information in a high
//! dimensional predictor window, then a conditional normalizing flow over
//! (response, reduced predictors) whose forecasts are full conditional
//! densities rather than point values. Calibration of highest-density
//! regions drives both early stopping and evaluation.

pub mod data;
pub mod dimred;
pub mod error;
pub mod flow;
pub mod forecast;
pub mod numeric;

pub use error::{Error, Result};
