//! Forecast production and scoring: conditional densities on a response
//! grid, highest-density contours, hit-rate calibration, and snapshot
//! selection.

pub mod calibration;
pub mod export;
pub mod grid;
pub mod hdr;
pub mod select;

pub use calibration::{
    calibration_score, hit_rate, weighted_calibration_score, CalibrationReport,
    MAX_SKIP_FRACTION, SCORE_WEIGHT_683, SCORE_WEIGHT_954,
};
pub use export::{density_csv, grid_sidecar_json};
pub use grid::{
    conditional_density, DensityGrid, GridAxis, GridSpec, BBOX_EXPANSION, DENSITY_FLOOR,
    NORMALIZATION_TOL,
};
pub use hdr::{
    hdr_threshold, hit, standard_contours, ContourLevel, ContourLevels, NOMINAL_683, NOMINAL_954,
};
pub use select::{select_checkpoint, SelectionOutcome};
