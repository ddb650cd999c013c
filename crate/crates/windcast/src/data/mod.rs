//! Data plumbing: gridded series, forecast examples, splits and synthetic
//! generators.

pub mod examples;
pub mod grid;
pub mod splits;
pub mod synth;

pub use examples::{build_examples, ExampleSet};
pub use grid::{GridSeries, Season, SliceInfo};
pub use splits::{make_splits, SplitSpec, Splits};
pub use synth::{gen_synthetic, GaussianVarConfig, GaussianVarProcess, RingConfig, SynthConfig};
