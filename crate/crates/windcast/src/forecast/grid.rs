//! Conditional forecast densities on a regular 2-D response grid.
//!
//! The joint model is evaluated at every cell center for a fixed conditioning
//! vector and normalized by the cell-centered Riemann sum, realizing
//! q(y|t) = q(y, t) / q(t) at the grid's resolution. The library math is
//! dimension-generic but this integration layer is specialized to
//! two-component responses.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::FlowModel;
use crate::numeric::Array;

/// Conditioning points whose joint density underflows this value in every
/// grid cell are rejected as out of distribution.
pub const DENSITY_FLOOR: f64 = 1e-300;

/// Allowed deviation of the cell-area-weighted mass from one.
pub const NORMALIZATION_TOL: f64 = 1e-3;

/// Fraction of the data bounding box added on each side of the default grid.
pub const BBOX_EXPANSION: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridAxis {
    pub lo: f64,
    pub hi: f64,
    pub cells: usize,
}

impl GridAxis {
    pub fn step(&self) -> f64 {
        (self.hi - self.lo) / self.cells as f64
    }

    /// Center coordinate of cell `i`.
    pub fn center(&self, i: usize) -> f64 {
        self.lo + (i as f64 + 0.5) * self.step()
    }

    fn check(&self) -> Result<()> {
        if !(self.lo.is_finite() && self.hi.is_finite() && self.lo < self.hi) {
            return Err(Error::InvalidArgument(format!(
                "grid axis needs finite lo < hi, got [{}, {}]",
                self.lo, self.hi
            )));
        }
        if self.cells < 2 {
            return Err(Error::InvalidArgument("grid axis needs at least 2 cells".into()));
        }
        Ok(())
    }
}

/// Extent and resolution of the response grid, one axis per response
/// coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub axes: [GridAxis; 2],
}

impl GridSpec {
    pub fn new(axes: [GridAxis; 2]) -> Result<Self> {
        for axis in &axes {
            axis.check()?;
        }
        Ok(Self { axes })
    }

    /// Default extent: the response bounding box expanded by a quarter of its
    /// width on each side, so forecast tails stay on the grid.
    pub fn from_responses(responses: &Array, cells: usize) -> Result<Self> {
        if !responses.is_matrix() || responses.ncols() != 2 {
            return Err(Error::Shape("grid spec needs an N x 2 response matrix".into()));
        }
        if responses.nrows() == 0 {
            return Err(Error::InvalidArgument("grid spec needs at least one response".into()));
        }
        let mut axes = [GridAxis { lo: 0.0, hi: 0.0, cells }; 2];
        for (j, axis) in axes.iter_mut().enumerate() {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for i in 0..responses.nrows() {
                let v = responses.at2(i, j);
                lo = lo.min(v);
                hi = hi.max(v);
            }
            let pad = BBOX_EXPANSION * (hi - lo);
            axis.lo = lo - pad;
            axis.hi = hi + pad;
            if !(axis.lo < axis.hi) {
                return Err(Error::InvalidArgument(format!(
                    "response coordinate {} has a degenerate bounding box at {}",
                    j, lo
                )));
            }
        }
        Self::new(axes)
    }

    pub fn cell_area(&self) -> f64 {
        self.axes[0].step() * self.axes[1].step()
    }
}

/// Cell-centered conditional density estimate over a [`GridSpec`], normalized
/// so the cell-area-weighted mass is one.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityGrid {
    axes: [GridAxis; 2],
    /// Shape [axes[0].cells, axes[1].cells]; row index moves along axis 0.
    values: Array,
    cell_area: f64,
}

impl DensityGrid {
    /// Normalizes raw nonnegative cell values by their Riemann sum.
    pub fn from_unnormalized(spec: &GridSpec, raw: Array) -> Result<Self> {
        for axis in &spec.axes {
            axis.check()?;
        }
        if raw.shape() != [spec.axes[0].cells, spec.axes[1].cells] {
            return Err(Error::Shape(format!(
                "cell values {:?} do not match the grid spec {}x{}",
                raw.shape(),
                spec.axes[0].cells,
                spec.axes[1].cells
            )));
        }
        if raw.data().iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidArgument(
                "cell values must be finite and nonnegative".into(),
            ));
        }
        let area = spec.cell_area();
        let total: f64 = raw.data().iter().sum::<f64>() * area;
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "grid mass must be positive and finite, got {}",
                total
            )));
        }
        let values = raw.scale(1.0 / total);
        Ok(Self { axes: spec.axes, values, cell_area: area })
    }

    pub fn axes(&self) -> &[GridAxis; 2] {
        &self.axes
    }

    pub fn values(&self) -> &Array {
        &self.values
    }

    pub fn cell_area(&self) -> f64 {
        self.cell_area
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values.at2(i, j)
    }

    /// Cell-area-weighted total mass; one up to rounding by construction.
    pub fn total_mass(&self) -> f64 {
        self.values.data().iter().sum::<f64>() * self.cell_area
    }

    /// Center coordinates of the highest-density cell.
    pub fn argmax_center(&self) -> (f64, f64) {
        let (c1, mut best, mut best_v) = (self.axes[1].cells, 0, f64::NEG_INFINITY);
        for (k, v) in self.values.data().iter().enumerate() {
            if *v > best_v {
                best_v = *v;
                best = k;
            }
        }
        (self.axes[0].center(best / c1), self.axes[1].center(best % c1))
    }

    /// Bilinear interpolation of cell-centered values; `None` outside the
    /// grid box. Queries in the half-cell margin between the box edge and the
    /// outermost centers reuse the edge pair.
    pub fn density_at(&self, y1: f64, y2: f64) -> Option<f64> {
        let [a0, a1] = &self.axes;
        if !(y1 >= a0.lo && y1 <= a0.hi && y2 >= a1.lo && y2 <= a1.hi) {
            return None;
        }
        let f0 = (y1 - a0.lo) / a0.step() - 0.5;
        let f1 = (y2 - a1.lo) / a1.step() - 0.5;
        let i0 = (f0.floor() as isize).clamp(0, a0.cells as isize - 2) as usize;
        let j0 = (f1.floor() as isize).clamp(0, a1.cells as isize - 2) as usize;
        let u = (f0 - i0 as f64).clamp(0.0, 1.0);
        let v = (f1 - j0 as f64).clamp(0.0, 1.0);
        Some(
            (1.0 - u) * (1.0 - v) * self.at(i0, j0)
                + u * (1.0 - v) * self.at(i0 + 1, j0)
                + (1.0 - u) * v * self.at(i0, j0 + 1)
                + u * v * self.at(i0 + 1, j0 + 1),
        )
    }
}

/// Forecast density for the response given a reduced conditioning vector.
///
/// Evaluates the joint model at (cell center, t) for every cell and
/// normalizes by the Riemann sum, which cancels the marginal q(t).
pub fn conditional_density(model: &FlowModel, t: &[f64], spec: &GridSpec) -> Result<DensityGrid> {
    if model.response_dim() != 2 {
        return Err(Error::InvalidArgument(format!(
            "the grid integrator handles 2-component responses, model has {}",
            model.response_dim()
        )));
    }
    if t.len() != model.reduced_dim() {
        return Err(Error::Shape(format!(
            "conditioning vector has {} coordinates, model expects {}",
            t.len(),
            model.reduced_dim()
        )));
    }
    if t.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("conditioning vector".into()));
    }
    for axis in &spec.axes {
        axis.check()?;
    }
    let (c0, c1) = (spec.axes[0].cells, spec.axes[1].cells);
    let dim = 2 + t.len();
    let mut rows = Vec::with_capacity(c0 * c1 * dim);
    for i in 0..c0 {
        let y1 = spec.axes[0].center(i);
        for j in 0..c1 {
            rows.push(y1);
            rows.push(spec.axes[1].center(j));
            rows.extend_from_slice(t);
        }
    }
    let batch = Array::matrix(c0 * c1, dim, rows)?;
    let logdens = model.log_density_batch(&batch)?;
    let max_ld = logdens.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max_ld < DENSITY_FLOOR.ln() {
        return Err(Error::OutOfDistribution { floor: DENSITY_FLOOR });
    }
    // Shift by the max before exponentiating; normalization cancels it.
    let raw: Vec<f64> = logdens.iter().map(|ld| (ld - max_ld).exp()).collect();
    DensityGrid::from_unnormalized(spec, Array::matrix(c0, c1, raw)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;
    use rand_distr::StandardNormal;

    fn unit_spec(cells: usize) -> GridSpec {
        GridSpec::new([
            GridAxis { lo: 0.0, hi: 1.0, cells },
            GridAxis { lo: 0.0, hi: 1.0, cells },
        ])
        .unwrap()
    }

    #[test]
    fn bounding_box_gains_a_quarter_per_side() {
        let resp = Array::matrix(2, 2, vec![0.0, 0.0, 2.0, 4.0]).unwrap();
        let spec = GridSpec::from_responses(&resp, 128).unwrap();
        assert_abs_diff_eq!(spec.axes[0].lo, -0.5);
        assert_abs_diff_eq!(spec.axes[0].hi, 2.5);
        assert_abs_diff_eq!(spec.axes[1].lo, -1.0);
        assert_abs_diff_eq!(spec.axes[1].hi, 5.0);
        assert_eq!(spec.axes[0].cells, 128);
    }

    #[test]
    fn constant_response_coordinate_is_rejected() {
        let resp = Array::matrix(2, 2, vec![1.0, 0.0, 1.0, 4.0]).unwrap();
        let err = GridSpec::from_responses(&resp, 64).unwrap_err();
        assert!(err.to_string().contains("degenerate"), "got {}", err);
    }

    #[test]
    fn cell_centers_and_area_follow_the_lattice() {
        let spec = unit_spec(2);
        assert_abs_diff_eq!(spec.axes[0].center(0), 0.25);
        assert_abs_diff_eq!(spec.axes[0].center(1), 0.75);
        assert_abs_diff_eq!(spec.cell_area(), 0.25);
    }

    #[test]
    fn normalization_rescales_to_unit_mass() {
        let spec = unit_spec(2);
        let raw = Array::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let grid = DensityGrid::from_unnormalized(&spec, raw).unwrap();
        assert_abs_diff_eq!(grid.total_mass(), 1.0, epsilon = 1e-12);
        // Relative proportions survive the rescale.
        assert_abs_diff_eq!(grid.at(1, 1) / grid.at(0, 0), 4.0, epsilon = 1e-12);
    }

    #[test]
    fn zero_and_negative_masses_are_rejected() {
        let spec = unit_spec(2);
        let zero = Array::zeros(vec![2, 2]);
        assert!(DensityGrid::from_unnormalized(&spec, zero).is_err());
        let neg = Array::matrix(2, 2, vec![1.0, -0.1, 1.0, 1.0]).unwrap();
        assert!(DensityGrid::from_unnormalized(&spec, neg).is_err());
    }

    #[test]
    fn bilinear_interpolation_hits_centers_and_midpoints() {
        let spec = unit_spec(2);
        let raw = Array::matrix(2, 2, vec![1.0, 1.0, 3.0, 3.0]).unwrap();
        let grid = DensityGrid::from_unnormalized(&spec, raw).unwrap();
        let v00 = grid.at(0, 0);
        let v10 = grid.at(1, 0);
        assert_abs_diff_eq!(grid.density_at(0.25, 0.25).unwrap(), v00, epsilon = 1e-15);
        // Midway between the two centers along axis 0.
        assert_abs_diff_eq!(
            grid.density_at(0.5, 0.25).unwrap(),
            0.5 * (v00 + v10),
            epsilon = 1e-15
        );
        assert_eq!(grid.density_at(-0.01, 0.5), None, "left of the box");
        assert_eq!(grid.density_at(0.5, 1.01), None, "above the box");
        // The half-cell margin clamps to the edge pair instead of
        // extrapolating.
        assert_abs_diff_eq!(grid.density_at(0.0, 0.25).unwrap(), v00, epsilon = 1e-15);
    }

    #[test]
    fn argmax_center_points_at_the_peak_cell() {
        let spec = unit_spec(2);
        let raw = Array::matrix(2, 2, vec![0.1, 0.2, 0.3, 5.0]).unwrap();
        let grid = DensityGrid::from_unnormalized(&spec, raw).unwrap();
        assert_eq!(grid.argmax_center(), (0.75, 0.75));
    }

    fn untrained_model(seed: u64) -> FlowModel {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        FlowModel::init(2, 1, 1, 3, 8, 2, vec![0.0; 3], vec![1.0; 3], &mut rng).unwrap()
    }

    #[test]
    fn conditional_densities_always_carry_unit_mass() {
        let model = untrained_model(21);
        let mut rng = ChaCha20Rng::seed_from_u64(22);
        let spec = GridSpec::new([
            GridAxis { lo: -6.0, hi: 6.0, cells: 32 },
            GridAxis { lo: -6.0, hi: 6.0, cells: 32 },
        ])
        .unwrap();
        for _ in 0..100 {
            let t: f64 = rng.sample(StandardNormal);
            let grid = conditional_density(&model, &[t], &spec).unwrap();
            assert_abs_diff_eq!(grid.total_mass(), 1.0, epsilon = NORMALIZATION_TOL);
        }
    }

    #[test]
    fn far_conditioning_is_flagged_out_of_distribution() {
        let model = untrained_model(23);
        let spec = GridSpec::new([
            GridAxis { lo: -6.0, hi: 6.0, cells: 16 },
            GridAxis { lo: -6.0, hi: 6.0, cells: 16 },
        ])
        .unwrap();
        let err = conditional_density(&model, &[1e8], &spec).unwrap_err();
        assert!(
            matches!(err, Error::OutOfDistribution { .. }),
            "expected an out-of-distribution flag, got {}",
            err
        );
    }

    #[test]
    fn conditioning_vector_shape_and_finiteness_are_checked() {
        let model = untrained_model(24);
        let spec = unit_spec(4);
        assert!(conditional_density(&model, &[0.0, 0.0], &spec).is_err());
        assert!(conditional_density(&model, &[f64::NAN], &spec).is_err());
    }
}
