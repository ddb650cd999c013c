//! Highest-density regions: superlevel-set thresholds and contour hit tests.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forecast::grid::DensityGrid;

/// The two nominal coverage probabilities every forecast is scored at.
pub const NOMINAL_683: f64 = 0.683;
pub const NOMINAL_954: f64 = 0.954;

/// Density threshold whose superlevel set first reaches a nominal mass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContourLevel {
    pub nominal: f64,
    pub threshold: f64,
    /// Mass actually enclosed at the grid resolution; at least `nominal`
    /// whenever the grid holds that much mass, and minimal among achievable
    /// superlevel masses.
    pub achieved_mass: f64,
}

/// The standard pair of contour levels on one forecast grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContourLevels {
    pub at_683: ContourLevel,
    pub at_954: ContourLevel,
}

/// Smallest superlevel set of cells reaching mass `pi`.
///
/// Cells are ranked by density; the threshold is the density of the cell
/// whose inclusion first reaches `pi`, and every cell tied with it is
/// included, which keeps degenerate flat regions well-defined.
pub fn hdr_threshold(grid: &DensityGrid, pi: f64) -> Result<ContourLevel> {
    if !(pi > 0.0 && pi < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "nominal probability must lie strictly inside (0, 1), got {}",
            pi
        )));
    }
    let area = grid.cell_area();
    let mut order: Vec<usize> = (0..grid.values().len()).collect();
    let vals = grid.values().data();
    order.sort_by(|a, b| vals[*b].partial_cmp(&vals[*a]).expect("densities are finite"));

    let mut mass = 0.0;
    let mut threshold = 0.0;
    let mut reached = false;
    let mut k = 0;
    while k < order.len() {
        let v = vals[order[k]];
        mass += v * area;
        k += 1;
        if mass >= pi {
            threshold = v;
            reached = true;
            break;
        }
    }
    if !reached {
        // Rounding kept the total just under pi; the whole grid is the set.
        threshold = vals[*order.last().expect("grid has cells")];
        return Ok(ContourLevel { nominal: pi, threshold, achieved_mass: mass });
    }
    // Ties at the threshold density all join the set.
    while k < order.len() && vals[order[k]] == threshold {
        mass += threshold * area;
        k += 1;
    }
    Ok(ContourLevel { nominal: pi, threshold, achieved_mass: mass })
}

/// Thresholds at the standard nominal probabilities.
pub fn standard_contours(grid: &DensityGrid) -> Result<ContourLevels> {
    Ok(ContourLevels {
        at_683: hdr_threshold(grid, NOMINAL_683)?,
        at_954: hdr_threshold(grid, NOMINAL_954)?,
    })
}

/// Whether an observation falls inside each contour.
///
/// The density at the observation is bilinearly interpolated; observations
/// outside the grid box miss at both levels. A hit at .683 implies a hit at
/// .954 because the .954 threshold can never exceed the .683 one.
pub fn hit(grid: &DensityGrid, levels: &ContourLevels, y: &[f64]) -> (bool, bool) {
    debug_assert_eq!(y.len(), 2, "hit test is for 2-component responses");
    match grid.density_at(y[0], y[1]) {
        Some(d) => (d >= levels.at_683.threshold, d >= levels.at_954.threshold),
        None => (false, false),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forecast::grid::{GridAxis, GridSpec};
    use crate::numeric::Array;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn square_spec(half: f64, cells: usize) -> GridSpec {
        GridSpec::new([
            GridAxis { lo: -half, hi: half, cells },
            GridAxis { lo: -half, hi: half, cells },
        ])
        .unwrap()
    }

    fn gaussian_grid(half: f64, cells: usize) -> DensityGrid {
        let spec = square_spec(half, cells);
        let mut raw = Array::zeros(vec![cells, cells]);
        for i in 0..cells {
            for j in 0..cells {
                let (y1, y2) = (spec.axes[0].center(i), spec.axes[1].center(j));
                raw.set2(i, j, (-0.5 * (y1 * y1 + y2 * y2)).exp());
            }
        }
        DensityGrid::from_unnormalized(&spec, raw).unwrap()
    }

    /// For a radially symmetric standard normal, the superlevel set at mass
    /// pi is the disk with e^(-r^2/2) = 1 - pi, so the threshold is
    /// (1 - pi) / (2 pi_circle).
    #[test]
    fn standard_normal_thresholds_match_the_radial_mass_identity() {
        let grid = gaussian_grid(5.0, 256);
        let tau = 2.0 * std::f64::consts::PI;
        let level = hdr_threshold(&grid, NOMINAL_683).unwrap();
        let expected = (1.0 - NOMINAL_683) / tau;
        assert!(
            (level.threshold - expected).abs() / expected <= 0.02,
            "threshold {} vs analytic {}",
            level.threshold,
            expected
        );
        assert!(level.achieved_mass >= NOMINAL_683);

        let level954 = hdr_threshold(&grid, NOMINAL_954).unwrap();
        let expected954 = (1.0 - NOMINAL_954) / tau;
        assert!(
            (level954.threshold - expected954).abs() / expected954 <= 0.02,
            "threshold {} vs analytic {}",
            level954.threshold,
            expected954
        );
        assert!(level954.threshold < level.threshold, "wider contour sits lower");
    }

    #[test]
    fn near_total_mass_reaches_the_smallest_positive_density() {
        // Uniform over the lower-left quadrant; the rest of the grid is zero.
        let spec = square_spec(1.0, 8);
        let mut raw = Array::zeros(vec![8, 8]);
        for i in 0..4 {
            for j in 0..4 {
                raw.set2(i, j, 1.0);
            }
        }
        let grid = DensityGrid::from_unnormalized(&spec, raw).unwrap();
        let level = hdr_threshold(&grid, 0.9999).unwrap();
        let positive = grid.at(0, 0);
        assert_abs_diff_eq!(level.threshold, positive, epsilon = 1e-15);
        assert_abs_diff_eq!(level.achieved_mass, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn uniform_grid_ties_enclose_everything() {
        let spec = square_spec(1.0, 4);
        let grid = DensityGrid::from_unnormalized(&spec, Array::new(vec![4, 4], vec![1.0; 16]).unwrap()).unwrap();
        let level = hdr_threshold(&grid, NOMINAL_683).unwrap();
        assert_abs_diff_eq!(level.achieved_mass, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(level.threshold, 0.25, epsilon = 1e-15);
    }

    #[test]
    fn degenerate_probabilities_are_rejected() {
        let grid = gaussian_grid(4.0, 16);
        assert!(hdr_threshold(&grid, 0.0).is_err());
        assert!(hdr_threshold(&grid, 1.0).is_err());
        assert!(hdr_threshold(&grid, -0.2).is_err());
    }

    #[test]
    fn observation_inside_the_radius_hits() {
        let grid = gaussian_grid(5.0, 256);
        let levels = standard_contours(&grid).unwrap();
        // Radius 1.0 sits inside the .683 disk (radius about 1.515).
        assert_eq!(hit(&grid, &levels, &[1.0, 0.0]), (true, true));
        // Radius 2.0 sits between the .683 and .954 disks (about 2.486).
        assert_eq!(hit(&grid, &levels, &[2.0, 0.0]), (false, true));
        assert_eq!(hit(&grid, &levels, &[3.0, 0.0]), (false, false));
    }

    #[test]
    fn peak_cell_hits_and_off_grid_misses() {
        let grid = gaussian_grid(5.0, 64);
        let levels = standard_contours(&grid).unwrap();
        let (y1, y2) = grid.argmax_center();
        assert_eq!(hit(&grid, &levels, &[y1, y2]), (true, true));
        assert_eq!(hit(&grid, &levels, &[99.0, 0.0]), (false, false));
    }

    /// Threshold ordering and hit monotonicity on arbitrary grids.
    #[test]
    fn levels_nest_on_random_grids() {
        let mut rng = ChaCha20Rng::seed_from_u64(31);
        for _ in 0..50 {
            let cells = 8 + rng.gen_range(0..8);
            let spec = square_spec(2.0, cells);
            let raw: Vec<f64> = (0..cells * cells).map(|_| rng.gen_range(0.0..1.0)).collect();
            let grid =
                DensityGrid::from_unnormalized(&spec, Array::new(vec![cells, cells], raw).unwrap())
                    .unwrap();
            let levels = standard_contours(&grid).unwrap();
            assert!(levels.at_954.threshold <= levels.at_683.threshold);
            assert!(levels.at_954.achieved_mass >= levels.at_683.achieved_mass);
            for _ in 0..20 {
                let y = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
                let (h683, h954) = hit(&grid, &levels, &y);
                assert!(!h683 || h954, "a .683 hit at {:?} must also hit .954", y);
            }
        }
    }
}
