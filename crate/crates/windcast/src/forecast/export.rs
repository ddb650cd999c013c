//! Plot-ready exports of forecast grids: a flat CSV of cell densities and a
//! JSON sidecar with the axes and contour levels.

use serde::Serialize;

use crate::error::Result;
use crate::forecast::grid::{DensityGrid, GridAxis};
use crate::forecast::hdr::ContourLevels;

/// `y1,y2,density` rows at every cell center, axis 0 in the outer loop.
pub fn density_csv(grid: &DensityGrid) -> String {
    let [a0, a1] = grid.axes();
    let mut out = String::with_capacity(24 * a0.cells * a1.cells);
    out.push_str("y1,y2,density\n");
    for i in 0..a0.cells {
        let y1 = a0.center(i);
        for j in 0..a1.cells {
            out.push_str(&format!("{},{},{}\n", y1, a1.center(j), grid.at(i, j)));
        }
    }
    out
}

#[derive(Debug, Serialize)]
struct GridSidecar<'a> {
    axes: &'a [GridAxis; 2],
    cell_area: f64,
    contours: &'a ContourLevels,
}

/// JSON companion to [`density_csv`] carrying the lattice geometry and the
/// thresholds with their achieved masses.
pub fn grid_sidecar_json(grid: &DensityGrid, levels: &ContourLevels) -> Result<String> {
    let doc = GridSidecar { axes: grid.axes(), cell_area: grid.cell_area(), contours: levels };
    Ok(serde_json::to_string_pretty(&doc)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forecast::grid::{DensityGrid, GridSpec};
    use crate::forecast::hdr::standard_contours;
    use crate::numeric::Array;

    fn tiny_grid() -> DensityGrid {
        let spec = GridSpec::new([
            GridAxis { lo: 0.0, hi: 1.0, cells: 2 },
            GridAxis { lo: 0.0, hi: 1.0, cells: 2 },
        ])
        .unwrap();
        let raw = Array::matrix(2, 2, vec![1.0, 1.0, 1.0, 5.0]).unwrap();
        DensityGrid::from_unnormalized(&spec, raw).unwrap()
    }

    #[test]
    fn csv_lists_every_cell_center() {
        let grid = tiny_grid();
        let csv = density_csv(&grid);
        let expected = format!(
            "y1,y2,density\n0.25,0.25,{}\n0.25,0.75,{}\n0.75,0.25,{}\n0.75,0.75,{}\n",
            grid.at(0, 0),
            grid.at(0, 1),
            grid.at(1, 0),
            grid.at(1, 1)
        );
        assert_eq!(csv, expected);
    }

    #[test]
    fn sidecar_round_trips_axes_and_levels() {
        let grid = tiny_grid();
        let levels = standard_contours(&grid).unwrap();
        let json = grid_sidecar_json(&grid, &levels).unwrap();
        let doc: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(doc["axes"][0]["cells"], 2);
        assert_eq!(doc["cell_area"], 0.25);
        assert_eq!(doc["contours"]["at_683"]["nominal"], 0.683);
        assert!(doc["contours"]["at_954"]["threshold"].is_number());
    }
}
