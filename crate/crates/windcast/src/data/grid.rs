//! Gridded two-component series and their CSV form.
//!
//! A `GridSeries` holds a lattice of (u, v) cells sampled at integer time
//! steps, organized into slices: maximal runs of one (year, season) label.
//! Time steps are strictly increasing with unit stride inside a slice and
//! may jump between slices (consecutive winters, say).
//!
//! The interchange format is CSV with header `time,row,col,u,v,year,season`,
//! one row per cell per time step, rows in any order, full lattice coverage
//! per time step. Floats are written with shortest round-trip precision, so
//! a write/read cycle reproduces the series exactly.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Season {
    Q1,
    Q2,
    Q3,
    Q4,
}

impl FromStr for Season {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "Q1" => Ok(Season::Q1),
            "Q2" => Ok(Season::Q2),
            "Q3" => Ok(Season::Q3),
            "Q4" => Ok(Season::Q4),
            other => Err(Error::Data(format!(
                "unknown season {:?} (expected Q1, Q2, Q3 or Q4)",
                other
            ))),
        }
    }
}

impl fmt::Display for Season {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Season::Q1 => "Q1",
            Season::Q2 => "Q2",
            Season::Q3 => "Q3",
            Season::Q4 => "Q4",
        };
        f.write_str(s)
    }
}

/// One maximal run of equal (year, season): time indices `start..end`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SliceInfo {
    pub year: i32,
    pub season: Season,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSeries {
    rows: usize,
    cols: usize,
    times: Vec<i64>,
    labels: Vec<(i32, Season)>,
    /// Layout: [time][row][col][component], component 0 = u, 1 = v.
    values: Vec<f64>,
    slices: Vec<SliceInfo>,
}

impl GridSeries {
    pub fn new(
        rows: usize,
        cols: usize,
        times: Vec<i64>,
        labels: Vec<(i32, Season)>,
        values: Vec<f64>,
    ) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Data("lattice must have at least one cell".into()));
        }
        if times.len() != labels.len() {
            return Err(Error::Data(format!(
                "{} times but {} labels",
                times.len(),
                labels.len()
            )));
        }
        let per_t = rows * cols * 2;
        if values.len() != times.len() * per_t {
            return Err(Error::Data(format!(
                "expected {} values for {} steps of a {}x{} lattice, got {}",
                times.len() * per_t,
                times.len(),
                rows,
                cols,
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "grid value at flat index {} is {}",
                pos, values[pos]
            )));
        }

        // Slice layout: contiguous label runs, unit stride inside a run,
        // strictly increasing time overall, no label reappearing later.
        let mut slices: Vec<SliceInfo> = Vec::new();
        for (i, (&t, &lab)) in times.iter().zip(&labels).enumerate() {
            match slices.last_mut() {
                Some(s) if (s.year, s.season) == lab => {
                    if t != times[i - 1] + 1 {
                        return Err(Error::Data(format!(
                            "slice {} {:?}: time {} does not follow {} with unit stride",
                            s.year,
                            s.season,
                            t,
                            times[i - 1]
                        )));
                    }
                    s.end = i + 1;
                }
                _ => {
                    if i > 0 && t <= times[i - 1] {
                        return Err(Error::Data(format!(
                            "times must increase across slices: {} after {}",
                            t,
                            times[i - 1]
                        )));
                    }
                    if slices.iter().any(|s| (s.year, s.season) == lab) {
                        return Err(Error::Data(format!(
                            "slice {} {:?} appears in two separate runs",
                            lab.0, lab.1
                        )));
                    }
                    slices.push(SliceInfo { year: lab.0, season: lab.1, start: i, end: i + 1 });
                }
            }
        }
        Ok(Self { rows, cols, times, labels, values, slices })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn n_steps(&self) -> usize {
        self.times.len()
    }

    pub fn times(&self) -> &[i64] {
        &self.times
    }

    pub fn labels(&self) -> &[(i32, Season)] {
        &self.labels
    }

    pub fn slices(&self) -> &[SliceInfo] {
        &self.slices
    }

    #[inline]
    pub fn value(&self, t: usize, row: usize, col: usize, comp: usize) -> f64 {
        self.values[((t * self.rows + row) * self.cols + col) * 2 + comp]
    }

    /// All values of one time step, cell-major (row, col, component).
    pub fn step_values(&self, t: usize) -> &[f64] {
        let per_t = self.rows * self.cols * 2;
        &self.values[t * per_t..(t + 1) * per_t]
    }

    /// Writes the series as CSV, rows ordered by (time, row, col).
    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        w.write_record(["time", "row", "col", "u", "v", "year", "season"])
            .map_err(csv_err)?;
        for t in 0..self.n_steps() {
            let (year, season) = self.labels[t];
            for r in 0..self.rows {
                for c in 0..self.cols {
                    w.write_record([
                        self.times[t].to_string(),
                        r.to_string(),
                        c.to_string(),
                        self.value(t, r, c, 0).to_string(),
                        self.value(t, r, c, 1).to_string(),
                        year.to_string(),
                        season.to_string(),
                    ])
                    .map_err(csv_err)?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a series from CSV, validating schema, finiteness, label
    /// consistency and full lattice coverage per time step.
    pub fn load_csv(path: &Path) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path).map_err(csv_err)?;
        let headers = rdr.headers().map_err(csv_err)?.clone();
        let expected = ["time", "row", "col", "u", "v", "year", "season"];
        if headers.iter().collect::<Vec<_>>() != expected {
            return Err(Error::Data(format!(
                "bad CSV header {:?}, expected {:?}",
                headers.iter().collect::<Vec<_>>(),
                expected
            )));
        }

        struct Rec {
            t: i64,
            r: usize,
            c: usize,
            u: f64,
            v: f64,
            year: i32,
            season: Season,
        }
        let mut recs: Vec<Rec> = Vec::new();
        let mut max_r = 0usize;
        let mut max_c = 0usize;
        for rec in rdr.records() {
            let rec = rec.map_err(csv_err)?;
            let line = rec.position().map(|p| p.line()).unwrap_or(0);
            let field = |i: usize| -> Result<&str> {
                rec.get(i).ok_or_else(|| {
                    Error::Data(format!("line {}: missing field {}", line, expected[i]))
                })
            };
            let parse_f = |i: usize| -> Result<f64> {
                let raw = field(i)?;
                let v: f64 = raw.parse().map_err(|_| {
                    Error::Data(format!("line {}: {} is not a number: {:?}", line, expected[i], raw))
                })?;
                if !v.is_finite() {
                    return Err(Error::NonFinite(format!(
                        "line {}: {} = {}",
                        line, expected[i], raw
                    )));
                }
                Ok(v)
            };
            let t: i64 = field(0)?.parse().map_err(|_| {
                Error::Data(format!("line {}: time is not an integer", line))
            })?;
            let r: usize = field(1)?.parse().map_err(|_| {
                Error::Data(format!("line {}: row is not a non-negative integer", line))
            })?;
            let c: usize = field(2)?.parse().map_err(|_| {
                Error::Data(format!("line {}: col is not a non-negative integer", line))
            })?;
            let u = parse_f(3)?;
            let v = parse_f(4)?;
            let year: i32 = field(5)?.parse().map_err(|_| {
                Error::Data(format!("line {}: year is not an integer", line))
            })?;
            let season: Season = field(6)?.parse()?;
            max_r = max_r.max(r);
            max_c = max_c.max(c);
            recs.push(Rec { t, r, c, u, v, year, season });
        }
        if recs.is_empty() {
            return Err(Error::Data("CSV contains no data rows".into()));
        }

        let rows = max_r + 1;
        let cols = max_c + 1;
        let per_t = rows * cols;

        struct Slab {
            label: (i32, Season),
            seen: Vec<bool>,
            vals: Vec<f64>,
        }
        let mut by_time: BTreeMap<i64, Slab> = BTreeMap::new();
        for rec in &recs {
            let slab = by_time.entry(rec.t).or_insert_with(|| Slab {
                label: (rec.year, rec.season),
                seen: vec![false; per_t],
                vals: vec![0.0; per_t * 2],
            });
            if slab.label != (rec.year, rec.season) {
                return Err(Error::Data(format!(
                    "time {} labeled both {:?} and {:?}",
                    rec.t,
                    slab.label,
                    (rec.year, rec.season)
                )));
            }
            let cell = rec.r * cols + rec.c;
            if slab.seen[cell] {
                return Err(Error::Data(format!(
                    "duplicate cell (time {}, row {}, col {})",
                    rec.t, rec.r, rec.c
                )));
            }
            slab.seen[cell] = true;
            slab.vals[cell * 2] = rec.u;
            slab.vals[cell * 2 + 1] = rec.v;
        }

        let mut times = Vec::with_capacity(by_time.len());
        let mut labels = Vec::with_capacity(by_time.len());
        let mut values = Vec::with_capacity(by_time.len() * per_t * 2);
        for (t, slab) in &by_time {
            if let Some(cell) = slab.seen.iter().position(|s| !s) {
                return Err(Error::Data(format!(
                    "missing cell (time {}, row {}, col {})",
                    t,
                    cell / cols,
                    cell % cols
                )));
            }
            times.push(*t);
            labels.push(slab.label);
            values.extend_from_slice(&slab.vals);
        }
        Self::new(rows, cols, times, labels, values)
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Data(format!("csv: {}", e))
}
