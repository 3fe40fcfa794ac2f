//! Rasterised radiance snapshots and their on-disk form.
//!
//! A grid is a row-major raster of non-negative radiance samples over
//! the service area at one time slot, north-up: row 0 is the
//! northernmost row. The file format is plain CSV,
//!
//! ```text
//! x0,y0,cell_size,width,height
//! v(0,0),v(1,0),...,v(width-1,0)        <- northernmost row
//! ...
//! v(0,height-1),...,v(width-1,height-1) <- southernmost row
//! ```
//!
//! where `(x0, y0)` is the south-west corner in metres and `cell_size`
//! the square pixel pitch. A time series is a directory of files named
//! `frame_<t>.csv` with `t = 1..T`, consumed in ascending `t`.

use crate::error::{Error, Result};
use crate::geometry::Point2;
use std::fs;
use std::io::Write;
use std::path::Path;

/// A single radiance raster.
#[derive(Debug, Clone, PartialEq)]
pub struct IlluminationGrid {
    /// South-west corner of the covered area, metres.
    pub origin: Point2,
    /// Pixel pitch in metres (square pixels).
    pub cell_size: f64,
    /// Pixel counts.
    pub width: usize,
    pub height: usize,
    /// Row-major samples, row 0 northernmost; `width * height` entries,
    /// all ≥ 0.
    pub values: Vec<f64>,
}

impl IlluminationGrid {
    pub fn new(
        origin: Point2,
        cell_size: f64,
        width: usize,
        height: usize,
        values: Vec<f64>,
    ) -> Result<Self> {
        if cell_size <= 0.0 || width == 0 || height == 0 {
            return Err(Error::Config(format!(
                "bad grid geometry: {width}x{height} at {cell_size} m"
            )));
        }
        if values.len() != width * height {
            return Err(Error::ShapeMismatch {
                expected: width * height,
                got: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Config("grid values must be finite and non-negative".into()));
        }
        Ok(Self { origin, cell_size, width, height, values })
    }

    /// All-zero grid with the given geometry.
    pub fn zeros(origin: Point2, cell_size: f64, width: usize, height: usize) -> Self {
        Self {
            origin,
            cell_size,
            width,
            height,
            values: vec![0.0; width * height],
        }
    }

    pub fn value(&self, col: usize, row: usize) -> f64 {
        self.values[row * self.width + col]
    }

    /// Ground position of the centre of pixel (`col`, `row`).
    pub fn pixel_center(&self, col: usize, row: usize) -> Point2 {
        Point2::new(
            self.origin.x + (col as f64 + 0.5) * self.cell_size,
            self.origin.y + (self.height - row) as f64 * self.cell_size - 0.5 * self.cell_size,
        )
    }

    /// Sum of all samples.
    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    pub fn is_all_zero(&self) -> bool {
        self.values.iter().all(|v| *v == 0.0)
    }

    /// Parse a grid from its CSV form.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let perr = |msg: String| Error::Parse {
            path: path.display().to_string(),
            msg,
        };
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| perr("empty file".into()))?;
        let fields: Vec<&str> = header.split(',').map(str::trim).collect();
        if fields.len() != 5 {
            return Err(perr(format!("header needs 5 fields, got {}", fields.len())));
        }
        let num = |s: &str| -> Result<f64> {
            s.parse::<f64>().map_err(|e| perr(format!("bad number {s:?}: {e}")))
        };
        let x0 = num(fields[0])?;
        let y0 = num(fields[1])?;
        let cell = num(fields[2])?;
        let width = num(fields[3])? as usize;
        let height = num(fields[4])? as usize;
        let mut values = Vec::with_capacity(width * height);
        for (i, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            if i >= height {
                return Err(perr(format!("more than {height} data rows")));
            }
            let row: Vec<&str> = line.split(',').map(str::trim).collect();
            if row.len() != width {
                return Err(perr(format!(
                    "row {} has {} values, expected {width}",
                    i + 1,
                    row.len()
                )));
            }
            for s in row {
                values.push(num(s)?);
            }
        }
        if values.len() != width * height {
            return Err(perr(format!(
                "expected {} values, got {}",
                width * height,
                values.len()
            )));
        }
        Self::new(Point2::new(x0, y0), cell, width, height, values)
    }

    /// Write the grid in its CSV form.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            self.origin.x, self.origin.y, self.cell_size, self.width, self.height
        ));
        for row in 0..self.height {
            let line: Vec<String> = (0..self.width)
                .map(|col| format!("{}", self.value(col, row)))
                .collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        let mut f = fs::File::create(path)?;
        f.write_all(out.as_bytes())?;
        Ok(())
    }
}

/// Load a `frame_<t>.csv` series from `dir`, ascending in `t` starting
/// at 1; stops at the first missing index.
pub fn load_series(dir: &Path) -> Result<Vec<IlluminationGrid>> {
    let mut frames = Vec::new();
    for t in 1.. {
        let path = dir.join(format!("frame_{t}.csv"));
        if !path.exists() {
            break;
        }
        frames.push(IlluminationGrid::read_csv(&path)?);
    }
    if frames.is_empty() {
        return Err(Error::Parse {
            path: dir.display().to_string(),
            msg: "no frame_<t>.csv files found".into(),
        });
    }
    Ok(frames)
}

/// Write a series as `frame_1.csv .. frame_T.csv` under `dir`.
pub fn write_series(dir: &Path, frames: &[IlluminationGrid]) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (i, frame) in frames.iter().enumerate() {
        frame.write_csv(&dir.join(format!("frame_{}.csv", i + 1)))?;
    }
    Ok(())
}
