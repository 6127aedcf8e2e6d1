//! Plain-text grid rasters and covariate layers.
//!
//! The on-disk format is the usual six-line header (`ncols`, `nrows`,
//! `xllcorner`, `yllcorner`, `cellsize`, `NODATA_value`) followed by `nrows`
//! whitespace-separated rows, northmost first.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::GridSpec;

pub const DEFAULT_NODATA: f64 = -9999.0;

#[derive(Debug, Clone, PartialEq)]
pub struct AsciiGrid {
    pub ncols: usize,
    pub nrows: usize,
    pub xllcorner: f64,
    pub yllcorner: f64,
    pub cellsize: f64,
    pub nodata: f64,
    /// Row-major, row 0 = north.
    pub values: Vec<f64>,
}

impl AsciiGrid {
    pub fn read(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let reader = BufReader::new(file);

        let mut header: [Option<f64>; 6] = [None; 6];
        let mut centre_registered = [false; 2];
        let mut values = Vec::new();
        let parse_err = |line: usize, message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };

        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            let mut tokens = line.split_whitespace().peekable();
            let Some(first) = tokens.peek().copied() else {
                continue;
            };
            let key = first.to_ascii_lowercase();
            let slot = match key.as_str() {
                "ncols" => Some(0),
                "nrows" => Some(1),
                "xllcorner" => Some(2),
                "xllcenter" => {
                    centre_registered[0] = true;
                    Some(2)
                }
                "yllcorner" => Some(3),
                "yllcenter" => {
                    centre_registered[1] = true;
                    Some(3)
                }
                "cellsize" => Some(4),
                "nodata_value" => Some(5),
                _ => None,
            };
            if let Some(slot) = slot {
                if !values.is_empty() {
                    return Err(parse_err(
                        i + 1,
                        format!("header key {first} after data rows"),
                    ));
                }
                tokens.next();
                let v = tokens
                    .next()
                    .ok_or_else(|| parse_err(i + 1, format!("missing value for {first}")))?;
                let v: f64 = v
                    .parse()
                    .map_err(|_| parse_err(i + 1, format!("non-numeric header value {v:?}")))?;
                header[slot] = Some(v);
                continue;
            }
            for tok in tokens {
                let v: f64 = tok
                    .parse()
                    .map_err(|_| parse_err(i + 1, format!("non-numeric cell value {tok:?}")))?;
                values.push(v);
            }
        }

        const NAMES: [&str; 6] = [
            "ncols",
            "nrows",
            "xllcorner",
            "yllcorner",
            "cellsize",
            "NODATA_value",
        ];
        let get = |slot: usize| {
            header[slot].ok_or_else(|| parse_err(0, format!("missing header line {}", NAMES[slot])))
        };
        let ncols = get(0)?;
        let nrows = get(1)?;
        if ncols < 1.0 || nrows < 1.0 || ncols.fract() != 0.0 || nrows.fract() != 0.0 {
            return Err(parse_err(0, "ncols/nrows must be positive integers".into()));
        }
        let (ncols, nrows) = (ncols as usize, nrows as usize);
        let cellsize = get(4)?;
        let mut xll = get(2)?;
        let mut yll = get(3)?;
        if centre_registered[0] {
            xll -= 0.5 * cellsize;
        }
        if centre_registered[1] {
            yll -= 0.5 * cellsize;
        }
        let nodata = header[5].unwrap_or(DEFAULT_NODATA);
        if values.len() != ncols * nrows {
            return Err(parse_err(
                0,
                format!(
                    "expected {} cell values, found {}",
                    ncols * nrows,
                    values.len()
                ),
            ));
        }
        Ok(AsciiGrid {
            ncols,
            nrows,
            xllcorner: xll,
            yllcorner: yll,
            cellsize,
            nodata,
            values,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        writeln!(w, "ncols {}", self.ncols).map_err(io)?;
        writeln!(w, "nrows {}", self.nrows).map_err(io)?;
        writeln!(w, "xllcorner {}", self.xllcorner).map_err(io)?;
        writeln!(w, "yllcorner {}", self.yllcorner).map_err(io)?;
        writeln!(w, "cellsize {}", self.cellsize).map_err(io)?;
        writeln!(w, "NODATA_value {}", self.nodata).map_err(io)?;
        for row in self.values.chunks(self.ncols) {
            let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            writeln!(w, "{}", line.join(" ")).map_err(io)?;
        }
        w.flush().map_err(io)
    }

    /// Wraps per-fine-cell values for `grid`, writing NODATA outside the mask.
    pub fn from_fine(grid: &GridSpec, values: &[f64]) -> Self {
        assert_eq!(values.len(), grid.n_fine());
        let values = values
            .iter()
            .zip(grid.mask())
            .map(|(&v, &m)| if m { v } else { DEFAULT_NODATA })
            .collect();
        AsciiGrid {
            ncols: grid.n_fine_cols(),
            nrows: grid.n_fine_rows(),
            xllcorner: grid.origin().x,
            yllcorner: grid.origin().y,
            cellsize: grid.fine_cell_size(),
            nodata: DEFAULT_NODATA,
            values,
        }
    }

    fn check_alignment(&self, grid: &GridSpec, path: &Path) -> Result<()> {
        let misaligned = |message: String| Error::Alignment {
            path: path.to_path_buf(),
            message,
        };
        if self.ncols != grid.n_fine_cols() || self.nrows != grid.n_fine_rows() {
            return Err(misaligned(format!(
                "raster is {}x{} (rows x cols), grid is {}x{}",
                self.nrows,
                self.ncols,
                grid.n_fine_rows(),
                grid.n_fine_cols()
            )));
        }
        let tol = 1e-6 * grid.fine_cell_size();
        if (self.cellsize - grid.fine_cell_size()).abs() > tol {
            return Err(misaligned(format!(
                "cellsize {} differs from fine cell size {}",
                self.cellsize,
                grid.fine_cell_size()
            )));
        }
        let o = grid.origin();
        if (self.xllcorner - o.x).abs() > tol || (self.yllcorner - o.y).abs() > tol {
            return Err(misaligned(format!(
                "lower-left corner ({}, {}) differs from grid origin ({}, {})",
                self.xllcorner, self.yllcorner, o.x, o.y
            )));
        }
        Ok(())
    }
}

/// One covariate layer read from disk, aligned to the fine grid.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterLayer {
    pub values: Vec<f64>,
    /// `false` where the file holds NODATA.
    pub valid: Vec<bool>,
}

impl RasterLayer {
    /// Applies this layer's NODATA cells to the grid mask.
    pub fn restrict(&self, grid: &mut GridSpec) -> Result<()> {
        grid.restrict_mask(&self.valid)
    }
}

pub fn read_ascii_raster(path: &Path, expected_grid: &GridSpec) -> Result<RasterLayer> {
    let raw = AsciiGrid::read(path)?;
    raw.check_alignment(expected_grid, path)?;
    let valid: Vec<bool> = raw
        .values
        .iter()
        .map(|&v| v.is_finite() && v != raw.nodata)
        .collect();
    let values = raw
        .values
        .iter()
        .zip(&valid)
        .map(|(&v, &ok)| if ok { v } else { 0.0 })
        .collect();
    Ok(RasterLayer { values, valid })
}

pub fn write_ascii_raster(path: &Path, grid: &GridSpec, values: &[f64]) -> Result<()> {
    AsciiGrid::from_fine(grid, values).write(path)
}

/// Named per-fine-cell covariate layers (`z(s)` for diffusion, `w(s)` for growth).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CovariateRaster {
    n_cells: usize,
    layers: Vec<(String, Vec<f64>)>,
}

impl CovariateRaster {
    pub fn new(grid: &GridSpec) -> Self {
        CovariateRaster {
            n_cells: grid.n_fine(),
            layers: Vec::new(),
        }
    }

    pub fn add_layer(&mut self, grid: &GridSpec, name: &str, values: Vec<f64>) -> Result<()> {
        if values.len() != self.n_cells {
            return Err(Error::Config(format!(
                "layer {name} has {} cells, grid has {}",
                values.len(),
                self.n_cells
            )));
        }
        if self.layers.iter().any(|(n, _)| n == name) {
            return Err(Error::Config(format!("duplicate covariate layer {name}")));
        }
        if let Some(f) = (0..values.len()).find(|&f| grid.in_mask(f) && !values[f].is_finite()) {
            return Err(Error::Domain(format!(
                "layer {name} is not finite at masked cell {f}"
            )));
        }
        self.layers.push((name.to_string(), values));
        Ok(())
    }

    pub fn layer(&self, name: &str) -> Result<&[f64]> {
        self.layers
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.as_slice())
            .ok_or_else(|| Error::Config(format!("missing covariate layer {name}")))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.layers.iter().map(|(n, _)| n.as_str())
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }
}
