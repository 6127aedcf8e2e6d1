//! Two-resolution spatial discretization.
//!
//! Fine cells carry covariates and the study-area mask; coarse cells are
//! square blocks of `ratio × ratio` fine cells on which the homogenized PDE
//! is solved. Both grids are indexed row-major with row 0 at the north edge,
//! matching the raster file layout.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Planar location in projected kilometres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    /// Compass bearing from `self` to `other` in degrees (0 = north, 90 = east).
    pub fn bearing_to(&self, other: &Point) -> f64 {
        let deg = (other.x - self.x).atan2(other.y - self.y).to_degrees();
        deg.rem_euclid(360.0)
    }
}

/// Axis-aligned bounding box in km.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Extent {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl Extent {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Self {
        Extent {
            x_min,
            y_min,
            x_max,
            y_max,
        }
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    origin: Point,
    fine_cell_size: f64,
    coarse_cell_size: f64,
    ratio: usize,
    n_fine_rows: usize,
    n_fine_cols: usize,
    mask: Vec<bool>,
    coarse_active: Vec<bool>,
}

fn whole_multiple(value: f64, unit: f64) -> Option<usize> {
    let q = value / unit;
    let r = q.round();
    if r >= 1.0 && (q - r).abs() <= 1e-9 * r.max(1.0) {
        Some(r as usize)
    } else {
        None
    }
}

/// Builds the grid for `extent`. `mask` is row-major over fine cells; `None`
/// means every cell is inside the study area.
pub fn build_grid(
    extent: Extent,
    fine_size: f64,
    coarse_size: f64,
    mask: Option<Vec<bool>>,
) -> Result<GridSpec> {
    if !(fine_size > 0.0 && fine_size.is_finite())
        || !(coarse_size > 0.0 && coarse_size.is_finite())
    {
        return Err(Error::Config(format!(
            "cell sizes must be positive, got fine {fine_size} and coarse {coarse_size}"
        )));
    }
    let ratio = whole_multiple(coarse_size, fine_size).ok_or_else(|| {
        Error::Config(format!(
            "coarse cell size {coarse_size} is not an integer multiple of fine cell size {fine_size}"
        ))
    })?;
    let n_coarse_cols = whole_multiple(extent.width(), coarse_size).ok_or_else(|| {
        Error::Config(format!(
            "extent width {} is not a whole number of coarse cells of {coarse_size}",
            extent.width()
        ))
    })?;
    let n_coarse_rows = whole_multiple(extent.height(), coarse_size).ok_or_else(|| {
        Error::Config(format!(
            "extent height {} is not a whole number of coarse cells of {coarse_size}",
            extent.height()
        ))
    })?;
    let n_fine_rows = n_coarse_rows * ratio;
    let n_fine_cols = n_coarse_cols * ratio;
    let n = n_fine_rows * n_fine_cols;
    let mask = match mask {
        Some(m) if m.len() != n => {
            return Err(Error::Config(format!(
                "mask has {} cells, grid has {n_fine_rows}x{n_fine_cols} = {n}",
                m.len()
            )))
        }
        Some(m) => m,
        None => vec![true; n],
    };
    GridSpec::from_parts(
        Point::new(extent.x_min, extent.y_min),
        fine_size,
        ratio,
        n_fine_rows,
        n_fine_cols,
        mask,
    )
}

impl GridSpec {
    pub(crate) fn from_parts(
        origin: Point,
        fine_cell_size: f64,
        ratio: usize,
        n_fine_rows: usize,
        n_fine_cols: usize,
        mask: Vec<bool>,
    ) -> Result<Self> {
        if ratio == 0 || !n_fine_rows.is_multiple_of(ratio) || !n_fine_cols.is_multiple_of(ratio) {
            return Err(Error::Config(format!(
                "{n_fine_rows}x{n_fine_cols} fine cells do not tile into {ratio}x{ratio} blocks"
            )));
        }
        if !mask.iter().any(|&m| m) {
            return Err(Error::Domain("study-area mask is empty".into()));
        }
        let mut grid = GridSpec {
            origin,
            fine_cell_size,
            coarse_cell_size: fine_cell_size * ratio as f64,
            ratio,
            n_fine_rows,
            n_fine_cols,
            mask,
            coarse_active: Vec::new(),
        };
        grid.refresh_active();
        Ok(grid)
    }

    fn refresh_active(&mut self) {
        let (rows, cols) = (self.n_coarse_rows(), self.n_coarse_cols());
        let mut active = vec![false; rows * cols];
        for (f, &inside) in self.mask.iter().enumerate() {
            if inside {
                active[self.parent(f)] = true;
            }
        }
        // The outer coarse ring carries the Dirichlet zero.
        for r in 0..rows {
            for c in 0..cols {
                if r == 0 || c == 0 || r + 1 == rows || c + 1 == cols {
                    active[r * cols + c] = false;
                }
            }
        }
        self.coarse_active = active;
    }

    /// Removes cells from the mask (used when a raster carries NODATA).
    pub fn restrict_mask(&mut self, keep: &[bool]) -> Result<()> {
        assert_eq!(keep.len(), self.mask.len());
        for (m, &k) in self.mask.iter_mut().zip(keep) {
            *m = *m && k;
        }
        if !self.mask.iter().any(|&m| m) {
            return Err(Error::Domain("study-area mask is empty".into()));
        }
        self.refresh_active();
        Ok(())
    }

    pub fn origin(&self) -> Point {
        self.origin
    }
    pub fn fine_cell_size(&self) -> f64 {
        self.fine_cell_size
    }
    pub fn coarse_cell_size(&self) -> f64 {
        self.coarse_cell_size
    }
    pub fn ratio(&self) -> usize {
        self.ratio
    }
    pub fn n_fine_rows(&self) -> usize {
        self.n_fine_rows
    }
    pub fn n_fine_cols(&self) -> usize {
        self.n_fine_cols
    }
    pub fn n_fine(&self) -> usize {
        self.n_fine_rows * self.n_fine_cols
    }
    pub fn n_coarse_rows(&self) -> usize {
        self.n_fine_rows / self.ratio
    }
    pub fn n_coarse_cols(&self) -> usize {
        self.n_fine_cols / self.ratio
    }
    pub fn n_coarse(&self) -> usize {
        self.n_coarse_rows() * self.n_coarse_cols()
    }
    pub fn fine_cell_area(&self) -> f64 {
        self.fine_cell_size * self.fine_cell_size
    }
    pub fn coarse_cell_area(&self) -> f64 {
        self.coarse_cell_size * self.coarse_cell_size
    }
    pub fn mask(&self) -> &[bool] {
        &self.mask
    }
    pub fn in_mask(&self, fine: usize) -> bool {
        self.mask[fine]
    }

    pub fn extent(&self) -> Extent {
        Extent::new(
            self.origin.x,
            self.origin.y,
            self.origin.x + self.n_fine_cols as f64 * self.fine_cell_size,
            self.origin.y + self.n_fine_rows as f64 * self.fine_cell_size,
        )
    }

    /// Coarse cells that evolve under the PDE: not on the outer ring and
    /// containing at least one masked fine cell.
    pub fn coarse_active(&self) -> &[bool] {
        &self.coarse_active
    }

    /// Fine cells where pathogen can live: inside the mask with an active
    /// coarse parent. This is the support of the introduction-location prior.
    pub fn in_support(&self, fine: usize) -> bool {
        self.mask[fine] && self.coarse_active[self.parent(fine)]
    }

    pub fn support_cells(&self) -> Vec<usize> {
        (0..self.n_fine()).filter(|&f| self.in_support(f)).collect()
    }

    pub fn fine_index(&self, row: usize, col: usize) -> usize {
        row * self.n_fine_cols + col
    }

    pub fn fine_row_col(&self, fine: usize) -> (usize, usize) {
        (fine / self.n_fine_cols, fine % self.n_fine_cols)
    }

    pub fn coarse_index(&self, row: usize, col: usize) -> usize {
        row * self.n_coarse_cols() + col
    }

    pub fn coarse_row_col(&self, coarse: usize) -> (usize, usize) {
        (coarse / self.n_coarse_cols(), coarse % self.n_coarse_cols())
    }

    pub fn parent(&self, fine: usize) -> usize {
        let (r, c) = self.fine_row_col(fine);
        self.coarse_index(r / self.ratio, c / self.ratio)
    }

    /// Fine cells inside coarse cell `coarse`, masked or not.
    pub fn children(&self, coarse: usize) -> impl Iterator<Item = usize> + '_ {
        let (cr, cc) = self.coarse_row_col(coarse);
        let k = self.ratio;
        (0..k).flat_map(move |dr| (0..k).map(move |dc| self.fine_index(cr * k + dr, cc * k + dc)))
    }

    pub fn fine_center(&self, fine: usize) -> Point {
        let (r, c) = self.fine_row_col(fine);
        Point::new(
            self.origin.x + (c as f64 + 0.5) * self.fine_cell_size,
            self.origin.y + (self.n_fine_rows - r) as f64 * self.fine_cell_size
                - 0.5 * self.fine_cell_size,
        )
    }

    pub fn coarse_center(&self, coarse: usize) -> Point {
        let (r, c) = self.coarse_row_col(coarse);
        let h = self.coarse_cell_size;
        Point::new(
            self.origin.x + (c as f64 + 0.5) * h,
            self.origin.y + (self.n_coarse_rows() - r) as f64 * h - 0.5 * h,
        )
    }

    /// Fine cell containing `p`, or `None` outside the grid extent. Points on
    /// an interior edge belong to the cell to the east / south.
    pub fn locate(&self, p: Point) -> Option<usize> {
        let h = self.fine_cell_size;
        let fx = (p.x - self.origin.x) / h;
        let fy = (self.origin.y + self.n_fine_rows as f64 * h - p.y) / h;
        if !(fx >= 0.0 && fy >= 0.0) || !fx.is_finite() || !fy.is_finite() {
            return None;
        }
        let (c, r) = (fx.floor() as usize, fy.floor() as usize);
        if c >= self.n_fine_cols || r >= self.n_fine_rows {
            return None;
        }
        Some(self.fine_index(r, c))
    }

    /// Fine cell containing `p` if it lies in the support.
    pub fn locate_in_support(&self, p: Point) -> Option<usize> {
        self.locate(p).filter(|&f| self.in_support(f))
    }

    /// Masked fine cells of a coarse cell.
    pub fn masked_children(&self, coarse: usize) -> impl Iterator<Item = usize> + '_ {
        self.children(coarse).filter(move |&f| self.mask[f])
    }

    /// Area of the masked part of a coarse cell.
    pub fn masked_area(&self, coarse: usize) -> f64 {
        self.masked_children(coarse).count() as f64 * self.fine_cell_area()
    }
}
