use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{GridSpec, Point};
use crate::posterior::summary::check_level;

/// Slack on cumulative-mass comparisons so that, e.g., 900 cells of mass
/// 0.001 reach level 0.9 despite rounding.
const MASS_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CredibleRegion {
    /// Fine-cell indices, in order of inclusion.
    pub cells: Vec<usize>,
    /// Attained posterior mass.
    pub level: f64,
    pub area_km2: f64,
}

impl CredibleRegion {
    fn new(cells: Vec<usize>, map: &[f64], grid: &GridSpec) -> Self {
        let level = cells.iter().map(|&c| map[c]).sum();
        let area_km2 = cells.len() as f64 * grid.fine_cell_area();
        CredibleRegion {
            cells,
            level,
            area_km2,
        }
    }

    pub fn contains(&self, cell: usize) -> bool {
        self.cells.contains(&cell)
    }

    /// 0/1 indicator on fine cells.
    pub fn indicator(&self, grid: &GridSpec) -> Vec<f64> {
        let mut v = vec![0.0; grid.n_fine()];
        for &c in &self.cells {
            v[c] = 1.0;
        }
        v
    }
}

fn check_map(map: &[f64], grid: &GridSpec) -> Result<()> {
    if map.len() != grid.n_fine() {
        return Err(Error::Config(format!(
            "map has {} cells, grid has {}",
            map.len(),
            grid.n_fine()
        )));
    }
    Ok(())
}

/// Smallest set of highest-mass cells whose total reaches `level`. Ties are
/// taken in row-major order.
pub fn hpd_region(map: &[f64], grid: &GridSpec, level: f64) -> Result<CredibleRegion> {
    check_level(level)?;
    check_map(map, grid)?;
    let mut order: Vec<usize> = (0..map.len()).filter(|&c| map[c] > 0.0).collect();
    order.sort_by(|&a, &b| map[b].total_cmp(&map[a]).then(a.cmp(&b)));
    let mut cum = 0.0;
    let mut cells = Vec::new();
    for c in order {
        if cum >= level - MASS_TOL {
            break;
        }
        cum += map[c];
        cells.push(c);
    }
    Ok(CredibleRegion::new(cells, map, grid))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExceedanceRegion {
    pub region: CredibleRegion,
    /// Distance from the reference to the farthest region cell centre, km.
    pub max_distance_km: f64,
    /// Compass bearing of that cell from the reference, degrees.
    pub bearing_deg: f64,
}

/// Cells at least as probable as the one containing `reference`. If the
/// reference cell has zero mass the region is every positive-mass cell.
pub fn exceedance_region(
    map: &[f64],
    grid: &GridSpec,
    reference: Point,
) -> Result<ExceedanceRegion> {
    check_map(map, grid)?;
    let rc = grid
        .locate(reference)
        .filter(|&f| grid.in_mask(f))
        .ok_or_else(|| {
            Error::Domain(format!(
                "reference ({}, {}) lies outside the mask",
                reference.x, reference.y
            ))
        })?;
    let threshold = map[rc];
    let cells: Vec<usize> = (0..map.len())
        .filter(|&c| grid.in_mask(c) && map[c] > 0.0 && map[c] >= threshold)
        .collect();
    let (mut max_distance_km, mut bearing_deg) = (0.0, 0.0);
    for &c in &cells {
        let p = grid.fine_center(c);
        let d = reference.distance(&p);
        if d > max_distance_km {
            max_distance_km = d;
            bearing_deg = reference.bearing_to(&p);
        }
    }
    Ok(ExceedanceRegion {
        region: CredibleRegion::new(cells, map, grid),
        max_distance_km,
        bearing_deg,
    })
}
