//! Forward solver for ecological diffusion with exponential growth,
//! `∂u/∂t = Δ(μu) + λu`, started from point-source introductions.
//!
//! The production path solves the homogenized equation for `c̄ = μ̄ū` on the
//! coarse grid and downscales with `u = c̄/μ(s)`. [`solve_fine_oracle`] solves
//! the original equation directly on the fine grid and exists to check the
//! homogenized path.
//!
//! Each explicit step applies the diffusion update and then the exact growth
//! factor `exp(λ dt)`, so a spatially uniform growth rate multiplies total
//! mass by exactly `exp(λ t)`.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridSpec, Point};
use crate::raster::write_ascii_raster;
use crate::rates::RateFields;
use crate::time::Month;

/// Largest fine grid accepted by [`solve_fine_oracle`] along either axis.
pub const ORACLE_MAX_CELLS_PER_AXIS: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSettings {
    pub steps_per_month: u32,
    /// Months between saved frames.
    pub save_every_months: u32,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            steps_per_month: 30,
            save_every_months: 1,
        }
    }
}

impl SolverSettings {
    pub fn validate(&self) -> Result<()> {
        if self.steps_per_month == 0 || self.save_every_months == 0 {
            return Err(Error::Config(
                "steps_per_month and save_every_months must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// A point-source introduction: mass `theta` placed at `omega` at time `t0`
/// (months on the [`Month`] axis).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntroductionEvent {
    pub omega: Point,
    pub t0: f64,
    pub theta: f64,
}

impl IntroductionEvent {
    pub fn new(omega: Point, t0: f64, theta: f64) -> Self {
        IntroductionEvent { omega, t0, theta }
    }
}

fn common_t0(events: &[IntroductionEvent]) -> Result<f64> {
    let first = events
        .first()
        .ok_or_else(|| Error::Config("at least one introduction event is required".into()))?;
    if events.iter().any(|e| e.t0 != first.t0) {
        return Err(Error::Config(
            "all introduction events must share one introduction date".into(),
        ));
    }
    Ok(first.t0)
}

/// Coarse cell receiving an event located at `omega`.
pub fn seed_cell(grid: &GridSpec, omega: Point) -> Result<usize> {
    let f = grid.locate_in_support(omega).ok_or_else(|| {
        Error::Domain(format!(
            "introduction at ({}, {}) lies outside the modelled domain",
            omega.x, omega.y
        ))
    })?;
    Ok(grid.parent(f))
}

/// Initial coarse state `c̄(·, t0)`. Each event adds `θ μ̄ / A` to its coarse
/// cell, `A` being the masked area of that cell, so the downscaled intensity
/// integrates to `θ` over the cell.
pub fn initialize_intensity(
    events: &[IntroductionEvent],
    rates: &RateFields,
    grid: &GridSpec,
) -> Result<Vec<f64>> {
    common_t0(events)?;
    let mut cbar = vec![0.0; grid.n_coarse()];
    for e in events {
        if !(e.theta > 0.0 && e.theta.is_finite()) {
            return Err(Error::Domain(format!(
                "initial mass must be positive, got {}",
                e.theta
            )));
        }
        let cell = seed_cell(grid, e.omega)?;
        cbar[cell] += e.theta * rates.homogenized.mu_bar[cell] / grid.masked_area(cell);
    }
    Ok(cbar)
}

/// `u(s) = c̄(parent(s)) / μ(s)` on masked fine cells, zero elsewhere.
pub fn downscale_intensity(cbar: &[f64], rates: &RateFields, grid: &GridSpec) -> Vec<f64> {
    (0..grid.n_fine())
        .map(|f| {
            if grid.in_mask(f) {
                cbar[grid.parent(f)] / rates.mu[f]
            } else {
                0.0
            }
        })
        .collect()
}

/// Expected abundance `Σ u(s) · a` over `region` (fine cell indices).
pub fn integrate_intensity(u: &[f64], region: &[usize], grid: &GridSpec) -> f64 {
    region.iter().map(|&f| u[f]).sum::<f64>() * grid.fine_cell_area()
}

/// Explicit five-point stencil over a set of active cells on a rectangular
/// array whose inactive cells are held at zero.
#[derive(Debug, Clone)]
pub(crate) struct Stencil {
    n_cells: usize,
    cols: usize,
    active: Vec<usize>,
    /// `μ dt / h²` per active cell, or `dt / h²` when the Laplacian acts on `μu`.
    diffusion: Vec<f64>,
    /// `exp(λ dt)` per active cell.
    growth: Vec<f64>,
    /// For the fine oracle the Laplacian acts on `μu`; `None` means it acts
    /// on the state itself.
    inner: Option<Vec<f64>>,
    substeps_per_month: usize,
    dt: f64,
    /// One month of steps as a dense matrix on the active cells, used when
    /// stability forces many sub-steps on a small active set.
    propagator: Option<DMatrix<f64>>,
}

/// Largest active set for which the dense monthly propagator is considered.
const PROPAGATOR_MAX_CELLS: usize = 512;

impl Stencil {
    #[allow(clippy::too_many_arguments)]
    fn build(
        n_cells: usize,
        cols: usize,
        active: Vec<usize>,
        diffusivity: impl Fn(usize) -> f64,
        growth_rate: impl Fn(usize) -> f64,
        inner: Option<Vec<f64>>,
        spacing: f64,
        steps_per_month: u32,
    ) -> Result<Self> {
        let max_d = active.iter().map(|&i| diffusivity(i)).fold(0.0, f64::max);
        if !max_d.is_finite() {
            return Err(Error::NumericalBlowup { step: 0, time: 0.0 });
        }
        let mut dt = 1.0 / f64::from(steps_per_month);
        let mut substeps = steps_per_month as usize;
        let bound = spacing * spacing / (4.0 * max_d);
        while dt > bound {
            dt *= 0.5;
            substeps *= 2;
            if substeps > (1 << 26) {
                return Err(Error::NumericalBlowup { step: 0, time: 0.0 });
            }
        }
        if substeps != steps_per_month as usize {
            log::debug!(
                "explicit stability bound: dt reduced to {dt} months ({substeps} steps/month)"
            );
        }
        let h2 = spacing * spacing;
        let diffusion = if inner.is_some() {
            vec![dt / h2; active.len()]
        } else {
            active.iter().map(|&i| diffusivity(i) * dt / h2).collect()
        };
        let growth = active
            .iter()
            .map(|&i| (growth_rate(i) * dt).exp())
            .collect();
        let mut stencil = Stencil {
            n_cells,
            cols,
            active,
            diffusion,
            growth,
            inner,
            substeps_per_month: substeps,
            dt,
            propagator: None,
        };
        let n = stencil.active.len();
        if stencil.inner.is_none() && n <= PROPAGATOR_MAX_CELLS && substeps > 2 * n {
            stencil.propagator = Some(stencil.monthly_propagator());
        }
        Ok(stencil)
    }

    /// `S^k` where `S` is one explicit step restricted to active cells and
    /// `k` the number of sub-steps per month.
    fn monthly_propagator(&self) -> DMatrix<f64> {
        let n = self.active.len();
        let mut slot = vec![usize::MAX; self.n_cells];
        for (k, &i) in self.active.iter().enumerate() {
            slot[i] = k;
        }
        let mut step = DMatrix::zeros(n, n);
        for (k, &i) in self.active.iter().enumerate() {
            let (g, d) = (self.growth[k], self.diffusion[k]);
            step[(k, k)] = g * (1.0 - 4.0 * d);
            for j in [i - 1, i + 1, i - self.cols, i + self.cols] {
                if slot[j] != usize::MAX {
                    step[(k, slot[j])] += g * d;
                }
            }
        }
        let mut result = DMatrix::identity(n, n);
        let mut base = step;
        let mut e = self.substeps_per_month;
        while e > 0 {
            if e & 1 == 1 {
                result = &base * &result;
            }
            e >>= 1;
            if e > 0 {
                base = &base * &base;
            }
        }
        result
    }

    pub(crate) fn homogenized(
        grid: &GridSpec,
        rates: &RateFields,
        steps_per_month: u32,
    ) -> Result<Self> {
        let active: Vec<usize> = (0..grid.n_coarse())
            .filter(|&c| grid.coarse_active()[c])
            .collect();
        let h = &rates.homogenized;
        Self::build(
            grid.n_coarse(),
            grid.n_coarse_cols(),
            active,
            |i| h.mu_bar[i],
            |i| h.lambda_bar[i],
            None,
            grid.coarse_cell_size(),
            steps_per_month,
        )
    }

    fn fine(grid: &GridSpec, rates: &RateFields, steps_per_month: u32) -> Result<Self> {
        let active: Vec<usize> = (0..grid.n_fine()).filter(|&f| grid.in_support(f)).collect();
        let mut inner = vec![0.0; grid.n_fine()];
        for &f in &active {
            inner[f] = rates.mu[f];
        }
        Self::build(
            grid.n_fine(),
            grid.n_fine_cols(),
            active,
            |i| rates.mu[i],
            |i| rates.lambda[i],
            Some(inner),
            grid.fine_cell_size(),
            steps_per_month,
        )
    }

    pub(crate) fn dt(&self) -> f64 {
        self.dt
    }

    fn step(&self, state: &[f64], next: &mut [f64], field: &mut [f64]) {
        let cols = self.cols;
        match &self.inner {
            None => {
                for (k, &i) in self.active.iter().enumerate() {
                    let lap = state[i - 1] + state[i + 1] + state[i - cols] + state[i + cols]
                        - 4.0 * state[i];
                    next[i] = self.growth[k] * (state[i] + self.diffusion[k] * lap);
                }
            }
            Some(mu) => {
                for &i in &self.active {
                    field[i] = mu[i] * state[i];
                }
                for (k, &i) in self.active.iter().enumerate() {
                    let lap = field[i - 1] + field[i + 1] + field[i - cols] + field[i + cols]
                        - 4.0 * field[i];
                    next[i] = self.growth[k] * (state[i] + self.diffusion[k] * lap);
                }
            }
        }
    }

    /// Advances `state` by whole months, calling `on_month` after each.
    pub(crate) fn run_months(
        &self,
        state: &mut Vec<f64>,
        months: usize,
        mut on_month: impl FnMut(usize, &[f64]),
    ) -> Result<()> {
        debug_assert_eq!(state.len(), self.n_cells);
        let mut next = state.clone();
        let mut field = vec![
            0.0;
            if self.inner.is_some() {
                self.n_cells
            } else {
                0
            }
        ];
        let mut packed = DVector::zeros(if self.propagator.is_some() {
            self.active.len()
        } else {
            0
        });
        for m in 0..months {
            if let Some(p) = &self.propagator {
                for (k, &i) in self.active.iter().enumerate() {
                    packed[k] = state[i];
                }
                let out = p * &packed;
                for (k, &i) in self.active.iter().enumerate() {
                    state[i] = out[k];
                }
            } else {
                for _ in 0..self.substeps_per_month {
                    self.step(state, &mut next, &mut field);
                    std::mem::swap(state, &mut next);
                }
            }
            if self.active.iter().any(|&i| !state[i].is_finite()) {
                let step = (m + 1) * self.substeps_per_month;
                return Err(Error::NumericalBlowup {
                    step,
                    time: step as f64 * self.dt,
                });
            }
            on_month(m + 1, state);
        }
        Ok(())
    }
}

/// How saved frames relate to fine-scale intensity.
#[derive(Debug, Clone, PartialEq)]
enum Frames {
    /// Coarse `c̄` frames plus the fine `μ` used for downscaling.
    Homogenized {
        coarse: Vec<Vec<f64>>,
        mu_fine: Vec<f64>,
    },
    /// Fine-grid `u` frames.
    Fine(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntensityTrajectory {
    grid: GridSpec,
    t_start: f64,
    t_end: f64,
    dt: f64,
    frame_interval: f64,
    frames: Frames,
}

impl IntensityTrajectory {
    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }
    pub fn t_start(&self) -> f64 {
        self.t_start
    }
    pub fn t_end(&self) -> f64 {
        self.t_end
    }
    /// Effective time step after any stability sub-stepping.
    pub fn dt(&self) -> f64 {
        self.dt
    }
    pub fn frame_interval(&self) -> f64 {
        self.frame_interval
    }

    pub fn n_frames(&self) -> usize {
        match &self.frames {
            Frames::Homogenized { coarse, .. } => coarse.len(),
            Frames::Fine(f) => f.len(),
        }
    }

    pub fn frame_time(&self, k: usize) -> f64 {
        self.t_start + k as f64 * self.frame_interval
    }

    /// Nearest saved frame to time `t`, or `None` if `t` is more than half a
    /// frame interval outside the saved range.
    pub fn frame_at(&self, t: f64) -> Option<usize> {
        let k = ((t - self.t_start) / self.frame_interval).round();
        if k < 0.0 || k >= self.n_frames() as f64 {
            None
        } else {
            Some(k as usize)
        }
    }

    /// Intensity at fine cell `fine` in frame `k`.
    pub fn intensity(&self, fine: usize, k: usize) -> f64 {
        if !self.grid.in_mask(fine) {
            return 0.0;
        }
        match &self.frames {
            Frames::Homogenized { coarse, mu_fine } => {
                coarse[k][self.grid.parent(fine)] / mu_fine[fine]
            }
            Frames::Fine(f) => f[k][fine],
        }
    }

    /// Coarse `c̄` frame, for homogenized trajectories.
    pub fn coarse_frame(&self, k: usize) -> Option<&[f64]> {
        match &self.frames {
            Frames::Homogenized { coarse, .. } => Some(&coarse[k]),
            Frames::Fine(_) => None,
        }
    }

    /// Fine-scale `u` for frame `k`.
    pub fn fine_frame(&self, k: usize) -> Vec<f64> {
        match &self.frames {
            Frames::Homogenized { .. } => (0..self.grid.n_fine())
                .map(|f| self.intensity(f, k))
                .collect(),
            Frames::Fine(f) => f[k].clone(),
        }
    }

    /// Expected total abundance in frame `k`.
    pub fn total_mass(&self, k: usize) -> f64 {
        let total: f64 = (0..self.grid.n_fine()).map(|f| self.intensity(f, k)).sum();
        total * self.grid.fine_cell_area()
    }

    /// Mass held in cells adjacent to the absorbing boundary, per frame.
    pub fn boundary_mass(&self, k: usize) -> f64 {
        let g = &self.grid;
        let u = self.fine_frame(k);
        let mut total = 0.0;
        for f in 0..g.n_fine() {
            if !g.in_support(f) {
                continue;
            }
            let (r, c) = g.fine_row_col(f);
            let touches = [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)]
                .iter()
                .any(|(dr, dc)| {
                    let (nr, nc) = (r as i64 + dr, c as i64 + dc);
                    if nr < 0
                        || nc < 0
                        || nr >= g.n_fine_rows() as i64
                        || nc >= g.n_fine_cols() as i64
                    {
                        return true;
                    }
                    let n = g.fine_index(nr as usize, nc as usize);
                    match &self.frames {
                        Frames::Homogenized { .. } => !g.coarse_active()[g.parent(n)],
                        Frames::Fine(_) => !g.in_support(n),
                    }
                });
            if touches {
                total += u[f];
            }
        }
        total * g.fine_cell_area()
    }

    /// Writes one raster per saved frame as `u_<YYYY-MM>.asc` in `dir`.
    pub fn export(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for k in 0..self.n_frames() {
            let month = Month(self.frame_time(k).round() as i64);
            let path = dir.join(format!("u_{month}.asc"));
            write_ascii_raster(&path, &self.grid, &self.fine_frame(k))?;
        }
        Ok(())
    }
}

fn snapped_schedule(t0: f64, t_end: f64, settings: &SolverSettings) -> Result<(f64, usize)> {
    settings.validate()?;
    let spm = f64::from(settings.steps_per_month);
    let t0 = (t0 * spm).round() / spm;
    if !(t_end >= t0) {
        return Err(Error::Config(format!(
            "solve end {t_end} precedes introduction date {t0}"
        )));
    }
    let interval = f64::from(settings.save_every_months);
    let n_saves = ((t_end - t0) / interval + 1e-9).floor() as usize;
    Ok((t0, n_saves))
}

pub fn solve_homogenized(
    events: &[IntroductionEvent],
    rates: &RateFields,
    grid: &GridSpec,
    t_end: f64,
    settings: &SolverSettings,
) -> Result<IntensityTrajectory> {
    let t0 = common_t0(events)?;
    let (t0, n_saves) = snapped_schedule(t0, t_end, settings)?;
    let mut state = initialize_intensity(events, rates, grid)?;
    let stencil = Stencil::homogenized(grid, rates, settings.steps_per_month)?;
    let every = settings.save_every_months as usize;
    let mut coarse = vec![state.clone()];
    stencil.run_months(&mut state, n_saves * every, |m, s| {
        if m % every == 0 {
            coarse.push(s.to_vec());
        }
    })?;
    Ok(IntensityTrajectory {
        grid: grid.clone(),
        t_start: t0,
        t_end,
        dt: stencil.dt(),
        frame_interval: f64::from(settings.save_every_months),
        frames: Frames::Homogenized {
            coarse,
            mu_fine: rates.mu.clone(),
        },
    })
}

/// Direct fine-grid solve of `∂u/∂t = Δ(μu) + λu`, starting from the same
/// downscaled initial state as [`solve_homogenized`].
pub fn solve_fine_oracle(
    events: &[IntroductionEvent],
    rates: &RateFields,
    grid: &GridSpec,
    t_end: f64,
    settings: &SolverSettings,
) -> Result<IntensityTrajectory> {
    if grid.n_fine_rows() > ORACLE_MAX_CELLS_PER_AXIS
        || grid.n_fine_cols() > ORACLE_MAX_CELLS_PER_AXIS
    {
        return Err(Error::Config(format!(
            "fine oracle is limited to {ORACLE_MAX_CELLS_PER_AXIS}x{ORACLE_MAX_CELLS_PER_AXIS} cells"
        )));
    }
    let t0 = common_t0(events)?;
    let (t0, n_saves) = snapped_schedule(t0, t_end, settings)?;
    let cbar = initialize_intensity(events, rates, grid)?;
    let mut state = downscale_intensity(&cbar, rates, grid);
    for (f, u) in state.iter_mut().enumerate() {
        if !grid.in_support(f) {
            *u = 0.0;
        }
    }
    let stencil = Stencil::fine(grid, rates, settings.steps_per_month)?;
    let every = settings.save_every_months as usize;
    let mut frames = vec![state.clone()];
    stencil.run_months(&mut state, n_saves * every, |m, s| {
        if m % every == 0 {
            frames.push(s.to_vec());
        }
    })?;
    Ok(IntensityTrajectory {
        grid: grid.clone(),
        t_start: t0,
        t_end,
        dt: stencil.dt(),
        frame_interval: f64::from(settings.save_every_months),
        frames: Frames::Fine(frames),
    })
}
