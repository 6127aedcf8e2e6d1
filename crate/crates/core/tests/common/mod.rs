#![allow(dead_code)]

use pointsource::mcmc::{FitProblem, PriorSpec};
use pointsource::observation::{SampleRecord, SusceptibilityDesign};
use pointsource::raster::CovariateRaster;
use pointsource::solver::SolverSettings;
use pointsource::{build_grid, Extent, GridSpec, Month, Point};

/// 240 km square, 10 km fine cells, 40 km coarse cells.
pub fn small_grid() -> GridSpec {
    build_grid(Extent::new(0.0, 0.0, 240.0, 240.0), 10.0, 40.0, None).unwrap()
}

pub fn small_covariates(grid: &GridSpec) -> CovariateRaster {
    let mut c = CovariateRaster::new(grid);
    let z: Vec<f64> = (0..grid.n_fine())
        .map(|f| {
            let p = grid.fine_center(f);
            (p.x / 240.0 - 0.5) + 0.5 * (p.y / 120.0).sin()
        })
        .collect();
    c.add_layer(grid, "z", z).unwrap();
    c
}

pub fn prior(start: Month, end: Month) -> PriorSpec {
    PriorSpec {
        t0_start: start,
        t0_end: end,
        ..PriorSpec::with_default_window(end.offset(1))
    }
}

pub fn record(x: f64, y: f64, date: Month, species: &str, outcome: u8) -> SampleRecord {
    SampleRecord {
        location: Point::new(x, y),
        date,
        species: species.to_string(),
        y: outcome,
    }
}

pub fn problem(samples: Vec<SampleRecord>, prior: PriorSpec, species: &[&str]) -> FitProblem {
    let grid = small_grid();
    let covariates = small_covariates(&grid);
    FitProblem::new(
        grid,
        covariates,
        vec!["z".to_string()],
        Vec::new(),
        SusceptibilityDesign::new(species.iter().map(|s| s.to_string()).collect()).unwrap(),
        samples,
        SolverSettings {
            steps_per_month: 10,
            save_every_months: 1,
        },
        prior,
        1,
    )
    .unwrap()
}

/// A handful of mixed outcomes around the centre of the small grid.
pub fn toy_problem() -> FitProblem {
    let first = Month::from_ym(2010, 1);
    let mut samples = Vec::new();
    for i in 0..40 {
        let x = 60.0 + (i % 8) as f64 * 15.0;
        let y = 60.0 + (i / 8) as f64 * 25.0;
        let d = (x - 120.0f64).hypot(y - 120.0);
        samples.push(record(
            x,
            y,
            first.offset((i % 12) as i64),
            if i % 2 == 0 { "A" } else { "B" },
            u8::from(d < 50.0),
        ));
    }
    problem(
        samples,
        prior(Month::from_ym(2007, 1), first.offset(-1)),
        &["A", "B"],
    )
}
