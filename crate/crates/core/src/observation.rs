//! Data model: infection status of a tested individual is Bernoulli with
//! probability `Φ(log u + xᵀβ)`, i.e. the standard log-normal CDF applied to
//! intensity times species susceptibility `e^{xᵀβ}`.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Point;
use crate::normal::std_normal_cdf;
use crate::solver::IntensityTrajectory;
use crate::time::Month;

/// Probabilities are clamped to `[P_CLAMP, 1 − P_CLAMP]` before taking logs.
pub const P_CLAMP: f64 = 1e-12;

/// One tested individual.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub location: Point,
    pub date: Month,
    pub species: String,
    /// 1 = positive or suspect, 0 = negative.
    pub y: u8,
}

/// Where, when and what species will be (or was) tested, without the outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignPoint {
    pub location: Point,
    pub date: Month,
    pub species: String,
}

impl From<&SampleRecord> for DesignPoint {
    fn from(s: &SampleRecord) -> Self {
        DesignPoint {
            location: s.location,
            date: s.date,
            species: s.species.clone(),
        }
    }
}

/// One-hot species encoding with no shared intercept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SusceptibilityDesign {
    pub species_order: Vec<String>,
}

impl SusceptibilityDesign {
    pub fn new(species_order: Vec<String>) -> Result<Self> {
        if species_order.is_empty() {
            return Err(Error::Config("at least one species is required".into()));
        }
        for (i, s) in species_order.iter().enumerate() {
            if species_order[..i].contains(s) {
                return Err(Error::Config(format!("duplicate species label {s}")));
            }
        }
        Ok(SusceptibilityDesign { species_order })
    }

    /// Species in first-seen order.
    pub fn from_samples<'a>(labels: impl IntoIterator<Item = &'a str>) -> Result<Self> {
        let mut order: Vec<String> = Vec::new();
        for l in labels {
            if !order.iter().any(|o| o == l) {
                order.push(l.to_string());
            }
        }
        Self::new(order)
    }

    pub fn n_coefficients(&self) -> usize {
        self.species_order.len()
    }

    pub fn index(&self, species: &str) -> Result<usize> {
        self.species_order
            .iter()
            .position(|s| s == species)
            .ok_or_else(|| Error::Config(format!("unknown species {species}")))
    }

    pub fn encode(&self, species: &str) -> Result<Vec<f64>> {
        let k = self.index(species)?;
        let mut x = vec![0.0; self.species_order.len()];
        x[k] = 1.0;
        Ok(x)
    }
}

/// `Φ(log v)`, the standard log-normal CDF.
pub fn inverse_link(v: f64) -> Result<f64> {
    if !(v >= 0.0) {
        return Err(Error::Domain(format!(
            "link argument must be non-negative, got {v}"
        )));
    }
    if v == 0.0 {
        return Ok(0.0);
    }
    Ok(std_normal_cdf(v.ln()))
}

/// `p = Φ(log u + xᵀβ)`.
pub fn infection_probability(u: f64, x: &[f64], beta: &[f64]) -> Result<f64> {
    let xb: f64 = x.iter().zip(beta).map(|(a, b)| a * b).sum();
    probability_from_offset(u, xb)
}

pub(crate) fn probability_from_offset(u: f64, xb: f64) -> Result<f64> {
    if !(u >= 0.0) {
        return Err(Error::Domain(format!(
            "intensity must be non-negative, got {u}"
        )));
    }
    if u == 0.0 {
        return Ok(0.0);
    }
    Ok(std_normal_cdf(u.ln() + xb))
}

/// Bernoulli log-likelihood contribution with the probability clamp.
pub fn bernoulli_log_density(y: u8, p: f64) -> f64 {
    let p = p.clamp(P_CLAMP, 1.0 - P_CLAMP);
    if y == 1 {
        p.ln()
    } else {
        (1.0 - p).ln()
    }
}

fn intensity_at(
    index: usize,
    location: Point,
    date: Month,
    trajectory: &IntensityTrajectory,
) -> Result<f64> {
    let grid = trajectory.grid();
    let fine = grid.locate(location).ok_or_else(|| {
        Error::Domain(format!(
            "sample {index} at ({}, {}) lies outside the grid",
            location.x, location.y
        ))
    })?;
    let k = trajectory
        .frame_at(date.index() as f64)
        .ok_or_else(|| Error::Coverage {
            index,
            month: date.index(),
            start: trajectory.t_start().round() as i64,
            end: trajectory.frame_time(trajectory.n_frames() - 1).round() as i64,
        })?;
    Ok(trajectory.intensity(fine, k))
}

/// Per-sample infection probabilities under `trajectory` and `beta`.
pub fn sample_probabilities(
    points: &[DesignPoint],
    trajectory: &IntensityTrajectory,
    beta: &[f64],
    design: &SusceptibilityDesign,
) -> Result<Vec<f64>> {
    points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let u = intensity_at(i, p.location, p.date, trajectory)?;
            let k = design.index(&p.species)?;
            probability_from_offset(u, beta[k])
        })
        .collect()
}

pub fn log_likelihood(
    samples: &[SampleRecord],
    trajectory: &IntensityTrajectory,
    beta: &[f64],
    design: &SusceptibilityDesign,
) -> Result<f64> {
    let mut total = 0.0;
    for (i, s) in samples.iter().enumerate() {
        let u = intensity_at(i, s.location, s.date, trajectory)?;
        let k = design.index(&s.species)?;
        total += bernoulli_log_density(s.y, probability_from_offset(u, beta[k])?);
    }
    Ok(total)
}

pub fn simulate_samples<R: Rng + ?Sized>(
    design_points: &[DesignPoint],
    trajectory: &IntensityTrajectory,
    beta: &[f64],
    design: &SusceptibilityDesign,
    rng: &mut R,
) -> Result<Vec<SampleRecord>> {
    let probs = sample_probabilities(design_points, trajectory, beta, design)?;
    Ok(design_points
        .iter()
        .zip(probs)
        .map(|(d, p)| {
            let draw: f64 = rng.random();
            SampleRecord {
                location: d.location,
                date: d.date,
                species: d.species.clone(),
                y: u8::from(draw < p),
            }
        })
        .collect())
}

#[derive(Debug, Serialize, Deserialize)]
struct SampleRow {
    x_km: f64,
    y_km: f64,
    date: Month,
    species: String,
    y: u8,
}

pub fn read_samples(path: &Path) -> Result<Vec<SampleRecord>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut out = Vec::new();
    for (i, row) in reader.deserialize::<SampleRow>().enumerate() {
        let row = row.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 2,
            message: e.to_string(),
        })?;
        if row.y > 1 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: i + 2,
                message: format!("outcome must be 0 or 1, got {}", row.y),
            });
        }
        out.push(SampleRecord {
            location: Point::new(row.x_km, row.y_km),
            date: row.date,
            species: row.species,
            y: row.y,
        });
    }
    Ok(out)
}

pub fn write_samples(path: &Path, samples: &[SampleRecord]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for s in samples {
        writer
            .serialize(SampleRow {
                x_km: s.location.x,
                y_km: s.location.y,
                date: s.date,
                species: s.species.clone(),
                y: s.y,
            })
            .map_err(|e| csv_error(path, e))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

pub fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            message: format!("{other:?}"),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, Extent};
    use crate::rates::RateFields;
    use crate::solver::{solve_homogenized, IntroductionEvent, SolverSettings};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn link_examples() {
        assert_eq!(inverse_link(1.0).unwrap(), 0.5);
        assert_eq!(inverse_link(0.0).unwrap(), 0.0);
        let phi1 = 0.841_344_746_068_542_9;
        assert!((inverse_link(std::f64::consts::E).unwrap() - phi1).abs() < 1e-15);
        assert!(matches!(inverse_link(-1.0), Err(Error::Domain(_))));
        assert!(inverse_link(f64::NAN).is_err());
    }

    #[test]
    fn probability_examples() {
        assert_eq!(infection_probability(1.0, &[1.0], &[0.0]).unwrap(), 0.5);
        assert_eq!(infection_probability(0.0, &[1.0], &[5.0]).unwrap(), 0.0);
        let phi1 = 0.841_344_746_068_542_9;
        assert!(
            (infection_probability(1.0, &[0.0, 1.0], &[3.0, 1.0]).unwrap() - phi1).abs() < 1e-15
        );
        assert!(infection_probability(-1.0, &[1.0], &[0.0]).is_err());
    }

    #[test]
    fn log_density_examples() {
        let n = 7.0;
        let total: f64 = (0..7)
            .map(|i| bernoulli_log_density((i % 2) as u8, 0.5))
            .sum();
        assert!((total + n * 2f64.ln()).abs() < 1e-12);
        assert!((bernoulli_log_density(1, 0.0) - P_CLAMP.ln()).abs() < 1e-12);
        let ll = bernoulli_log_density(1, 0.8) + bernoulli_log_density(0, 0.3);
        assert!((ll - (0.8f64.ln() + 0.7f64.ln())).abs() < 1e-15);
    }

    #[test]
    fn design_encoding() {
        let d =
            SusceptibilityDesign::from_samples(["MYLU", "EPFU", "MYLU", "PESU", "MYSE"]).unwrap();
        assert_eq!(d.n_coefficients(), 4);
        for s in ["MYLU", "EPFU", "PESU", "MYSE"] {
            let x = d.encode(s).unwrap();
            assert_eq!(x.iter().filter(|&&v| v != 0.0).count(), 1);
        }
        assert!(d.encode("LANO").is_err());
        assert!(SusceptibilityDesign::new(vec!["a".into(), "a".into()]).is_err());
    }

    fn trajectory(theta: f64) -> IntensityTrajectory {
        let g = build_grid(Extent::new(0.0, 0.0, 50.0, 50.0), 10.0, 10.0, None).unwrap();
        let rates = RateFields::constant(&g, 5.0, 0.0).unwrap();
        let omega = g.coarse_center(g.coarse_index(2, 2));
        solve_homogenized(
            &[IntroductionEvent::new(omega, 0.0, theta)],
            &rates,
            &g,
            6.0,
            &SolverSettings::default(),
        )
        .unwrap()
    }

    #[test]
    fn likelihood_requires_coverage() {
        let traj = trajectory(1.0);
        let design = SusceptibilityDesign::new(vec!["a".into()]).unwrap();
        let s = SampleRecord {
            location: Point::new(25.0, 25.0),
            date: Month(9),
            species: "a".into(),
            y: 1,
        };
        let err = log_likelihood(&[s], &traj, &[0.0], &design).unwrap_err();
        assert!(
            matches!(
                err,
                Error::Coverage {
                    index: 0,
                    month: 9,
                    ..
                }
            ),
            "{err}"
        );
    }

    #[test]
    fn simulation_extremes() {
        let design = SusceptibilityDesign::new(vec!["a".into()]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        // outside the seeded block at t0 the intensity is exactly zero
        let traj = trajectory(1.0);
        let pts: Vec<DesignPoint> = (0..200)
            .map(|_| DesignPoint {
                location: Point::new(5.0, 5.0),
                date: Month(0),
                species: "a".into(),
            })
            .collect();
        let sim = simulate_samples(&pts, &traj, &[0.0], &design, &mut rng).unwrap();
        assert!(sim.iter().all(|s| s.y == 0));
        // β large enough that p rounds to 1 − 1e-12 or above
        let centre: Vec<DesignPoint> = pts
            .iter()
            .map(|p| DesignPoint {
                location: Point::new(25.0, 25.0),
                ..p.clone()
            })
            .collect();
        let sim = simulate_samples(&centre, &traj, &[40.0], &design, &mut rng).unwrap();
        assert!(sim.iter().all(|s| s.y == 1));
    }

    #[test]
    fn simulated_frequency_matches_probability() {
        // choose β so that p = 0.25 exactly at the seeded cell in frame 0
        let traj = trajectory(1.0);
        let u = traj.intensity(traj.grid().locate(Point::new(25.0, 25.0)).unwrap(), 0);
        let beta = crate::normal::std_normal_quantile(0.25) - u.ln();
        let design = SusceptibilityDesign::new(vec!["a".into()]).unwrap();
        let pts: Vec<DesignPoint> = (0..10_000)
            .map(|_| DesignPoint {
                location: Point::new(25.0, 25.0),
                date: Month(0),
                species: "a".into(),
            })
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let sim = simulate_samples(&pts, &traj, &[beta], &design, &mut rng).unwrap();
        let mean = sim.iter().map(|s| f64::from(s.y)).sum::<f64>() / 1e4;
        assert!((mean - 0.25).abs() <= 0.013, "{mean}");
        // same seed, same draws
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        assert_eq!(
            sim,
            simulate_samples(&pts, &traj, &[beta], &design, &mut rng).unwrap()
        );
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        let samples = vec![
            SampleRecord {
                location: Point::new(12.5, -3.25),
                date: "2008-03".parse().unwrap(),
                species: "MYLU".into(),
                y: 1,
            },
            SampleRecord {
                location: Point::new(0.1, 7.0),
                date: "2009-11".parse().unwrap(),
                species: "EPFU".into(),
                y: 0,
            },
        ];
        write_samples(&path, &samples).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("x_km,y_km,date,species,y\n"));
        assert!(text.contains("2008-03"));
        assert_eq!(read_samples(&path).unwrap(), samples);

        std::fs::write(&path, "x_km,y_km,date,species,y\n1,2,2008-01,a,2\n").unwrap();
        assert!(matches!(read_samples(&path), Err(Error::Parse { .. })));
    }
}
