use serde::{Deserialize, Serialize};

use crate::grid::Point;
use crate::solver::IntroductionEvent;
use crate::time::Month;

/// Full parameter vector of the hierarchical model. `omega` and `theta` hold
/// one entry per introduction; all introductions share `t0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterState {
    pub alpha0: f64,
    pub alpha: Vec<f64>,
    pub gamma0: f64,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub omega: Vec<Point>,
    pub t0: Month,
    pub theta: Vec<f64>,
}

impl ParameterState {
    pub fn events(&self) -> Vec<IntroductionEvent> {
        self.omega
            .iter()
            .zip(&self.theta)
            .map(|(&omega, &theta)| IntroductionEvent::new(omega, self.t0.index() as f64, theta))
            .collect()
    }

    pub fn n_sources(&self) -> usize {
        self.omega.len()
    }

    pub fn is_finite(&self) -> bool {
        [self.alpha0, self.gamma0]
            .iter()
            .chain(&self.alpha)
            .chain(&self.gamma)
            .chain(&self.beta)
            .chain(&self.theta)
            .all(|v| v.is_finite())
            && self
                .omega
                .iter()
                .all(|p| p.x.is_finite() && p.y.is_finite())
    }
}

/// Names of the scalar columns, in the order of [`scalar_values`].
pub fn scalar_names(
    diffusion_layers: &[String],
    growth_layers: &[String],
    species: &[String],
    n_sources: usize,
) -> Vec<String> {
    let mut names = vec!["alpha0".to_string()];
    names.extend(diffusion_layers.iter().map(|l| format!("alpha_{l}")));
    names.push("gamma0".into());
    names.extend(growth_layers.iter().map(|l| format!("gamma_{l}")));
    names.extend(species.iter().map(|s| format!("beta_{s}")));
    names.extend(["omega_x", "omega_y", "t0", "theta"].map(String::from));
    for j in 2..=n_sources {
        names.extend([
            format!("omega_x_{j}"),
            format!("omega_y_{j}"),
            format!("theta_{j}"),
        ]);
    }
    names
}

/// Scalar values with `t0` as its month index.
pub fn scalar_values(s: &ParameterState) -> Vec<f64> {
    let mut v = vec![s.alpha0];
    v.extend(&s.alpha);
    v.push(s.gamma0);
    v.extend(&s.gamma);
    v.extend(&s.beta);
    v.extend([s.omega[0].x, s.omega[0].y, s.t0.index() as f64, s.theta[0]]);
    for j in 1..s.n_sources() {
        v.extend([s.omega[j].x, s.omega[j].y, s.theta[j]]);
    }
    v
}
