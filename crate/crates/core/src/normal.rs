//! Standard-normal helpers: CDF, quantile and one-sided truncated draws.

use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use statrs::function::erf::erfc_inv;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// `Φ(x)`, accurate in both tails.
pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

pub fn std_normal_pdf(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

/// `Φ⁻¹(p)` for `p` in (0, 1).
pub fn std_normal_quantile(p: f64) -> f64 {
    let mut x = -std::f64::consts::SQRT_2 * erfc_inv(2.0 * p);
    // polish the series estimate against the accurate CDF
    for _ in 0..2 {
        let d = std_normal_pdf(x);
        if !(d > 0.0) {
            break;
        }
        x -= (std_normal_cdf(x) - p) / d;
    }
    x
}

/// Draws `Z ~ N(0, 1)` conditioned on `Z > a`.
///
/// Plain rejection for `a ≤ 0`; otherwise the translated-exponential
/// proposal with the optimal rate, which stays efficient far into the tail.
pub fn sample_lower_truncated<R: Rng + ?Sized>(a: f64, rng: &mut R) -> f64 {
    if a <= 0.0 {
        loop {
            let z: f64 = StandardNormal.sample(rng);
            if z > a {
                return z;
            }
        }
    }
    let rate = 0.5 * (a + (a * a + 4.0).sqrt());
    loop {
        let e: f64 = Exp1.sample(rng);
        let z = a + e / rate;
        let u: f64 = rng.random();
        let d = z - rate;
        if u <= (-0.5 * d * d).exp() {
            return z;
        }
    }
}

/// Draws `X ~ N(mean, 1)` restricted to `(0, ∞)` when `positive`, else to
/// `(-∞, 0]`.
pub fn sample_truncated_at_zero<R: Rng + ?Sized>(mean: f64, positive: bool, rng: &mut R) -> f64 {
    if positive {
        mean + sample_lower_truncated(-mean, rng)
    } else {
        mean - sample_lower_truncated(mean, rng)
    }
}
