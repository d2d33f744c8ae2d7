use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::ObjectiveSpec;
use crate::linalg::{norm, norm2, sym_eigenvalues};
use crate::noise::NoiseModel;
use crate::scalar::Scalar;

/// Numeric checks of the standing assumptions on objective and noise.
/// Violations are recorded here and never raised as errors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssumptionReport {
    pub dim: usize,
    pub finite_on_box: bool,
    pub coercive: bool,
    /// Largest relative gradient error against central differences, when
    /// the objective supplies an analytic gradient.
    pub gradient_check: Option<f64>,
    /// Smallest covariance eigenvalue of the noise over box test points.
    pub min_covariance_eig: f64,
    pub covariance_positive: bool,
    pub ring_radius: f64,
    pub ring_outside_box: bool,
    pub n_ring_samples: usize,
    /// `min |grad f(x)|^2 / sigma^2(x)` over the ring.
    pub snr_ratio: f64,
    pub snr_threshold: f64,
    pub snr_pass: bool,
    pub snr_worst_point: Vec<f64>,
    /// Finiteness of every cost-matrix entry; unknown until the costs exist.
    pub assumption4: Option<bool>,
}

impl AssumptionReport {
    pub fn with_assumption4(mut self, all_finite: bool) -> Self {
        self.assumption4 = Some(all_finite);
        self
    }
}

/// Points on the sphere of radius `r` about `center`: symmetric pairs in 1-D,
/// equal angles in 2-D, seeded uniform directions above.
pub fn ring_points<T: Scalar>(center: &[T], r: T, n: usize) -> Vec<Vec<T>> {
    let d = center.len();
    match d {
        1 => vec![vec![center[0] - r], vec![center[0] + r]],
        2 => (0..n.max(1))
            .map(|k| {
                let a = T::c(std::f64::consts::TAU * k as f64 / n.max(1) as f64);
                vec![center[0] + r * a.cos(), center[1] + r * a.sin()]
            })
            .collect(),
        _ => {
            let mut rng = ChaCha8Rng::seed_from_u64(0x51a6);
            (0..n.max(1))
                .map(|_| {
                    let u: Vec<T> = (0..d).map(|_| T::c(StandardNormal.sample(&mut rng))).collect();
                    let nu = norm(&u);
                    center.iter().zip(&u).map(|(&c, &v)| c + r * v / nu).collect()
                })
                .collect()
        }
    }
}

/// Checks the signal-to-noise condition on a ring outside the search box
/// (`|grad f|^2 / sigma^2 > 16 log 6 d`), plus coercivity, finiteness,
/// gradient accuracy and positive-definite noise covariance on the box.
pub fn validate_assumptions<T: Scalar>(
    spec: &ObjectiveSpec<T>,
    noise: &NoiseModel<T>,
    ring_radius: T,
    n_ring_samples: usize,
) -> AssumptionReport {
    let d = spec.dim();
    let per_dim = if d <= 2 { 41 } else { 5 };
    let gradient_check = spec.objective().analytic_gradient().then(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(0x9ad);
        spec.gradient_check(100, &mut rng).f64()
    });
    let test_pts = spec.search_box.grid(if d <= 2 { 5 } else { 3 });
    let min_covariance_eig = test_pts
        .iter()
        .map(|x| {
            let c = noise.covariance(x, spec.f(x));
            sym_eigenvalues(&c, d)[0].f64()
        })
        .fold(f64::INFINITY, f64::min);

    let center = spec.search_box.center();
    let ring = ring_points(&center, ring_radius, n_ring_samples);
    let mut ratio = f64::INFINITY;
    let mut worst = Vec::new();
    for x in &ring {
        let g2 = norm2(&spec.grad(x)).f64();
        let s2 = noise.variance_proxy(x, spec.f(x)).f64();
        let r = if s2 > 0.0 { g2 / s2 } else if g2 > 0.0 { f64::INFINITY } else { 0.0 };
        if r < ratio || worst.is_empty() {
            ratio = r;
            worst = x.iter().map(|v| v.f64()).collect();
        }
    }
    let threshold = 16.0 * 6f64.ln() * d as f64;
    let ring_outside_box = ring_radius > spec.search_box.half_diagonal();
    if !ring_outside_box {
        log::warn!("ring radius {ring_radius} does not exceed the box half-diagonal");
    }
    AssumptionReport {
        dim: d,
        finite_on_box: spec.finite_on_box(per_dim),
        coercive: spec.coercivity_proxy(per_dim),
        gradient_check,
        min_covariance_eig,
        covariance_positive: min_covariance_eig > 0.0,
        ring_radius: ring_radius.f64(),
        ring_outside_box,
        n_ring_samples: ring.len(),
        snr_ratio: ratio,
        snr_threshold: threshold,
        snr_pass: ratio > threshold,
        snr_worst_point: worst,
        assumption4: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::{FnObjective, Himmelblau, Quadratic, SearchBox};

    #[test]
    fn himmelblau_passes_snr() {
        let spec = ObjectiveSpec::new(Himmelblau, SearchBox::cube(2, -6.0, 6.0)).unwrap();
        let noise = NoiseModel::gaussian(2, 4.0).unwrap();
        let r = validate_assumptions(&spec, &noise, 10.0, 720);
        // oracle: dense angular minimum of |grad f|^2 on the ring
        let oracle = (0..36_000)
            .map(|k| {
                let a = std::f64::consts::TAU * k as f64 / 36_000.0;
                norm2(&spec.grad(&[10.0 * a.cos(), 10.0 * a.sin()])) / 4.0
            })
            .fold(f64::INFINITY, f64::min);
        assert!(r.snr_pass);
        assert!((r.snr_threshold - 57.3).abs() < 0.05);
        assert!(r.snr_ratio >= oracle && r.snr_ratio < oracle * 1.01);
        assert!(r.coercive && r.finite_on_box && r.covariance_positive);
        assert!(r.gradient_check.unwrap() <= 1e-5);
        assert_eq!(r.assumption4, None);
    }

    #[test]
    fn constant_objective_fails_with_zero_ratio() {
        let spec = ObjectiveSpec::new(FnObjective::new("flat", 2, |_: &[f64]| 1.0), SearchBox::cube(2, -1.0, 1.0)).unwrap();
        let r = validate_assumptions(&spec, &NoiseModel::gaussian(2, 1.0).unwrap(), 5.0, 64);
        assert_eq!(r.snr_ratio, 0.0);
        assert!(!r.snr_pass && !r.coercive);
    }

    #[test]
    fn quadratic_ratio_is_radius_squared() {
        let spec = ObjectiveSpec::new(Quadratic::new(2), SearchBox::cube(2, -5.0, 5.0)).unwrap();
        let r = validate_assumptions(&spec, &NoiseModel::gaussian(2, 1.0).unwrap(), 20.0, 64);
        assert!((r.snr_ratio - 400.0).abs() < 1e-9);
        assert!(r.snr_pass && r.ring_outside_box);
    }
}
