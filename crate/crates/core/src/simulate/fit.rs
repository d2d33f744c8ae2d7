use serde::{Deserialize, Serialize};

use super::{simulate, Init, SgdConfig, SimulationOptions};
use crate::noise::NoiseModel;
use crate::objective::{CriticalComponent, ObjectiveSpec};
use crate::scalar::Scalar;
use crate::{Error, Result};

/// Ordinary least-squares line `y = slope * x + intercept`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    /// Standard error of the slope; absent for an exact two-point fit.
    pub slope_stderr: Option<f64>,
    pub n: usize,
}

pub fn fit_line(xs: &[f64], ys: &[f64]) -> Result<LineFit> {
    let n = xs.len();
    if n != ys.len() {
        return Err(Error::InvalidArgument("x and y lengths differ".into()));
    }
    if n < 2 {
        return Err(Error::InvalidArgument("a line fit needs at least two points".into()));
    }
    let nf = n as f64;
    let mx = xs.iter().sum::<f64>() / nf;
    let my = ys.iter().sum::<f64>() / nf;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if !(sxx > 0.0) {
        return Err(Error::InvalidArgument("x values must not all coincide".into()));
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let slope_stderr = (n > 2).then(|| {
        let rss: f64 = xs.iter().zip(ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
        (rss / (nf - 2.0) / sxx).sqrt()
    });
    Ok(LineFit { slope, intercept, slope_stderr, n })
}

/// `floor(1/gamma)`, the stride of the accelerated process.
pub fn subsample_stride(gamma: f64) -> Result<u64> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::InvalidArgument(format!("accelerated subsampling needs 0 < gamma < 1, got {gamma}")));
    }
    // the small offset keeps exact reciprocals such as 1/0.01 from rounding down
    Ok((1.0 / gamma + 1e-9).floor() as u64)
}

/// Every `floor(1/gamma)`-th element, starting with the first.
pub fn accelerated_subsample<X: Clone>(trajectory: &[X], gamma: f64) -> Result<Vec<X>> {
    let stride = subsample_stride(gamma)? as usize;
    Ok(trajectory.iter().step_by(stride).cloned().collect())
}

/// Simulation budget spent on each step size of an LDP sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LdpBudget {
    pub n_steps: u64,
    pub n_chains: usize,
    pub init: Init,
    pub master_seed: u64,
    pub eps: f64,
    #[serde(default = "half")]
    pub eps_in_factor: f64,
    #[serde(default = "three_halves")]
    pub eps_out_factor: f64,
    #[serde(default = "min_count")]
    pub min_transitions: u64,
}

fn half() -> f64 {
    0.5
}
fn three_halves() -> f64 {
    1.5
}
fn min_count() -> u64 {
    10
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LdpPoint {
    pub gamma: f64,
    /// Completed visits to `i` (departures).
    pub departures: u64,
    /// Departures whose next visit was `j`.
    pub hits: u64,
    pub p_hat: f64,
    pub included: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LdpFit {
    pub pair: (usize, usize),
    pub points: Vec<LdpPoint>,
    /// Fit of `log p_hat` against `1/gamma`; the slope estimates `-Q_ij`.
    pub fit: LineFit,
    pub warnings: Vec<String>,
}

/// Next-visit probabilities `i -> j` over a sweep of step sizes, fitted on
/// the log scale against `1/gamma`. Step sizes with fewer than
/// `min_transitions` observed `i -> j` transitions are reported and left out.
pub fn ldp_slope<T: Scalar>(
    spec: &ObjectiveSpec<T>,
    noise: &NoiseModel<T>,
    components: &[CriticalComponent<T>],
    gammas: &[f64],
    budget: &LdpBudget,
    pair: (usize, usize),
) -> Result<LdpFit> {
    if gammas.len() < 3 {
        return Err(Error::InvalidArgument(format!("ldp_slope needs at least 3 step sizes, got {}", gammas.len())));
    }
    let (i, j) = pair;
    if i >= components.len() || j >= components.len() {
        return Err(Error::InvalidArgument("pair index out of range".into()));
    }
    let opts = SimulationOptions {
        eps_in_factor: budget.eps_in_factor,
        eps_out_factor: budget.eps_out_factor,
        burn_in_fraction: 0.0,
        ..SimulationOptions::new(budget.eps)
    };
    let mut points = Vec::with_capacity(gammas.len());
    let mut warnings = Vec::new();
    for (g_idx, &gamma) in gammas.iter().enumerate() {
        let mut cfg = SgdConfig::new(gamma, budget.n_steps, budget.n_chains, budget.init.clone(), budget.master_seed.wrapping_add(g_idx as u64));
        cfg.record_stride = 1;
        let res = simulate(spec, noise, &cfg, components, &opts)?;
        let departures: u64 = res.stats.transitions[i].iter().sum();
        let hits = res.stats.transitions[i][j];
        let included = hits >= budget.min_transitions;
        if !included {
            let msg = Error::InsufficientTransitions(format!("gamma = {gamma}: {hits} transitions {i} -> {j}")).to_string();
            log::warn!("{msg}");
            warnings.push(msg);
        }
        let p_hat = if departures == 0 { 0.0 } else { hits as f64 / departures as f64 };
        points.push(LdpPoint { gamma, departures, hits, p_hat, included });
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = points.iter().filter(|p| p.included).map(|p| (1.0 / p.gamma, p.p_hat.ln())).unzip();
    if xs.len() < 2 {
        return Err(Error::InsufficientTransitions(format!("only {} step sizes with enough {i} -> {j} transitions", xs.len())));
    }
    let fit = fit_line(&xs, &ys)?;
    Ok(LdpFit { pair, points, fit, warnings })
}

/// Rate `c` in `mass(ground state) >= 1 - exp(-c/gamma)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundStateFit {
    /// Minus the slope of `log(1 - mass)` against `1/gamma`.
    pub c_fit: Option<f64>,
    /// Largest `c` for which the bound holds at every step size,
    /// `min_gamma -gamma log(1 - mass)`.
    pub c_bound: f64,
    pub fit: Option<LineFit>,
}

pub fn ground_state_rate(gammas: &[f64], ground_mass: &[f64]) -> Result<GroundStateFit> {
    if gammas.len() != ground_mass.len() || gammas.is_empty() {
        return Err(Error::InvalidArgument("need matching, non-empty gamma and mass lists".into()));
    }
    let c_bound = gammas.iter().zip(ground_mass).map(|(g, m)| -g * (1.0 - m).ln()).fold(f64::INFINITY, f64::min);
    // a step size with no mass outside the ground state says nothing about the slope
    let (xs, ys): (Vec<f64>, Vec<f64>) =
        gammas.iter().zip(ground_mass).filter(|(_, &m)| m < 1.0).map(|(g, m)| (1.0 / g, (1.0 - m).ln())).unzip();
    let fit = if xs.len() >= 2 { Some(fit_line(&xs, &ys)?) } else { None };
    Ok(GroundStateFit { c_fit: fit.as_ref().map(|f| -f.slope), c_bound, fit })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_fit_recovers_exact_line() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let ys: Vec<f64> = xs.iter().map(|x| -2.0 * x + 0.5).collect();
        let f = fit_line(&xs, &ys).unwrap();
        assert!((f.slope + 2.0).abs() < 1e-12 && (f.intercept - 0.5).abs() < 1e-12);
        assert!(f.slope_stderr.unwrap() < 1e-12);
        assert!(fit_line(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn slope_stderr_matches_hand_computation() {
        // y = 0, 1, 1, 3 at x = 0..3: slope 0.9, intercept -0.1, residuals 0.1, 0.2, -0.7, 0.4
        let f = fit_line(&[0.0, 1.0, 2.0, 3.0], &[0.0, 1.0, 1.0, 3.0]).unwrap();
        assert!((f.slope - 0.9).abs() < 1e-12 && (f.intercept + 0.1).abs() < 1e-12);
        let oracle = (0.7f64 / 2.0 / 5.0).sqrt();
        assert!((f.slope_stderr.unwrap() - oracle).abs() < 1e-12);
    }

    #[test]
    fn strides() {
        assert_eq!(subsample_stride(0.01).unwrap(), 100);
        assert_eq!(subsample_stride(0.3).unwrap(), 3);
        assert_eq!(subsample_stride(1.0 / 7.0).unwrap(), 7);
        assert!(subsample_stride(1.0).is_err());
        let v: Vec<u32> = (0..10).collect();
        assert_eq!(accelerated_subsample(&v, 0.3).unwrap(), vec![0, 3, 6, 9]);
    }

    #[test]
    fn ground_state_rate_on_exact_law() {
        let gammas = [0.1, 0.05, 0.04];
        let mass: Vec<f64> = gammas.iter().map(|g| 1.0 - 0.3 * (-0.2f64 / g).exp()).collect();
        let r = ground_state_rate(&gammas, &mass).unwrap();
        assert!((r.c_fit.unwrap() - 0.2).abs() < 1e-9);
        // -gamma log(0.3 e^{-0.2/gamma}) = 0.2 - gamma ln 0.3, smallest at the smallest gamma
        assert!((r.c_bound - (0.2 - 0.04 * 0.3f64.ln())).abs() < 1e-12);
    }
}
