//! Constant step-size SGD chains and the statistics estimated from them.

mod fit;
mod occupation;

pub use fit::{accelerated_subsample, fit_line, ground_state_rate, ldp_slope, subsample_stride, GroundStateFit, LdpBudget, LdpFit, LdpPoint, LineFit};
pub use occupation::{
    detect_visits, empirical_transition_matrix, occupation_measure, visit_sequence, wilson_interval, Neighborhoods,
    OccupationStats, TransitionEstimate, Visit, VisitDetector,
};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::linalg::norm;
use crate::noise::NoiseModel;
use crate::objective::{CriticalComponent, ObjectiveSpec};
use crate::scalar::Scalar;
use crate::{Error, Result};

/// Iterates beyond this norm abort the chain.
pub const DIVERGENCE_NORM: f64 = 1e8;

/// Starting point of every chain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Init {
    Fixed { point: Vec<f64> },
    /// Uniform over the objective's search box, drawn from the chain's stream.
    UniformBox,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SgdConfig {
    pub gamma: f64,
    pub n_steps: u64,
    pub n_chains: usize,
    pub init: Init,
    pub master_seed: u64,
    #[serde(default = "one")]
    pub record_stride: u64,
    /// Constant `G` of the iterate growth bound; the bound is checked only
    /// when it is given.
    #[serde(default)]
    pub growth_constant: Option<f64>,
    /// Upper limit on `n_steps * n_chains`.
    #[serde(default = "default_budget")]
    pub step_budget: u64,
}

fn one() -> u64 {
    1
}

fn default_budget() -> u64 {
    100_000_000_000
}

impl SgdConfig {
    pub fn new(gamma: f64, n_steps: u64, n_chains: usize, init: Init, master_seed: u64) -> Self {
        Self { gamma, n_steps, n_chains, init, master_seed, record_stride: 1, growth_constant: None, step_budget: default_budget() }
    }

    pub fn validate<T: Scalar>(&self, spec: &ObjectiveSpec<T>) -> Result<()> {
        if !(self.gamma > 0.0) || !self.gamma.is_finite() {
            return Err(Error::Config("gamma must be positive".into()));
        }
        if self.n_chains == 0 || self.record_stride == 0 {
            return Err(Error::Config("n_chains and record_stride must be at least 1".into()));
        }
        if self.n_steps.saturating_mul(self.n_chains as u64) > self.step_budget {
            return Err(Error::Config(format!("n_steps * n_chains exceeds the step budget {}", self.step_budget)));
        }
        if let Init::Fixed { point } = &self.init {
            if point.len() != spec.dim() {
                return Err(Error::Config("initial point has the wrong dimension".into()));
            }
        }
        let l = spec.lipschitz_grad_estimate.f64();
        if l > 0.0 && self.gamma >= 1.0 / (2.0 * l) {
            log::warn!("gamma = {} is not below 1/(2L) = {:.3e}", self.gamma, 1.0 / (2.0 * l));
        }
        Ok(())
    }
}

/// Generator of chain `chain_id`: the master seed selects the key and the
/// chain id the stream, so chains are independent of scheduling.
pub fn chain_rng(master_seed: u64, chain_id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(chain_id);
    rng
}

/// One SGD chain `X_{n+1} = X_n - gamma (grad f(X_n) + U_n)`, advanced in place.
pub struct SgdChain<'a, T: Scalar> {
    spec: &'a ObjectiveSpec<T>,
    noise: &'a NoiseModel<T>,
    gamma: T,
    rng: ChaCha8Rng,
    x: Vec<T>,
    g: Vec<T>,
    u: Vec<T>,
    step: u64,
    x0_norm: T,
    growth: Option<T>,
    growth_violations: u64,
}

impl<'a, T: Scalar> SgdChain<'a, T> {
    pub fn new(spec: &'a ObjectiveSpec<T>, noise: &'a NoiseModel<T>, cfg: &SgdConfig, chain_id: usize) -> Result<Self> {
        if chain_id >= cfg.n_chains {
            return Err(Error::InvalidArgument(format!("chain {chain_id} out of range ({} chains)", cfg.n_chains)));
        }
        if noise.dim() != spec.dim() {
            return Err(Error::InvalidArgument("noise and objective dimensions differ".into()));
        }
        let mut rng = chain_rng(cfg.master_seed, chain_id as u64);
        let x = match &cfg.init {
            Init::Fixed { point } => point.iter().map(|&v| T::c(v)).collect(),
            Init::UniformBox => spec.search_box.sample(&mut rng),
        };
        let d = spec.dim();
        Ok(Self {
            spec,
            noise,
            gamma: T::c(cfg.gamma),
            rng,
            x0_norm: norm(&x),
            x,
            g: vec![T::zero(); d],
            u: vec![T::zero(); d],
            step: 0,
            growth: cfg.growth_constant.map(T::c),
            growth_violations: 0,
        })
    }

    pub fn state(&self) -> &[T] {
        &self.x
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Steps at which `|X_n| > exp(2G(1+gamma) ceil(gamma n)) (1 + |X_0|)`.
    pub fn growth_violations(&self) -> u64 {
        self.growth_violations
    }

    /// Advances one step and returns the new iterate.
    #[inline]
    pub fn advance(&mut self) -> Result<&[T]> {
        self.spec.grad_into(&self.x, &mut self.g);
        let fx = if self.noise.needs_value() { self.spec.f(&self.x) } else { T::zero() };
        self.noise.sample_into(&self.x, fx, &mut self.rng, &mut self.u)?;
        for ((x, &g), &u) in self.x.iter_mut().zip(&self.g).zip(&self.u) {
            *x -= self.gamma * (g + u);
        }
        self.step += 1;
        let nx = norm(&self.x);
        if !(nx <= T::c(DIVERGENCE_NORM)) {
            return Err(Error::DivergenceGuard { step: self.step, norm: nx.f64() });
        }
        if let Some(gc) = self.growth {
            let n = T::c(self.step as f64);
            let log_bound = T::c(2.0) * gc * (T::one() + self.gamma) * (self.gamma * n).ceil() + (T::one() + self.x0_norm).ln();
            if nx.ln() > log_bound {
                self.growth_violations += 1;
            }
        }
        Ok(&self.x)
    }
}

/// Recorded iterate of a chain.
#[derive(Clone, Debug, PartialEq)]
pub struct Iterate<T> {
    pub step: u64,
    pub x: Vec<T>,
}

/// Stream of every `record_stride`-th iterate (the initial point first).
pub struct Trajectory<'a, T: Scalar> {
    chain: SgdChain<'a, T>,
    n_steps: u64,
    stride: u64,
    started: bool,
    failed: bool,
}

impl<T: Scalar> Iterator for Trajectory<'_, T> {
    type Item = Result<Iterate<T>>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        if !self.started {
            self.started = true;
            return Some(Ok(Iterate { step: 0, x: self.chain.state().to_vec() }));
        }
        if self.chain.steps_taken() + self.stride > self.n_steps {
            return None;
        }
        for _ in 0..self.stride {
            if let Err(e) = self.chain.advance() {
                self.failed = true;
                return Some(Err(e));
            }
        }
        Some(Ok(Iterate { step: self.chain.steps_taken(), x: self.chain.state().to_vec() }))
    }
}

/// Trajectory of chain `chain_id`, determined by `(master_seed, chain_id)`.
pub fn run_sgd<'a, T: Scalar>(
    spec: &'a ObjectiveSpec<T>,
    noise: &'a NoiseModel<T>,
    cfg: &SgdConfig,
    chain_id: usize,
) -> Result<Trajectory<'a, T>> {
    Ok(Trajectory { chain: SgdChain::new(spec, noise, cfg, chain_id)?, n_steps: cfg.n_steps, stride: cfg.record_stride, started: false, failed: false })
}

/// Statistics settings for [`simulate`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationOptions {
    pub eps: f64,
    #[serde(default = "default_burn_in")]
    pub burn_in_fraction: f64,
    /// Visit hysteresis radii as multiples of `eps`.
    #[serde(default = "default_eps_in")]
    pub eps_in_factor: f64,
    #[serde(default = "default_eps_out")]
    pub eps_out_factor: f64,
    /// Keep every `n`-th iterate of every chain in memory for dumping.
    #[serde(default)]
    pub keep_trajectories: Option<u64>,
}

fn default_burn_in() -> f64 {
    0.1
}
fn default_eps_in() -> f64 {
    0.5
}
fn default_eps_out() -> f64 {
    1.5
}

impl SimulationOptions {
    pub fn new(eps: f64) -> Self {
        Self { eps, burn_in_fraction: 0.1, eps_in_factor: 0.5, eps_out_factor: 1.5, keep_trajectories: None }
    }
}

/// Per-chain outcome of [`simulate`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ChainSummary {
    pub chain_id: usize,
    pub diverged_at: Option<u64>,
    pub growth_violations: u64,
    pub n_visits: usize,
}

#[derive(Clone, Debug)]
pub struct SimulationResult<T> {
    pub stats: OccupationStats,
    pub chains: Vec<ChainSummary>,
    /// Visit sequence (component ids) per chain.
    pub sequences: Vec<Vec<usize>>,
    pub trajectories: Vec<Vec<Iterate<T>>>,
}

impl<T> SimulationResult<T> {
    pub fn diverged_fraction(&self) -> f64 {
        self.chains.iter().filter(|c| c.diverged_at.is_some()).count() as f64 / self.chains.len().max(1) as f64
    }
}

/// Runs all chains in parallel, accumulating occupation counts after the
/// burn-in and visit sequences over the whole run. Diverged chains are
/// reported and left out of the statistics. Results are merged in chain
/// order, so they do not depend on the thread count.
pub fn simulate<T: Scalar>(
    spec: &ObjectiveSpec<T>,
    noise: &NoiseModel<T>,
    cfg: &SgdConfig,
    components: &[CriticalComponent<T>],
    opts: &SimulationOptions,
) -> Result<SimulationResult<T>> {
    cfg.validate(spec)?;
    let hoods = Neighborhoods::new(components, T::c(opts.eps))?;
    let burn_in = (opts.burn_in_fraction * cfg.n_steps as f64).floor() as u64;
    let (eps_in, eps_out) = (T::c(opts.eps * opts.eps_in_factor), T::c(opts.eps * opts.eps_out_factor));
    let per_chain: Vec<Result<(OccupationStats, ChainSummary, Vec<usize>, Vec<Iterate<T>>)>> = (0..cfg.n_chains)
        .into_par_iter()
        .map(|c| {
            let mut chain = SgdChain::new(spec, noise, cfg, c)?;
            let mut stats = OccupationStats::empty(opts.eps, components.len());
            let mut visits = VisitDetector::new(&hoods, eps_in, eps_out);
            let mut kept = Vec::new();
            let mut prev = chain.state().to_vec();
            visits.observe(0, None, &prev);
            if burn_in == 0 {
                stats.record(hoods.locate(&prev));
            }
            if let Some(s) = opts.keep_trajectories {
                kept.push(Iterate { step: 0, x: prev.clone() });
                debug_assert!(s > 0);
            }
            let mut diverged_at = None;
            for n in 1..=cfg.n_steps {
                match chain.advance() {
                    Ok(x) => {
                        visits.observe(n, Some(&prev), x);
                        if n >= burn_in && n % cfg.record_stride == 0 {
                            stats.record(hoods.locate(x));
                        }
                        if opts.keep_trajectories.is_some_and(|s| n % s == 0) {
                            kept.push(Iterate { step: n, x: x.to_vec() });
                        }
                        prev.copy_from_slice(x);
                    }
                    Err(Error::DivergenceGuard { step, .. }) => {
                        diverged_at = Some(step);
                        break;
                    }
                    Err(e) => return Err(e),
                }
            }
            let seq = visits.sequence();
            let summary = ChainSummary { chain_id: c, diverged_at, growth_violations: chain.growth_violations(), n_visits: seq.len() };
            if diverged_at.is_some() {
                stats = OccupationStats::empty(opts.eps, components.len());
            } else {
                stats.n_chains_contributing = 1;
                stats.add_sequence(&seq);
            }
            Ok((stats, summary, seq, kept))
        })
        .collect();
    let mut total = OccupationStats::empty(opts.eps, components.len());
    let mut chains = Vec::with_capacity(cfg.n_chains);
    let mut sequences = Vec::with_capacity(cfg.n_chains);
    let mut trajectories = Vec::new();
    for r in per_chain {
        let (s, summary, seq, kept) = r?;
        total.merge(&s);
        chains.push(summary);
        sequences.push(seq);
        if opts.keep_trajectories.is_some() {
            trajectories.push(kept);
        }
    }
    total.eps_in = opts.eps * opts.eps_in_factor;
    total.eps_out = opts.eps * opts.eps_out_factor;
    Ok(SimulationResult { stats: total, chains, sequences, trajectories })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::{Quadratic, SearchBox};

    fn quad() -> ObjectiveSpec<f64> {
        ObjectiveSpec::new(Quadratic::new(1), SearchBox::cube(1, -2.0, 2.0)).unwrap()
    }

    #[test]
    fn zero_noise_is_gradient_descent() {
        let spec = quad();
        let noise = NoiseModel::Zero { dim: 1 };
        let cfg = SgdConfig::new(0.1, 50, 1, Init::Fixed { point: vec![1.0] }, 7);
        let xs: Vec<f64> = run_sgd(&spec, &noise, &cfg, 0).unwrap().map(|r| r.unwrap().x[0]).collect();
        assert_eq!(xs.len(), 51);
        let mut oracle = 1.0f64;
        for (n, x) in xs.iter().enumerate() {
            assert_eq!(*x, oracle, "step {n}");
            assert!((x - 0.9f64.powi(n as i32)).abs() <= 1e-14 * 0.9f64.powi(n as i32));
            oracle -= 0.1 * oracle;
        }
    }

    #[test]
    fn chains_are_reproducible_and_distinct() {
        let spec = quad();
        let noise = NoiseModel::gaussian(1, 1.0).unwrap();
        let cfg = SgdConfig { record_stride: 3, ..SgdConfig::new(0.05, 300, 2, Init::UniformBox, 11) };
        let a: Vec<_> = run_sgd(&spec, &noise, &cfg, 1).unwrap().map(|r| r.unwrap()).collect();
        let b: Vec<_> = run_sgd(&spec, &noise, &cfg, 1).unwrap().map(|r| r.unwrap()).collect();
        let c: Vec<_> = run_sgd(&spec, &noise, &cfg, 0).unwrap().map(|r| r.unwrap()).collect();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.len(), 101);
        assert_eq!(a[1].step, 3);
        assert!(run_sgd(&spec, &noise, &cfg, 2).is_err());
    }

    #[test]
    fn divergence_guard_trips() {
        let spec = quad();
        let noise = NoiseModel::Zero { dim: 1 };
        // gamma = 3 gives X_{n+1} = -2 X_n
        let cfg = SgdConfig::new(3.0, 100, 1, Init::Fixed { point: vec![1.0] }, 0);
        let last = run_sgd(&spec, &noise, &cfg, 0).unwrap().last().unwrap();
        assert!(matches!(last, Err(Error::DivergenceGuard { step: 27, .. })));
    }

    #[test]
    fn growth_bound_holds_for_bounded_noise() {
        let spec = quad();
        let noise = NoiseModel::truncated_gaussian(1, 1.0, 3.0).unwrap();
        let cfg = SgdConfig { growth_constant: Some(1.0), ..SgdConfig::new(0.1, 10_000, 1, Init::Fixed { point: vec![1.5] }, 3) };
        let mut chain = SgdChain::new(&spec, &noise, &cfg, 0).unwrap();
        for _ in 0..10_000 {
            chain.advance().unwrap();
        }
        assert_eq!(chain.growth_violations(), 0);
    }

    #[test]
    fn simulate_conserves_counts() {
        let spec = ObjectiveSpec::new(crate::objective::DoubleWell, SearchBox::cube(1, -2.0, 2.0)).unwrap();
        let comps = crate::objective::CriticalOptions::default().run(&spec).unwrap();
        let noise = NoiseModel::gaussian(1, 1.0).unwrap();
        let cfg = SgdConfig::new(0.05, 20_000, 4, Init::UniformBox, 5);
        let r = simulate(&spec, &noise, &cfg, &comps, &SimulationOptions::new(0.25)).unwrap();
        let s = &r.stats;
        assert_eq!(s.counts.iter().sum::<u64>() + s.outside, s.total);
        assert_eq!(s.total, 4 * (20_000 - 2000 + 1));
        let f: f64 = s.fractions().iter().sum::<f64>() + s.outside_fraction();
        assert!((f - 1.0).abs() < 1e-12);
        assert_eq!(s.n_chains_contributing, 4);
        let again = simulate(&spec, &noise, &cfg, &comps, &SimulationOptions::new(0.25)).unwrap();
        assert_eq!(again.stats, r.stats);
    }
}
