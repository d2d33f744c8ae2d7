//! Zero-mean gradient noise: samplers and cumulant generating functions.
//!
//! Every query takes the point `x` together with `fx = f(x)`; only the
//! affine-in-`f` Gaussian variance reads `fx`.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;
use statrs::function::gamma::gamma_lr;

use crate::linalg::{dot, mat_vec, norm, norm2};
use crate::scalar::Scalar;
use crate::{Error, Result};

/// Smallest admissible acceptance rate of the truncated-Gaussian rejection sampler.
pub const MIN_ACCEPTANCE: f64 = 1e-6;

/// Isotropic variance, constant or `a * f(x) + b`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Variance<T> {
    Constant(T),
    Affine { a: T, b: T },
}

impl<T: Scalar> Variance<T> {
    pub fn at(&self, fx: T) -> T {
        match *self {
            Variance::Constant(s) => s,
            Variance::Affine { a, b } => a * fx + b,
        }
    }
}

/// One finite-sum error map `x -> offset + linear x` (`linear` row-major).
#[derive(Clone, Debug, PartialEq)]
pub struct AffineErr<T> {
    pub offset: Vec<T>,
    pub linear: Option<Vec<T>>,
}

impl<T: Scalar> AffineErr<T> {
    pub fn constant(offset: Vec<T>) -> Self {
        Self { offset, linear: None }
    }

    fn eval(&self, x: &[T]) -> Vec<T> {
        match &self.linear {
            None => self.offset.clone(),
            Some(a) => {
                let ax = mat_vec(a, x);
                self.offset.iter().zip(ax).map(|(&o, v)| o + v).collect()
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum NoiseModel<T> {
    /// Deterministic oracle; used for gradient-descent limits.
    Zero { dim: usize },
    Gaussian { dim: usize, variance: Variance<T> },
    /// `N(0, sigma2 I)` conditioned on the ball of radius `radius`.
    TruncatedGaussian { dim: usize, sigma2: T, radius: T },
    /// Centered error maps; a draw is the mean over `batch` maps picked
    /// uniformly without replacement.
    FiniteSum { dim: usize, errs: Vec<AffineErr<T>>, batch: usize },
}

/// How a CGF value was obtained.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Estimator {
    Exact,
    MonteCarlo { n: usize, ci_half_width: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CgfValue<T> {
    pub value: T,
    pub estimator: Estimator,
}

impl<T: Scalar> CgfValue<T> {
    fn exact(value: T) -> Self {
        Self { value, estimator: Estimator::Exact }
    }

    pub fn ci_half_width(&self) -> f64 {
        match self.estimator {
            Estimator::Exact => 0.0,
            Estimator::MonteCarlo { ci_half_width, .. } => ci_half_width,
        }
    }
}

/// Sample budget and seed for Monte-Carlo CGF estimates.
#[derive(Clone, Copy, Debug)]
pub struct CgfOptions {
    pub n_mc: usize,
    pub seed: u64,
}

impl Default for CgfOptions {
    fn default() -> Self {
        Self { n_mc: 100_000, seed: 0x0c6f_5eed }
    }
}

const Z95: f64 = 1.959963984540054;
const MAX_ENUMERATION: u128 = 100_000;

fn binomial(n: usize, k: usize) -> u128 {
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc.saturating_mul((n - i) as u128) / (i as u128 + 1))
}

/// `P(chi^2_k <= x)`, with `k = 0` the point mass at zero.
pub(crate) fn chi2_cdf(k: usize, x: f64) -> f64 {
    if x <= 0.0 {
        return if k == 0 { 1.0 } else { 0.0 };
    }
    if k == 0 {
        return 1.0;
    }
    gamma_lr(k as f64 / 2.0, x / 2.0)
}

impl<T: Scalar> NoiseModel<T> {
    pub fn gaussian(dim: usize, sigma2: T) -> Result<Self> {
        if !(sigma2 > T::zero()) {
            return Err(Error::InvalidArgument("gaussian sigma2 must be positive".into()));
        }
        Ok(Self::Gaussian { dim, variance: Variance::Constant(sigma2) })
    }

    pub fn gaussian_affine(dim: usize, a: T, b: T) -> Self {
        Self::Gaussian { dim, variance: Variance::Affine { a, b } }
    }

    pub fn truncated_gaussian(dim: usize, sigma2: T, radius: T) -> Result<Self> {
        if !(sigma2 > T::zero()) || !(radius > T::zero()) {
            return Err(Error::InvalidArgument("truncated gaussian needs sigma2 > 0 and radius > 0".into()));
        }
        let acc = chi2_cdf(dim, (radius * radius / sigma2).f64());
        if acc < MIN_ACCEPTANCE {
            return Err(Error::RejectionStall(acc));
        }
        Ok(Self::TruncatedGaussian { dim, sigma2, radius })
    }

    /// Centers the maps so that they sum to zero at every point.
    pub fn finite_sum(errs: Vec<AffineErr<T>>, batch: usize) -> Result<Self> {
        let n = errs.len();
        if n == 0 {
            return Err(Error::EmptyInput("finite-sum noise needs at least one error map"));
        }
        if batch == 0 || batch > n {
            return Err(Error::InvalidArgument(format!("batch must be in 1..={n}")));
        }
        let dim = errs[0].offset.len();
        if errs.iter().any(|e| e.offset.len() != dim || e.linear.as_ref().is_some_and(|a| a.len() != dim * dim)) {
            return Err(Error::InvalidArgument("finite-sum maps must share one dimension".into()));
        }
        let inv = T::one() / T::of_usize(n);
        let mean_off: Vec<T> = (0..dim).map(|i| errs.iter().map(|e| e.offset[i]).sum::<T>() * inv).collect();
        let any_linear = errs.iter().any(|e| e.linear.is_some());
        let mean_lin: Option<Vec<T>> = any_linear.then(|| {
            (0..dim * dim)
                .map(|k| errs.iter().map(|e| e.linear.as_ref().map_or(T::zero(), |a| a[k])).sum::<T>() * inv)
                .collect()
        });
        let errs = errs
            .into_iter()
            .map(|e| AffineErr {
                offset: e.offset.iter().zip(&mean_off).map(|(&o, &m)| o - m).collect(),
                linear: mean_lin.as_ref().map(|ml| {
                    let a = e.linear.unwrap_or_else(|| vec![T::zero(); dim * dim]);
                    a.iter().zip(ml).map(|(&v, &m)| v - m).collect()
                }),
            })
            .collect();
        Ok(Self::FiniteSum { dim, errs, batch })
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Zero { dim } | Self::Gaussian { dim, .. } | Self::TruncatedGaussian { dim, .. } | Self::FiniteSum { dim, .. } => *dim,
        }
    }

    /// Whether draws depend on `f(x)`; callers may skip evaluating it otherwise.
    pub fn needs_value(&self) -> bool {
        matches!(self, Self::Gaussian { variance: Variance::Affine { .. }, .. })
    }

    pub fn is_gaussian(&self) -> bool {
        matches!(self, Self::Gaussian { .. })
    }

    /// `sigma^2(x)` of an isotropic Gaussian model.
    pub fn gaussian_variance(&self, fx: T) -> Option<T> {
        match self {
            Self::Gaussian { variance, .. } => Some(variance.at(fx)),
            _ => None,
        }
    }

    /// Finite-sum error vectors at `x` (they sum to zero).
    pub fn errs_at(&self, x: &[T]) -> Vec<Vec<T>> {
        match self {
            Self::FiniteSum { errs, .. } => errs.iter().map(|e| e.eval(x)).collect(),
            _ => Vec::new(),
        }
    }

    /// Sub-Gaussian variance proxy at `x`. Bounded finite-sum errors use the
    /// Hoeffding proxy `max_i |err_i(x)|^2`.
    pub fn variance_proxy(&self, x: &[T], fx: T) -> T {
        match self {
            Self::Zero { .. } => T::zero(),
            Self::Gaussian { variance, .. } => variance.at(fx),
            Self::TruncatedGaussian { sigma2, .. } => *sigma2,
            Self::FiniteSum { .. } => self.errs_at(x).iter().map(|e| norm2(e)).fold(T::zero(), T::max),
        }
    }

    /// Covariance matrix (row-major) of one draw at `x`.
    pub fn covariance(&self, x: &[T], fx: T) -> Vec<T> {
        let d = self.dim();
        let mut c = vec![T::zero(); d * d];
        let iso = |c: &mut Vec<T>, s: T| {
            for i in 0..d {
                c[i * d + i] = s;
            }
        };
        match self {
            Self::Zero { .. } => {}
            Self::Gaussian { variance, .. } => iso(&mut c, variance.at(fx)),
            Self::TruncatedGaussian { sigma2, radius, .. } => {
                let r = RadialTable::shared(sigma2.f64(), radius.f64(), d);
                iso(&mut c, T::c(r.second_moment(0.0)));
            }
            Self::FiniteSum { errs, batch, .. } => {
                let n = errs.len();
                let e = self.errs_at(x);
                let fpc = if n > 1 {
                    T::of_usize(n - batch) / (T::of_usize(n - 1) * T::of_usize(*batch))
                } else {
                    T::zero()
                };
                for v in &e {
                    for i in 0..d {
                        for j in 0..d {
                            c[i * d + j] += v[i] * v[j] / T::of_usize(n) * fpc;
                        }
                    }
                }
            }
        }
        c
    }

    /// One noise draw into `out`.
    pub fn sample_into<R: Rng + ?Sized>(&self, x: &[T], fx: T, rng: &mut R, out: &mut [T]) -> Result<()> {
        match self {
            Self::Zero { .. } => out.iter_mut().for_each(|v| *v = T::zero()),
            Self::Gaussian { variance, .. } => {
                let s2 = variance.at(fx);
                if !(s2 > T::zero()) {
                    return Err(Error::NonPositiveVariance(s2.f64()));
                }
                let s = s2.sqrt();
                for v in out.iter_mut() {
                    let z: f64 = StandardNormal.sample(rng);
                    *v = s * T::c(z);
                }
            }
            Self::TruncatedGaussian { sigma2, radius, .. } => {
                let s = sigma2.sqrt();
                let r2 = *radius * *radius;
                let max_tries = (1.0 / MIN_ACCEPTANCE) as usize;
                let mut accepted = false;
                for _ in 0..max_tries {
                    for v in out.iter_mut() {
                        let z: f64 = StandardNormal.sample(rng);
                        *v = s * T::c(z);
                    }
                    if norm2(out) <= r2 {
                        accepted = true;
                        break;
                    }
                }
                if !accepted {
                    return Err(Error::RejectionStall(1.0 / max_tries as f64));
                }
            }
            Self::FiniteSum { errs, batch, .. } => {
                out.iter_mut().for_each(|v| *v = T::zero());
                let idx = rand::seq::index::sample(rng, errs.len(), *batch);
                for i in idx.iter() {
                    let e = errs[i].eval(x);
                    for (o, v) in out.iter_mut().zip(e) {
                        *o += v;
                    }
                }
                let inv = T::one() / T::of_usize(*batch);
                out.iter_mut().for_each(|v| *v *= inv);
            }
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, x: &[T], fx: T, rng: &mut R) -> Result<Vec<T>> {
        let mut out = vec![T::zero(); self.dim()];
        self.sample_into(x, fx, rng, &mut out)?;
        Ok(out)
    }

    /// `log E exp(<p, err(x)>)`.
    ///
    /// Exact for Gaussian and for finite sums whose batch count
    /// `C(N, batch)` is at most 1e5; Monte Carlo otherwise. The truncated
    /// Gaussian uses the tilting identity
    /// `sigma2 |p|^2 / 2 + log P(|Z + sigma2 p| <= R) - log P(|Z| <= R)`
    /// with the two probabilities estimated on common draws `Z ~ N(0, sigma2 I)`.
    pub fn cgf(&self, x: &[T], fx: T, p: &[T], opts: CgfOptions) -> CgfValue<T> {
        if p.iter().all(|v| *v == T::zero()) {
            return CgfValue::exact(T::zero());
        }
        match self {
            Self::Zero { .. } => CgfValue::exact(T::zero()),
            Self::Gaussian { variance, .. } => CgfValue::exact(variance.at(fx) * norm2(p) * T::c(0.5)),
            Self::TruncatedGaussian { dim, sigma2, radius } => {
                let (value, half) = truncated_cgf_mc(*dim, sigma2.f64(), radius.f64(), &p.iter().map(|v| v.f64()).collect::<Vec<_>>(), opts);
                CgfValue { value: T::c(value), estimator: Estimator::MonteCarlo { n: opts.n_mc, ci_half_width: half } }
            }
            Self::FiniteSum { errs, batch, .. } => {
                if binomial(errs.len(), *batch) <= MAX_ENUMERATION {
                    let atoms = self.batch_atoms(x).expect("enumerable");
                    CgfValue::exact(log_mean_exp(&atoms, p).0)
                } else {
                    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
                    let zs: Vec<f64> = (0..opts.n_mc)
                        .map(|_| {
                            let draw = self.sample(x, fx, &mut rng).expect("finite-sum sampling is infallible");
                            dot(p, &draw).f64()
                        })
                        .collect();
                    let m = zs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let w: Vec<f64> = zs.iter().map(|z| (z - m).exp()).collect();
                    let n = w.len() as f64;
                    let mean = w.iter().sum::<f64>() / n;
                    let var = w.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0).max(1.0);
                    let half = Z95 * (var / n).sqrt() / mean;
                    CgfValue { value: T::c(m + mean.ln()), estimator: Estimator::MonteCarlo { n: opts.n_mc, ci_half_width: half } }
                }
            }
        }
    }

    /// All equally likely minibatch means at `x`, when there are at most 1e5.
    pub fn batch_atoms(&self, x: &[T]) -> Option<Vec<Vec<T>>> {
        let Self::FiniteSum { errs, batch, dim } = self else { return None };
        let n = errs.len();
        if binomial(n, *batch) > MAX_ENUMERATION {
            return None;
        }
        let e = self.errs_at(x);
        if *batch == 1 {
            return Some(e);
        }
        let inv = T::one() / T::of_usize(*batch);
        let mut atoms = Vec::new();
        let mut idx: Vec<usize> = (0..*batch).collect();
        loop {
            let mut m = vec![T::zero(); *dim];
            for &i in &idx {
                for (a, &v) in m.iter_mut().zip(&e[i]) {
                    *a += v * inv;
                }
            }
            atoms.push(m);
            // next combination in lexicographic order
            let mut k = *batch;
            loop {
                if k == 0 {
                    return Some(atoms);
                }
                k -= 1;
                if idx[k] != k + n - *batch {
                    break;
                }
                if k == 0 && idx[0] == n - *batch {
                    return Some(atoms);
                }
            }
            idx[k] += 1;
            for j in k + 1..*batch {
                idx[j] = idx[j - 1] + 1;
            }
        }
    }

    /// Smooth CGF at `x` with derivatives in `p`, used for numerical
    /// conjugation. The truncated Gaussian is reduced to a one-dimensional
    /// quadrature over the first coordinate by rotation invariance.
    pub fn local_cgf(&self, x: &[T], fx: T) -> Result<LocalCgf<T>> {
        Ok(match self {
            Self::Zero { .. } => LocalCgf::Quadratic { s2: T::zero() },
            Self::Gaussian { variance, .. } => {
                let s2 = variance.at(fx);
                if !(s2 > T::zero()) {
                    return Err(Error::NonPositiveVariance(s2.f64()));
                }
                LocalCgf::Quadratic { s2 }
            }
            Self::TruncatedGaussian { dim, sigma2, radius } => {
                LocalCgf::Radial(RadialTable::shared(sigma2.f64(), radius.f64(), *dim))
            }
            Self::FiniteSum { .. } => match self.batch_atoms(x) {
                Some(a) => LocalCgf::Atoms(a),
                None => {
                    // fixed minibatch sample as an empirical law
                    let mut rng = ChaCha8Rng::seed_from_u64(CgfOptions::default().seed);
                    let n = MAX_ENUMERATION as usize;
                    LocalCgf::Atoms((0..n).map(|_| self.sample(x, fx, &mut rng)).collect::<Result<_>>()?)
                }
            },
        })
    }
}

/// `(log mean_k exp(<p, a_k>), softmax weights)`
fn log_mean_exp<T: Scalar>(atoms: &[Vec<T>], p: &[T]) -> (T, Vec<T>) {
    let z: Vec<T> = atoms.iter().map(|a| dot(a, p)).collect();
    let m = z.iter().cloned().fold(T::neg_infinity(), T::max);
    let w: Vec<T> = z.iter().map(|&v| (v - m).exp()).collect();
    let s: T = w.iter().cloned().sum();
    let value = m + (s / T::of_usize(atoms.len())).ln();
    (value, w.into_iter().map(|v| v / s).collect())
}

fn truncated_cgf_mc(dim: usize, sigma2: f64, radius: f64, p: &[f64], opts: CgfOptions) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let s = sigma2.sqrt();
    let r2 = radius * radius;
    let shift: Vec<f64> = p.iter().map(|v| sigma2 * v).collect();
    let (mut n0, mut n1, mut n01) = (0usize, 0usize, 0usize);
    let mut z = vec![0.0; dim];
    for _ in 0..opts.n_mc {
        for v in z.iter_mut() {
            let g: f64 = StandardNormal.sample(&mut rng);
            *v = s * g;
        }
        let in0 = z.iter().map(|v| v * v).sum::<f64>() <= r2;
        let in1 = z.iter().zip(&shift).map(|(v, m)| (v + m) * (v + m)).sum::<f64>() <= r2;
        n0 += in0 as usize;
        n1 += in1 as usize;
        n01 += (in0 && in1) as usize;
    }
    let n = opts.n_mc as f64;
    let (p0, p1, p01) = (n0 as f64 / n, n1 as f64 / n, n01 as f64 / n);
    let gauss = 0.5 * sigma2 * p.iter().map(|v| v * v).sum::<f64>();
    let value = gauss + p1.ln() - p0.ln();
    // delta method for log p1 - log p0 on common draws
    let var = (p1 * (1.0 - p1) / (p1 * p1) + p0 * (1.0 - p0) / (p0 * p0) - 2.0 * (p01 - p0 * p1) / (p0 * p1)) / n;
    (value, Z95 * var.max(0.0).sqrt())
}

/// Precomputed quadrature for the first-coordinate marginal of a truncated
/// isotropic Gaussian: density proportional to
/// `exp(-y^2 / (2 sigma2)) * P(chi^2_{d-1} <= (R^2 - y^2) / sigma2)` on `[-R, R]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RadialTable {
    ys: Vec<f64>,
    log_w: Vec<f64>,
    log_norm: f64,
}

impl RadialTable {
    const PANELS: usize = 4000;

    pub fn new(sigma2: f64, radius: f64, dim: usize) -> Self {
        let n = Self::PANELS;
        let h = 2.0 * radius / n as f64;
        let mut ys = Vec::with_capacity(n + 1);
        let mut log_w = Vec::with_capacity(n + 1);
        for j in 0..=n {
            let y = -radius + h * j as f64;
            let simpson = if j == 0 || j == n { 1.0 } else if j % 2 == 1 { 4.0 } else { 2.0 };
            let tail = chi2_cdf(dim - 1, ((radius * radius - y * y) / sigma2).max(0.0));
            ys.push(y);
            log_w.push((simpson * h / 3.0).ln() - y * y / (2.0 * sigma2) + tail.ln());
        }
        let log_norm = lse(log_w.iter().copied());
        Self { ys, log_w, log_norm }
    }

    /// Table for `(sigma2, radius, dim)`, built once per process.
    pub fn shared(sigma2: f64, radius: f64, dim: usize) -> Arc<Self> {
        type Cache = Mutex<HashMap<(u64, u64, usize), Arc<RadialTable>>>;
        static CACHE: OnceLock<Cache> = OnceLock::new();
        let key = (sigma2.to_bits(), radius.to_bits(), dim);
        let cache = CACHE.get_or_init(Default::default);
        if let Some(t) = cache.lock().expect("radial table cache poisoned").get(&key) {
            return Arc::clone(t);
        }
        let table = Arc::new(Self::new(sigma2, radius, dim));
        Arc::clone(cache.lock().expect("radial table cache poisoned").entry(key).or_insert(table))
    }

    /// `(log M(r), M'(r)/M(r), M''(r)/M(r))` for `M(r) = E exp(r Y_1)`.
    pub fn moments(&self, r: f64) -> (f64, f64, f64) {
        let lz: Vec<f64> = self.ys.iter().zip(&self.log_w).map(|(y, w)| w + r * y).collect();
        let m = lz.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let (mut s0, mut s1, mut s2) = (0.0, 0.0, 0.0);
        for (y, l) in self.ys.iter().zip(&lz) {
            let w = (l - m).exp();
            s0 += w;
            s1 += w * y;
            s2 += w * y * y;
        }
        (m + s0.ln() - self.log_norm, s1 / s0, s2 / s0)
    }

    /// `E[Y_1^2]` under the tilt `r`.
    pub fn second_moment(&self, r: f64) -> f64 {
        self.moments(r).2
    }
}

fn lse(it: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = it.clone().fold(f64::NEG_INFINITY, f64::max);
    m + it.map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// A CGF `p -> H(p)` at a fixed point, with gradient and Hessian.
#[derive(Clone, Debug)]
pub enum LocalCgf<T> {
    /// `s2 |p|^2 / 2`
    Quadratic { s2: T },
    /// log-mean-exp over equally likely atoms
    Atoms(Vec<Vec<T>>),
    Radial(Arc<RadialTable>),
}

impl<T: Scalar> LocalCgf<T> {
    pub fn value(&self, p: &[T]) -> T {
        match self {
            Self::Quadratic { s2 } => *s2 * norm2(p) * T::c(0.5),
            Self::Atoms(a) => log_mean_exp(a, p).0,
            Self::Radial(t) => T::c(t.moments(norm(p).f64()).0),
        }
    }

    /// `(H(p), grad H(p), hess H(p))`, Hessian row-major.
    pub fn eval(&self, p: &[T]) -> (T, Vec<T>, Vec<T>) {
        let d = p.len();
        match self {
            Self::Quadratic { s2 } => {
                let mut h = vec![T::zero(); d * d];
                for i in 0..d {
                    h[i * d + i] = *s2;
                }
                (*s2 * norm2(p) * T::c(0.5), p.iter().map(|&v| *s2 * v).collect(), h)
            }
            Self::Atoms(atoms) => {
                let (value, w) = log_mean_exp(atoms, p);
                let mut g = vec![T::zero(); d];
                let mut h = vec![T::zero(); d * d];
                for (a, &wk) in atoms.iter().zip(&w) {
                    for i in 0..d {
                        g[i] += wk * a[i];
                        for j in 0..d {
                            h[i * d + j] += wk * a[i] * a[j];
                        }
                    }
                }
                for i in 0..d {
                    for j in 0..d {
                        h[i * d + j] -= g[i] * g[j];
                    }
                }
                (value, g, h)
            }
            Self::Radial(t) => {
                let r = norm(p).f64();
                let (lm, m1, m2) = t.moments(r);
                let var = m2 - m1 * m1;
                let mut h = vec![T::zero(); d * d];
                if r < 1e-12 {
                    for i in 0..d {
                        h[i * d + i] = T::c(m2);
                    }
                    return (T::c(lm), vec![T::zero(); d], h);
                }
                let u: Vec<f64> = p.iter().map(|v| v.f64() / r).collect();
                let g = u.iter().map(|&ui| T::c(m1 * ui)).collect();
                let tangential = m1 / r;
                for i in 0..d {
                    for j in 0..d {
                        let proj = u[i] * u[j];
                        let delta = if i == j { 1.0 } else { 0.0 };
                        h[i * d + j] = T::c(tangential * (delta - proj) + var * proj);
                    }
                }
                (T::c(lm), g, h)
            }
        }
    }
}

/// Result of the sub-Gaussian tail check.
#[derive(Clone, Debug, Serialize)]
pub struct SubGaussianReport {
    /// Largest `cgf(x, p) - sigma_inf2 |p|^2 / 2` over the grids.
    pub max_slack: f64,
    pub worst_x: Vec<f64>,
    pub worst_p: Vec<f64>,
    pub pass: bool,
}

/// Compares the CGF against `sigma_inf2 |p|^2 / 2` on a grid of points and
/// dual vectors. `f` supplies `f(x)` for state-dependent variances.
pub fn check_subgaussian<T: Scalar>(
    model: &NoiseModel<T>,
    f: impl Fn(&[T]) -> T,
    x_grid: &[Vec<T>],
    p_grid: &[Vec<T>],
    sigma_inf2: T,
    opts: CgfOptions,
) -> Result<SubGaussianReport> {
    if x_grid.is_empty() || p_grid.is_empty() {
        return Err(Error::EmptyInput("sub-Gaussian check needs non-empty grids"));
    }
    let mut best = (f64::NEG_INFINITY, Vec::new(), Vec::new());
    for x in x_grid {
        let fx = f(x);
        for p in p_grid {
            let slack = (model.cgf(x, fx, p, opts).value - sigma_inf2 * norm2(p) * T::c(0.5)).f64();
            if slack > best.0 {
                best = (slack, x.iter().map(|v| v.f64()).collect(), p.iter().map(|v| v.f64()).collect());
            }
        }
    }
    Ok(SubGaussianReport { max_slack: best.0, worst_x: best.1, worst_p: best.2, pass: best.0 <= 0.0 })
}

#[derive(Clone, Debug, Serialize)]
pub struct SandwichRow {
    pub p_norm: f64,
    pub cgf: f64,
    pub ci_half_width: f64,
    pub lower: f64,
    pub upper: f64,
    pub inside: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct SandwichReport {
    pub epsilon: f64,
    pub rows: Vec<SandwichRow>,
    pub all_inside: bool,
}

/// Smallest radius for which the truncated-Gaussian CGF sandwich holds:
/// `4 sigma sqrt((d + 3) log 2 + log(d + 1))`.
pub fn sandwich_radius_threshold(sigma2: f64, dim: usize) -> f64 {
    let d = dim as f64;
    4.0 * sigma2.sqrt() * ((d + 3.0) * std::f64::consts::LN_2 + (d + 1.0).ln()).sqrt()
}

/// `exp(-R^2 / (16 sigma2)) 2^(d+3) (d+1)`
pub fn sandwich_epsilon(sigma2: f64, radius: f64, dim: usize) -> f64 {
    (-radius * radius / (16.0 * sigma2)).exp() * 2f64.powi(dim as i32 + 3) * (dim as f64 + 1.0)
}

/// Checks that the Monte-Carlo CGF of the truncated Gaussian lies within
/// `(1 +- eps) sigma2 |p|^2 / 2`, widened by `ci_widths` confidence
/// half-widths, for every `p` in the grid.
pub fn truncated_gaussian_sandwich(
    sigma2: f64,
    radius: f64,
    dim: usize,
    p_grid: &[Vec<f64>],
    n_mc: usize,
    ci_widths: f64,
    seed: u64,
) -> Result<SandwichReport> {
    let threshold = sandwich_radius_threshold(sigma2, dim);
    if radius < threshold {
        return Err(Error::ConditionViolated(format!("radius {radius} below {threshold}")));
    }
    let p_max = radius / (2.0 * sigma2);
    if let Some(p) = p_grid.iter().find(|p| norm(p) > p_max * (1.0 + 1e-12)) {
        return Err(Error::InvalidArgument(format!("|p| = {} exceeds R / (2 sigma2) = {p_max}", norm(p))));
    }
    let model = NoiseModel::truncated_gaussian(dim, sigma2, radius)?;
    let eps = sandwich_epsilon(sigma2, radius, dim);
    let x = vec![0.0; dim];
    let opts = CgfOptions { n_mc, seed };
    let rows: Vec<SandwichRow> = p_grid
        .iter()
        .map(|p| {
            let v = model.cgf(&x, 0.0, p, opts);
            let base = 0.5 * sigma2 * norm2(p);
            let half = v.ci_half_width();
            let (lower, upper) = ((1.0 - eps) * base, (1.0 + eps) * base);
            let inside = v.value >= lower - ci_widths * half && v.value <= upper + ci_widths * half;
            SandwichRow { p_norm: norm(p), cgf: v.value, ci_half_width: half, lower, upper, inside }
        })
        .collect();
    let all_inside = rows.iter().all(|r| r.inside);
    Ok(SandwichReport { epsilon: eps, rows, all_inside })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_point() -> NoiseModel<f64> {
        NoiseModel::finite_sum(vec![AffineErr::constant(vec![1.0]), AffineErr::constant(vec![-1.0])], 1).unwrap()
    }

    #[test]
    fn gaussian_cgf_closed_form() {
        let m = NoiseModel::gaussian(2, 1.0).unwrap();
        let v = m.cgf(&[0.3, 0.1], 0.0, &[1.0, 0.0], CgfOptions::default());
        assert_eq!(v.value, 0.5);
        assert_eq!(v.estimator, Estimator::Exact);
    }

    #[test]
    fn cgf_vanishes_at_zero() {
        let models = [
            NoiseModel::gaussian(1, 3.0).unwrap(),
            NoiseModel::truncated_gaussian(1, 1.0, 2.0).unwrap(),
            two_point(),
            NoiseModel::gaussian_affine(1, 1.0, 1.0),
        ];
        for m in &models {
            let v = m.cgf(&[0.7], 0.2, &[0.0], CgfOptions::default());
            assert_eq!(v.value, 0.0);
            assert_eq!(v.estimator, Estimator::Exact);
        }
    }

    #[test]
    fn two_point_cgf_is_log_cosh() {
        let v = two_point().cgf(&[0.0], 0.0, &[1.0], CgfOptions::default());
        assert!((v.value - 1f64.cosh().ln()).abs() < 1e-15);
        assert!((v.value - 0.433781).abs() < 1e-6);
    }

    #[test]
    fn finite_sum_centering_and_samples() {
        let m = NoiseModel::finite_sum(
            vec![
                AffineErr { offset: vec![2.0, 0.0], linear: Some(vec![1.0, 0.0, 0.0, 1.0]) },
                AffineErr::constant(vec![0.0, 1.0]),
                AffineErr::constant(vec![1.0, -4.0]),
            ],
            1,
        )
        .unwrap();
        for x in [[0.0, 0.0], [1.5, -2.0], [10.0, 3.0]] {
            let e = m.errs_at(&x);
            for i in 0..2 {
                let s: f64 = e.iter().map(|v| v[i]).sum();
                assert!(s.abs() < 1e-12, "{s}");
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let tp = two_point();
        for _ in 0..100 {
            let v = tp.sample(&[0.0], 0.0, &mut rng).unwrap()[0];
            assert!(v == 1.0 || v == -1.0);
        }
    }

    #[test]
    fn truncated_draws_stay_in_ball() {
        let m = NoiseModel::truncated_gaussian(3, 1.0, 1.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..1000 {
            assert!(norm(&m.sample(&[0.0; 3], 0.0, &mut rng).unwrap()) <= 1.5);
        }
    }

    #[test]
    fn tiny_radius_stalls() {
        assert!(matches!(NoiseModel::<f64>::truncated_gaussian(4, 1.0, 0.01), Err(Error::RejectionStall(_))));
    }

    #[test]
    fn batch_enumeration_counts() {
        let errs = (0..6).map(|i| AffineErr::constant(vec![i as f64])).collect();
        let m = NoiseModel::finite_sum(errs, 3).unwrap();
        let atoms = m.batch_atoms(&[0.0]).unwrap();
        assert_eq!(atoms.len(), 20);
        let mean: f64 = atoms.iter().map(|a| a[0]).sum::<f64>() / 20.0;
        assert!(mean.abs() < 1e-12);
    }

    #[test]
    fn minibatch_covariance_has_finite_population_correction() {
        let errs = (0..4).map(|i| AffineErr::constant(vec![i as f64])).collect();
        let m = NoiseModel::finite_sum(errs, 2).unwrap();
        let atoms = m.batch_atoms(&[0.0]).unwrap();
        let var_enum: f64 = atoms.iter().map(|a| a[0] * a[0]).sum::<f64>() / atoms.len() as f64;
        assert!((m.covariance(&[0.0], 0.0)[0] - var_enum).abs() < 1e-12);
    }

    #[test]
    fn subgaussian_checks() {
        let ps: Vec<Vec<f64>> = (-50..=50).map(|k| vec![k as f64 / 10.0]).collect();
        let xs = vec![vec![0.0]];
        let g = NoiseModel::gaussian(1, 1.0).unwrap();
        let r = check_subgaussian(&g, |_| 0.0, &xs, &ps, 1.0, CgfOptions::default()).unwrap();
        assert!(r.pass);
        assert_eq!(r.max_slack, 0.0);
        let r = check_subgaussian(&two_point(), |_| 0.0, &xs, &ps, 1.0, CgfOptions::default()).unwrap();
        assert!(r.pass && r.max_slack <= 0.0);
        let g2 = NoiseModel::gaussian(1, 2.0).unwrap();
        assert!(!check_subgaussian(&g2, |_| 0.0, &xs, &ps, 1.0, CgfOptions::default()).unwrap().pass);
    }

    #[test]
    fn radial_table_matches_one_dimensional_truncation() {
        // d = 1: second moment of N(0,1) truncated to [-R, R]
        let r = 1.5f64;
        let t = RadialTable::new(1.0, r, 1);
        let phi = (-r * r / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let mass = statrs::function::erf::erf(r / 2f64.sqrt());
        let want = 1.0 - 2.0 * r * phi / mass;
        assert!((t.second_moment(0.0) - want).abs() < 1e-9);
        // large radius recovers the Gaussian CGF
        let wide = RadialTable::new(2.0, 40.0, 3);
        let (lm, _, _) = wide.moments(1.3);
        assert!((lm - 0.5 * 2.0 * 1.69).abs() < 1e-9);
    }

    #[test]
    fn sandwich_example_and_threshold() {
        let eps = sandwich_epsilon(1.0, 12.0, 1);
        assert!((eps - (-9f64).exp() * 32.0).abs() < 1e-15);
        let r = truncated_gaussian_sandwich(1.0, 12.0, 1, &[vec![1.0], vec![0.0]], 100_000, 3.0, 4).unwrap();
        assert!(r.all_inside);
        assert_eq!(r.rows[1].cgf, 0.0);
        assert!(matches!(
            truncated_gaussian_sandwich(1.0, 5.0, 1, &[vec![1.0]], 1000, 3.0, 4),
            Err(Error::ConditionViolated(_))
        ));
    }
}
