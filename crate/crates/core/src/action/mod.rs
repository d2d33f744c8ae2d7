//! Lagrangians, the discretized action functional, minimum-action paths and
//! the quasi-potential between critical components.

pub mod lbfgs;
mod lm;
mod qpot;

pub use qpot::{
    b_potential, discrete_rate, minimize_action, quasi_potential, MinimizeOptions, QpOptions, QuasiPotential,
};

use crate::linalg::{dot, mat_vec, norm, norm2, solve, sym_eigenvalues};
use crate::noise::{LocalCgf, NoiseModel};
use crate::objective::ObjectiveSpec;
use crate::path::DiscretePath;
use crate::scalar::Scalar;
use crate::{Error, Result};

/// Objective and noise model together with the conjugation settings.
#[derive(Clone, Debug)]
pub struct LagrangianCtx<T: Scalar> {
    pub spec: ObjectiveSpec<T>,
    pub model: NoiseModel<T>,
    pub conj_max_iters: usize,
    pub conj_tol: T,
    /// Factor in `p_cap(x) = scale * (1 + |grad f(x)|) / s_min(cov(x))`.
    pub p_cap_scale: T,
    /// Use Newton conjugation even where a closed form exists.
    pub force_numeric: bool,
}

impl<T: Scalar> LagrangianCtx<T> {
    pub fn new(spec: ObjectiveSpec<T>, model: NoiseModel<T>) -> Result<Self> {
        if spec.dim() != model.dim() {
            return Err(Error::InvalidArgument(format!(
                "objective dimension {} differs from noise dimension {}",
                spec.dim(),
                model.dim()
            )));
        }
        Ok(Self {
            spec,
            model,
            conj_max_iters: 500,
            conj_tol: T::epsilon().sqrt() * T::c(1e-2),
            p_cap_scale: T::c(50.0),
            force_numeric: false,
        })
    }

    pub fn numeric(mut self) -> Self {
        self.force_numeric = true;
        self
    }

    /// Closed-form Gaussian variance at `x`, if the Lagrangian is quadratic.
    fn gaussian_s2(&self, fx: T) -> Option<T> {
        if self.force_numeric {
            None
        } else {
            self.model.gaussian_variance(fx)
        }
    }

    /// Dual radius beyond which a still-increasing conjugate ascent is
    /// declared divergent.
    pub fn p_cap(&self, x: &[T], fx: T) -> T {
        let d = self.spec.dim();
        let cov = self.model.covariance(x, fx);
        let s_min = sym_eigenvalues(&cov, d)[0].max(T::epsilon());
        self.p_cap_scale * (T::one() + norm(&self.spec.grad(x))) / s_min
    }

    /// `L_err(x, u) = sup_p [<-u, p> - H(x, p)]`, `+inf` outside the domain.
    pub fn lagrangian_err(&self, x: &[T], u: &[T]) -> Result<T> {
        let fx = self.spec.f(x);
        self.lagrangian_err_at(x, fx, u)
    }

    fn lagrangian_err_at(&self, x: &[T], fx: T, u: &[T]) -> Result<T> {
        if u.iter().all(|v| *v == T::zero()) {
            return Ok(T::zero());
        }
        if let Some(s2) = self.gaussian_s2(fx) {
            if !(s2 > T::zero()) {
                return Err(Error::NonPositiveVariance(s2.f64()));
            }
            return Ok(norm2(u) / (T::c(2.0) * s2));
        }
        if let NoiseModel::Zero { .. } = self.model {
            return Ok(T::infinity());
        }
        let local = self.model.local_cgf(x, fx)?;
        conjugate(&local, u, self.p_cap(x, fx), self.conj_tol, self.conj_max_iters)
    }

    /// `L_G(x, v) = L_err(x, v + grad f(x))`.
    pub fn lagrangian_orcl(&self, x: &[T], v: &[T]) -> Result<T> {
        let g = self.spec.grad(x);
        let u: Vec<T> = v.iter().zip(&g).map(|(&a, &b)| a + b).collect();
        self.lagrangian_err(x, &u)
    }

    /// Midpoint-rule action `sum_k dt L_G(x_mid, (x_{k+1} - x_k) / dt)`.
    pub fn action(&self, path: &DiscretePath<T>) -> Result<T> {
        let dt = path.dt();
        let mut total = T::zero();
        for w in path.nodes.windows(2) {
            let term = self.segment(&w[0], &w[1], dt)?;
            if !term.is_finite() {
                return Ok(T::infinity());
            }
            total += term;
        }
        Ok(total)
    }

    /// Action with the cached value filled in.
    pub fn evaluate(&self, mut path: DiscretePath<T>) -> Result<DiscretePath<T>> {
        path.action = Some(self.action(&path)?);
        Ok(path)
    }

    fn segment(&self, a: &[T], b: &[T], dt: T) -> Result<T> {
        let half = T::c(0.5);
        let m: Vec<T> = a.iter().zip(b).map(|(&p, &q)| (p + q) * half).collect();
        let g = self.spec.grad(&m);
        let u: Vec<T> = a.iter().zip(b).zip(&g).map(|((&p, &q), &gi)| (q - p) / dt + gi).collect();
        Ok(dt * self.lagrangian_err_at(&m, self.spec.f(&m), &u)?)
    }

    /// Gradient of the action with respect to every node (endpoint rows
    /// included). Analytic for Gaussian noise, central differences with step
    /// `1e-6 (1 + |x|)` otherwise.
    pub fn action_gradient(&self, path: &DiscretePath<T>) -> Result<(T, Vec<Vec<T>>)> {
        let d = path.dim();
        let dt = path.dt();
        let n = path.nodes.len();
        let mut grad = vec![vec![T::zero(); d]; n];
        let gaussian = !self.force_numeric && self.model.is_gaussian();
        if gaussian {
            let half = T::c(0.5);
            let mut total = T::zero();
            for k in 0..n - 1 {
                let (a, b) = (&path.nodes[k], &path.nodes[k + 1]);
                let m: Vec<T> = a.iter().zip(b).map(|(&p, &q)| (p + q) * half).collect();
                let fm = self.spec.f(&m);
                let s2 = self.model.gaussian_variance(fm).expect("gaussian");
                if !(s2 > T::zero()) {
                    return Err(Error::NonPositiveVariance(s2.f64()));
                }
                let gm = self.spec.grad(&m);
                let hm = self.spec.hess(&m);
                let w: Vec<T> = (0..d).map(|i| (b[i] - a[i]) / dt + gm[i]).collect();
                let w2 = norm2(&w);
                total += dt * w2 / (T::c(2.0) * s2);
                let hw = mat_vec(&hm, &w);
                let ds2 = match self.model {
                    NoiseModel::Gaussian { variance: crate::noise::Variance::Affine { a, .. }, .. } => a,
                    _ => T::zero(),
                };
                for i in 0..d {
                    let var_term = w2 * ds2 * gm[i] / (T::c(4.0) * s2 * s2);
                    let common = half * hw[i] / s2 - var_term;
                    grad[k + 1][i] += dt * (w[i] / (dt * s2) + common);
                    grad[k][i] += dt * (-w[i] / (dt * s2) + common);
                }
            }
            return Ok((total, grad));
        }
        let total = self.action(path)?;
        let mut nodes = path.nodes.clone();
        for k in 0..n {
            for i in 0..d {
                let x0 = nodes[k][i];
                let h = T::c(1e-6) * (T::one() + x0.abs());
                let local = |nodes: &Vec<Vec<T>>| -> Result<T> {
                    let mut s = T::zero();
                    if k > 0 {
                        s += self.segment(&nodes[k - 1], &nodes[k], dt)?;
                    }
                    if k + 1 < n {
                        s += self.segment(&nodes[k], &nodes[k + 1], dt)?;
                    }
                    Ok(s)
                };
                nodes[k][i] = x0 + h;
                let fp = local(&nodes)?;
                nodes[k][i] = x0 - h;
                let fm = local(&nodes)?;
                nodes[k][i] = x0;
                grad[k][i] = (fp - fm) / (T::c(2.0) * h);
            }
        }
        Ok((total, grad))
    }
}

/// Damped Newton ascent of `p -> <-u, p> - H(p)` from `p = 0`.
fn conjugate<T: Scalar>(h: &LocalCgf<T>, u: &[T], p_cap: T, tol: T, max_iters: usize) -> Result<T> {
    let d = u.len();
    let mut p = vec![T::zero(); d];
    let scale = T::one() + norm(u);
    let objective = |p: &[T]| -dot(u, p) - h.value(p);
    let mut last = T::zero();
    for _ in 0..max_iters {
        let (hv, hg, hh) = h.eval(&p);
        let j = -dot(u, &p) - hv;
        last = j;
        let gj: Vec<T> = u.iter().zip(&hg).map(|(&a, &b)| -a - b).collect();
        let gnorm = norm(&gj);
        if gnorm <= tol * scale {
            return Ok(j);
        }
        let pn = norm(&p);
        if pn > p_cap {
            return Ok(if dot(&gj, &p) / pn > T::c(1e-8) * scale { T::infinity() } else { j });
        }
        let ev = sym_eigenvalues(&hh, d);
        let top = ev.iter().fold(T::zero(), |m, v| m.max(v.abs()));
        if ev[0] < -T::c(1e-8) * (T::one() + top) {
            return Err(Error::NonConcaveDetected(ev[0].f64()));
        }
        let mut reg = hh.clone();
        let lambda = T::c(1e-12) * (T::one() + top);
        for i in 0..d {
            reg[i * d + i] += lambda;
        }
        let step = solve(&reg, &gj).filter(|s| s.iter().all(|v| v.is_finite())).unwrap_or(gj.clone());
        let slope = dot(&gj, &step);
        let mut t = T::one();
        let mut moved = false;
        for _ in 0..60 {
            let trial: Vec<T> = p.iter().zip(&step).map(|(&a, &b)| a + t * b).collect();
            let jt = objective(&trial);
            if jt.is_finite() && jt >= j + T::c(1e-4) * t * slope {
                if jt - j <= T::c(4.0) * T::epsilon() * (T::one() + j.abs()) && pn <= p_cap {
                    // the objective is flat to rounding: quadrature noise
                    // keeps the gradient above tolerance
                    return Ok(jt);
                }
                p = trial;
                moved = true;
                break;
            }
            t *= T::c(0.5);
        }
        if !moved {
            return Ok(j);
        }
    }
    let pn = norm(&p);
    let (_, hg, _) = h.eval(&p);
    let gj: Vec<T> = u.iter().zip(&hg).map(|(&a, &b)| -a - b).collect();
    if pn > T::zero() && dot(&gj, &p) / pn > T::c(1e-8) * scale {
        log::warn!("conjugate ascent did not converge (|p| = {pn}); treating as divergent");
        return Ok(T::infinity());
    }
    Ok(last)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::AffineErr;
    use crate::objective::{DoubleWell, FnObjective, Himmelblau, Quadratic, SearchBox};

    fn quad_ctx(s2: f64) -> LagrangianCtx<f64> {
        let spec = ObjectiveSpec::new(Quadratic::new(1), SearchBox::cube(1, -2.0, 2.0)).unwrap();
        LagrangianCtx::new(spec, NoiseModel::gaussian(1, s2).unwrap()).unwrap()
    }

    fn two_point_ctx(grad: f64) -> LagrangianCtx<f64> {
        let f = FnObjective::new("linear", 1, move |x: &[f64]| grad * x[0]).with_gradient(move |_, g| g[0] = grad);
        let spec = ObjectiveSpec::new(f, SearchBox::cube(1, -1.0, 1.0)).unwrap();
        let noise = NoiseModel::finite_sum(vec![AffineErr::constant(vec![1.0]), AffineErr::constant(vec![-1.0])], 1).unwrap();
        LagrangianCtx::new(spec, noise).unwrap()
    }

    #[test]
    fn gaussian_lagrangians() {
        let spec = ObjectiveSpec::new(Himmelblau, SearchBox::cube(2, -6.0, 6.0)).unwrap();
        let ctx: LagrangianCtx<f64> = LagrangianCtx::new(spec, NoiseModel::gaussian(2, 2.0).unwrap()).unwrap();
        assert_eq!(ctx.lagrangian_err(&[0.0, 0.0], &[2.0, 0.0]).unwrap(), 1.0);
        assert_eq!(ctx.lagrangian_err(&[1.0, 0.0], &[0.0, 0.0]).unwrap(), 0.0);
        assert!((ctx.clone().numeric().lagrangian_err(&[0.0, 0.0], &[2.0, 0.0]).unwrap() - 1.0).abs() < 1e-12);
        let lin = FnObjective::new("lin", 2, |x: &[f64]| x[0]).with_gradient(|_, g| {
            g[0] = 1.0;
            g[1] = 0.0
        });
        let ctx = LagrangianCtx::new(ObjectiveSpec::new(lin, SearchBox::cube(2, -1.0, 1.0)).unwrap(), NoiseModel::gaussian(2, 2.0).unwrap()).unwrap();
        assert_eq!(ctx.lagrangian_orcl(&[0.3, 0.2], &[-1.0, 0.0]).unwrap(), 0.0);
        assert_eq!(ctx.lagrangian_orcl(&[0.3, 0.2], &[1.0, 0.0]).unwrap(), 1.0);
    }

    #[test]
    fn binary_entropy_conjugate() {
        let ctx = two_point_ctx(0.0);
        let l = ctx.lagrangian_err(&[0.0], &[1.0]).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-9, "{l}");
        assert_eq!(ctx.lagrangian_err(&[0.0], &[1.5]).unwrap(), f64::INFINITY);
        let v = 0.3f64;
        let want = 0.5 * (1.0 + v) * (1.0 + v).ln() + 0.5 * (1.0 - v) * (1.0 - v).ln();
        assert!((ctx.lagrangian_err(&[0.0], &[v]).unwrap() - want).abs() < 1e-12);
        assert_eq!(two_point_ctx(0.5).lagrangian_orcl(&[0.0], &[1.0]).unwrap(), f64::INFINITY);
    }

    #[test]
    fn straight_path_action() {
        let ctx = quad_ctx(1.0);
        let p = DiscretePath::straight(&[0.0], &[1.0], 1.0, 1001).unwrap();
        assert!((ctx.action(&p).unwrap() - 7.0 / 6.0).abs() < 1e-4);
        let c = DiscretePath::constant(&[0.0], 3.0, 10).unwrap();
        assert_eq!(ctx.action(&c).unwrap(), 0.0);
    }

    #[test]
    fn flow_path_has_negligible_action() {
        let spec = ObjectiveSpec::new(Himmelblau, SearchBox::cube(2, -6.0, 6.0)).unwrap();
        let flow = crate::objective::gradient_flow(&spec, &[1.0, 1.0], 5.0, 1e-4).unwrap();
        let ctx = LagrangianCtx::new(spec, NoiseModel::gaussian(2, 4.0).unwrap()).unwrap();
        assert!(ctx.action(&flow.path).unwrap() <= 1e-6);
    }

    #[test]
    fn numeric_gradient_matches_analytic_for_affine_variance() {
        let spec = ObjectiveSpec::new(DoubleWell, SearchBox::cube(1, -2.0, 2.0)).unwrap();
        let ctx = LagrangianCtx::new(spec, NoiseModel::gaussian_affine(1, 0.5, 1.0)).unwrap();
        let nodes: Vec<Vec<f64>> = (0..=20).map(|k| vec![-1.0 + 0.1 * k as f64 + 0.05 * (k as f64).sin()]).collect();
        let path = DiscretePath::new(nodes, 2.0).unwrap();
        let (a, g) = ctx.action_gradient(&path).unwrap();
        let (b, fd) = ctx.clone().numeric().action_gradient(&path).unwrap();
        assert!((a - b).abs() < 1e-9 * (1.0 + a));
        for (x, y) in g.iter().flatten().zip(fd.iter().flatten()) {
            assert!((x - y).abs() < 1e-5 * (1.0 + x.abs()), "{x} vs {y}");
        }
    }
}
