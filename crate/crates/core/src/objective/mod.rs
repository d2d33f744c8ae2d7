//! Smooth objectives, their critical components and gradient flow.

mod assumptions;
mod builtin;
mod critical;
mod flow;

use std::fmt;
use std::sync::Arc;

use rand::Rng;

use crate::linalg::{self, norm};
use crate::scalar::Scalar;

pub use assumptions::{validate_assumptions, AssumptionReport};
pub use builtin::{DoubleWell, FnObjective, Himmelblau, Polynomial, PolynomialTerm, Quadratic, TiltedDoubleWell};
pub use critical::{
    classify_component, cluster_components, find_critical_points, CriticalComponent, CriticalOptions,
    EigSignature, Kind,
};
pub use flow::{gradient_flow, FlowResult};

/// A twice differentiable objective `f: R^d -> R`.
///
/// Gradient and Hessian default to central differences; implementors with
/// closed forms should override them and report it through the `analytic_*`
/// flags.
pub trait Objective<T: Scalar>: Send + Sync {
    fn dim(&self) -> usize;

    fn value(&self, x: &[T]) -> T;

    fn gradient(&self, x: &[T], out: &mut [T]) {
        central_gradient(self, x, out)
    }

    /// Row-major `d x d` Hessian.
    fn hessian(&self, x: &[T]) -> Vec<T> {
        central_hessian(self, x)
    }

    fn analytic_gradient(&self) -> bool {
        false
    }

    fn analytic_hessian(&self) -> bool {
        false
    }

    fn name(&self) -> &str;
}

/// Central-difference gradient with step `eps^(1/3) * (1 + |x_i|)`.
pub fn central_gradient<T: Scalar, O: Objective<T> + ?Sized>(o: &O, x: &[T], out: &mut [T]) {
    let base = T::epsilon().cbrt();
    let mut y = x.to_vec();
    for i in 0..x.len() {
        let h = base * (T::one() + x[i].abs());
        y[i] = x[i] + h;
        let fp = o.value(&y);
        y[i] = x[i] - h;
        let fm = o.value(&y);
        y[i] = x[i];
        out[i] = (fp - fm) / (h + h);
    }
}

/// Central differences of the gradient with step `eps^(1/4) * (1 + |x|)`,
/// about `1e-4 * (1 + |x|)` in double precision.
pub fn central_hessian<T: Scalar, O: Objective<T> + ?Sized>(o: &O, x: &[T]) -> Vec<T> {
    let d = x.len();
    let h = T::epsilon().sqrt().sqrt() * (T::one() + norm(x));
    let mut y = x.to_vec();
    let mut gp = vec![T::zero(); d];
    let mut gm = vec![T::zero(); d];
    let mut hess = vec![T::zero(); d * d];
    for j in 0..d {
        y[j] = x[j] + h;
        o.gradient(&y, &mut gp);
        y[j] = x[j] - h;
        o.gradient(&y, &mut gm);
        y[j] = x[j];
        for i in 0..d {
            hess[i * d + j] = (gp[i] - gm[i]) / (h + h);
        }
    }
    for i in 0..d {
        for j in i + 1..d {
            let s = (hess[i * d + j] + hess[j * d + i]) * T::c(0.5);
            hess[i * d + j] = s;
            hess[j * d + i] = s;
        }
    }
    hess
}

/// Axis-aligned box `[lo_i, hi_i]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SearchBox<T> {
    pub lo: Vec<T>,
    pub hi: Vec<T>,
}

impl<T: Scalar> SearchBox<T> {
    pub fn new(lo: Vec<T>, hi: Vec<T>) -> crate::Result<Self> {
        if lo.is_empty() || lo.len() != hi.len() {
            return Err(crate::Error::InvalidArgument("box bounds must be non-empty and of equal length".into()));
        }
        if lo.iter().zip(&hi).any(|(l, h)| !(l < h)) {
            return Err(crate::Error::InvalidArgument("box requires lo < hi in every coordinate".into()));
        }
        Ok(Self { lo, hi })
    }

    pub fn cube(dim: usize, lo: T, hi: T) -> Self {
        Self { lo: vec![lo; dim], hi: vec![hi; dim] }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn diameter(&self) -> T {
        linalg::dist(&self.lo, &self.hi)
    }

    pub fn half_diagonal(&self) -> T {
        self.diameter() * T::c(0.5)
    }

    pub fn center(&self) -> Vec<T> {
        self.lo.iter().zip(&self.hi).map(|(&l, &h)| (l + h) * T::c(0.5)).collect()
    }

    /// Box grown by `frac` of its width on each side.
    pub fn inflate(&self, frac: T) -> Self {
        let (lo, hi) = self
            .lo
            .iter()
            .zip(&self.hi)
            .map(|(&l, &h)| {
                let w = (h - l) * frac;
                (l - w, h + w)
            })
            .unzip();
        Self { lo, hi }
    }

    pub fn contains(&self, x: &[T]) -> bool {
        x.iter().zip(self.lo.iter().zip(&self.hi)).all(|(&v, (&l, &h))| v >= l && v <= h)
    }

    /// Regular grid with `per_dim` points per axis, endpoints included,
    /// in row-major order (last coordinate fastest).
    pub fn grid(&self, per_dim: usize) -> Vec<Vec<T>> {
        let d = self.dim();
        let per_dim = per_dim.max(2);
        let total = per_dim.pow(d as u32);
        let step: Vec<T> = self
            .lo
            .iter()
            .zip(&self.hi)
            .map(|(&l, &h)| (h - l) / T::of_usize(per_dim - 1))
            .collect();
        (0..total)
            .map(|mut idx| {
                let mut p = vec![T::zero(); d];
                for k in (0..d).rev() {
                    let i = idx % per_dim;
                    idx /= per_dim;
                    p[k] = self.lo[k] + step[k] * T::of_usize(i);
                }
                p
            })
            .collect()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<T> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(&l, &h)| l + (h - l) * T::c(rng.random::<f64>()))
            .collect()
    }
}

/// An objective together with the metadata the analysis needs.
#[derive(Clone)]
pub struct ObjectiveSpec<T: Scalar> {
    objective: Arc<dyn Objective<T>>,
    pub search_box: SearchBox<T>,
    pub lipschitz_grad_estimate: T,
}

impl<T: Scalar> fmt::Debug for ObjectiveSpec<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ObjectiveSpec")
            .field("name", &self.name())
            .field("dim", &self.dim())
            .field("search_box", &self.search_box)
            .field("lipschitz_grad_estimate", &self.lipschitz_grad_estimate)
            .finish()
    }
}

impl<T: Scalar> ObjectiveSpec<T> {
    /// Wraps an objective; the Lipschitz constant of the gradient is estimated
    /// as the largest Hessian spectral radius over a coarse grid of the box.
    pub fn new<O: Objective<T> + 'static>(objective: O, search_box: SearchBox<T>) -> crate::Result<Self> {
        Self::from_arc(Arc::new(objective), search_box)
    }

    pub fn from_arc(objective: Arc<dyn Objective<T>>, search_box: SearchBox<T>) -> crate::Result<Self> {
        if objective.dim() != search_box.dim() {
            return Err(crate::Error::InvalidArgument(format!(
                "objective dimension {} does not match box dimension {}",
                objective.dim(),
                search_box.dim()
            )));
        }
        let d = objective.dim();
        let per_dim = match d {
            1 => 101,
            2 => 21,
            3 => 9,
            _ => 3,
        };
        let lipschitz_grad_estimate = search_box
            .grid(per_dim)
            .iter()
            .map(|p| {
                let ev = linalg::sym_eigenvalues(&objective.hessian(p), d);
                ev.iter().fold(T::zero(), |m, v| m.max(v.abs()))
            })
            .fold(T::zero(), T::max);
        Ok(Self { objective, search_box, lipschitz_grad_estimate })
    }

    pub fn name(&self) -> &str {
        self.objective.name()
    }

    pub fn dim(&self) -> usize {
        self.objective.dim()
    }

    #[inline]
    pub fn f(&self, x: &[T]) -> T {
        self.objective.value(x)
    }

    #[inline]
    pub fn grad_into(&self, x: &[T], out: &mut [T]) {
        self.objective.gradient(x, out)
    }

    pub fn grad(&self, x: &[T]) -> Vec<T> {
        let mut g = vec![T::zero(); x.len()];
        self.objective.gradient(x, &mut g);
        g
    }

    pub fn hess(&self, x: &[T]) -> Vec<T> {
        self.objective.hessian(x)
    }

    pub fn objective(&self) -> &Arc<dyn Objective<T>> {
        &self.objective
    }

    /// Largest relative error between the objective's gradient and central
    /// differences over `n` uniform box points. Meaningful only when the
    /// objective supplies an analytic gradient.
    pub fn gradient_check<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> T {
        let d = self.dim();
        let mut fd = vec![T::zero(); d];
        (0..n)
            .map(|_| {
                let x = self.search_box.sample(rng);
                let g = self.grad(&x);
                central_gradient(self.objective.as_ref(), &x, &mut fd);
                linalg::dist(&g, &fd) / (T::one() + norm(&g))
            })
            .fold(T::zero(), T::max)
    }

    /// `f` is finite everywhere on a `per_dim` grid of the box.
    pub fn finite_on_box(&self, per_dim: usize) -> bool {
        self.search_box.grid(per_dim).iter().all(|p| self.f(p).is_finite())
    }

    /// Coercivity proxy: the minimum of `f` over the box boundary exceeds
    /// the minimum over the interior grid points.
    pub fn coercivity_proxy(&self, per_dim: usize) -> bool {
        let per_dim = per_dim.max(3);
        let mut boundary = T::infinity();
        let mut interior = T::infinity();
        for p in self.search_box.grid(per_dim) {
            let v = self.f(&p);
            let on_edge = p
                .iter()
                .zip(self.search_box.lo.iter().zip(&self.search_box.hi))
                .any(|(&x, (&l, &h))| x == l || x == h);
            if on_edge {
                boundary = boundary.min(v);
            } else {
                interior = interior.min(v);
            }
        }
        boundary > interior
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn analytic_gradients_agree_with_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let specs: Vec<ObjectiveSpec<f64>> = vec![
            ObjectiveSpec::new(Himmelblau, SearchBox::cube(2, -6.0, 6.0)).unwrap(),
            ObjectiveSpec::new(DoubleWell, SearchBox::cube(1, -2.0, 2.0)).unwrap(),
            ObjectiveSpec::new(TiltedDoubleWell::new(0.2), SearchBox::cube(1, -2.0, 2.0)).unwrap(),
            ObjectiveSpec::new(Quadratic::new(3), SearchBox::cube(3, -1.0, 1.0)).unwrap(),
        ];
        for s in &specs {
            let err = s.gradient_check(100, &mut rng);
            assert!(err <= 1e-5, "{}: {err}", s.name());
        }
    }

    #[test]
    fn finite_difference_hessian_matches_analytic() {
        let h = Himmelblau;
        let x = [1.3, -0.7];
        let a = Objective::<f64>::hessian(&h, &x);
        let fd = central_hessian(&h, &x);
        for (p, q) in a.iter().zip(&fd) {
            assert!((p - q).abs() < 1e-5 * (1.0 + p.abs()), "{p} vs {q}");
        }
    }

    #[test]
    fn box_grid_and_inflate() {
        let b = SearchBox::cube(2, -1.0f64, 1.0);
        let g = b.grid(3);
        assert_eq!(g.len(), 9);
        assert_eq!(g[0], vec![-1.0, -1.0]);
        assert_eq!(g[1], vec![-1.0, 0.0]);
        assert_eq!(g[8], vec![1.0, 1.0]);
        let inf = b.inflate(0.1);
        assert!((inf.lo[0] + 1.2).abs() < 1e-15);
        assert!(inf.contains(&[1.15, -1.19]));
        assert!(!b.contains(&[1.15, 0.0]));
    }

    #[test]
    fn himmelblau_box_checks() {
        let s = ObjectiveSpec::new(Himmelblau, SearchBox::cube(2, -6.0, 6.0)).unwrap();
        assert!(s.finite_on_box(41));
        assert!(s.coercivity_proxy(41));
        assert!(s.lipschitz_grad_estimate > 100.0);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        assert!(ObjectiveSpec::<f64>::new(Himmelblau, SearchBox::cube(1, -1.0, 1.0)).is_err());
    }
}
