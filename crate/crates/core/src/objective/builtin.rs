use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::Objective;
use crate::scalar::Scalar;

/// `(x^2 + y - 11)^2 + (x + y^2 - 7)^2`
#[derive(Clone, Copy, Debug, Default)]
pub struct Himmelblau;

impl<T: Scalar> Objective<T> for Himmelblau {
    fn dim(&self) -> usize {
        2
    }

    fn value(&self, p: &[T]) -> T {
        let (x, y) = (p[0], p[1]);
        let a = x * x + y - T::c(11.0);
        let b = x + y * y - T::c(7.0);
        a * a + b * b
    }

    fn gradient(&self, p: &[T], out: &mut [T]) {
        let (x, y) = (p[0], p[1]);
        let a = x * x + y - T::c(11.0);
        let b = x + y * y - T::c(7.0);
        out[0] = T::c(4.0) * x * a + T::c(2.0) * b;
        out[1] = T::c(2.0) * a + T::c(4.0) * y * b;
    }

    fn hessian(&self, p: &[T]) -> Vec<T> {
        let (x, y) = (p[0], p[1]);
        let xy = T::c(4.0) * (x + y);
        vec![
            T::c(12.0) * x * x + T::c(4.0) * y - T::c(42.0),
            xy,
            xy,
            T::c(12.0) * y * y + T::c(4.0) * x - T::c(26.0),
        ]
    }

    fn analytic_gradient(&self) -> bool {
        true
    }

    fn analytic_hessian(&self) -> bool {
        true
    }

    fn name(&self) -> &str {
        "himmelblau"
    }
}

/// `(x^2 - 1)^2`
#[derive(Clone, Copy, Debug, Default)]
pub struct DoubleWell;

impl<T: Scalar> Objective<T> for DoubleWell {
    fn dim(&self) -> usize {
        1
    }

    fn value(&self, p: &[T]) -> T {
        let s = p[0] * p[0] - T::one();
        s * s
    }

    fn gradient(&self, p: &[T], out: &mut [T]) {
        out[0] = T::c(4.0) * p[0] * (p[0] * p[0] - T::one());
    }

    fn hessian(&self, p: &[T]) -> Vec<T> {
        vec![T::c(12.0) * p[0] * p[0] - T::c(4.0)]
    }

    fn analytic_gradient(&self) -> bool {
        true
    }

    fn analytic_hessian(&self) -> bool {
        true
    }

    fn name(&self) -> &str {
        "double_well"
    }
}

/// `(x^2 - 1)^2 + alpha * x`
#[derive(Clone, Copy, Debug)]
pub struct TiltedDoubleWell {
    pub alpha: f64,
}

impl TiltedDoubleWell {
    pub fn new(alpha: f64) -> Self {
        Self { alpha }
    }
}

impl<T: Scalar> Objective<T> for TiltedDoubleWell {
    fn dim(&self) -> usize {
        1
    }

    fn value(&self, p: &[T]) -> T {
        let s = p[0] * p[0] - T::one();
        s * s + T::c(self.alpha) * p[0]
    }

    fn gradient(&self, p: &[T], out: &mut [T]) {
        out[0] = T::c(4.0) * p[0] * (p[0] * p[0] - T::one()) + T::c(self.alpha);
    }

    fn hessian(&self, p: &[T]) -> Vec<T> {
        vec![T::c(12.0) * p[0] * p[0] - T::c(4.0)]
    }

    fn analytic_gradient(&self) -> bool {
        true
    }

    fn analytic_hessian(&self) -> bool {
        true
    }

    fn name(&self) -> &str {
        "tilted_double_well"
    }
}

/// `sum_i c_i x_i^2 / 2`, unit curvature by default.
#[derive(Clone, Debug)]
pub struct Quadratic {
    pub curvature: Vec<f64>,
}

impl Quadratic {
    pub fn new(dim: usize) -> Self {
        Self { curvature: vec![1.0; dim] }
    }

    pub fn with_curvature(curvature: Vec<f64>) -> Self {
        Self { curvature }
    }
}

impl<T: Scalar> Objective<T> for Quadratic {
    fn dim(&self) -> usize {
        self.curvature.len()
    }

    fn value(&self, p: &[T]) -> T {
        p.iter()
            .zip(&self.curvature)
            .map(|(&x, &c)| T::c(0.5 * c) * x * x)
            .sum()
    }

    fn gradient(&self, p: &[T], out: &mut [T]) {
        for ((o, &x), &c) in out.iter_mut().zip(p).zip(&self.curvature) {
            *o = T::c(c) * x;
        }
    }

    fn hessian(&self, _p: &[T]) -> Vec<T> {
        let d = self.curvature.len();
        let mut h = vec![T::zero(); d * d];
        for (i, &c) in self.curvature.iter().enumerate() {
            h[i * d + i] = T::c(c);
        }
        h
    }

    fn analytic_gradient(&self) -> bool {
        true
    }

    fn analytic_hessian(&self) -> bool {
        true
    }

    fn name(&self) -> &str {
        "quadratic"
    }
}

/// One monomial `coeff * prod_k x_k^exponents[k]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolynomialTerm {
    pub exponents: Vec<u32>,
    pub coeff: f64,
}

/// Sparse multivariate polynomial with exact derivatives.
#[derive(Clone, Debug)]
pub struct Polynomial {
    dim: usize,
    terms: Vec<PolynomialTerm>,
}

impl Polynomial {
    pub fn new(terms: Vec<PolynomialTerm>) -> crate::Result<Self> {
        let dim = terms.first().map(|t| t.exponents.len()).unwrap_or(0);
        if dim == 0 {
            return Err(crate::Error::InvalidArgument("polynomial needs at least one term with exponents".into()));
        }
        if terms.iter().any(|t| t.exponents.len() != dim) {
            return Err(crate::Error::InvalidArgument("all polynomial terms must have the same number of exponents".into()));
        }
        Ok(Self { dim, terms })
    }

    fn monomial<T: Scalar>(x: &[T], exps: &[u32], skip: &[usize]) -> T {
        // product of x_k^e_k with each index in `skip` differentiated once
        let mut e: Vec<i64> = exps.iter().map(|&v| v as i64).collect();
        let mut factor = T::one();
        for &k in skip {
            if e[k] <= 0 {
                return T::zero();
            }
            factor *= T::c(e[k] as f64);
            e[k] -= 1;
        }
        e.iter()
            .zip(x)
            .fold(factor, |acc, (&ek, &xk)| acc * xk.powi(ek as i32))
    }
}

impl<T: Scalar> Objective<T> for Polynomial {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, x: &[T]) -> T {
        self.terms
            .iter()
            .map(|t| T::c(t.coeff) * Self::monomial(x, &t.exponents, &[]))
            .sum()
    }

    fn gradient(&self, x: &[T], out: &mut [T]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = self
                .terms
                .iter()
                .map(|t| T::c(t.coeff) * Self::monomial(x, &t.exponents, &[i]))
                .sum();
        }
    }

    fn hessian(&self, x: &[T]) -> Vec<T> {
        let d = self.dim;
        let mut h = vec![T::zero(); d * d];
        for i in 0..d {
            for j in i..d {
                let v: T = self
                    .terms
                    .iter()
                    .map(|t| T::c(t.coeff) * Self::monomial(x, &t.exponents, &[i, j]))
                    .sum();
                h[i * d + j] = v;
                h[j * d + i] = v;
            }
        }
        h
    }

    fn analytic_gradient(&self) -> bool {
        true
    }

    fn analytic_hessian(&self) -> bool {
        true
    }

    fn name(&self) -> &str {
        "polynomial"
    }
}

type ValueFn<T> = Arc<dyn Fn(&[T]) -> T + Send + Sync>;
type GradFn<T> = Arc<dyn Fn(&[T], &mut [T]) + Send + Sync>;

/// Objective from closures; the gradient is optional.
#[derive(Clone)]
pub struct FnObjective<T> {
    name: String,
    dim: usize,
    value: ValueFn<T>,
    gradient: Option<GradFn<T>>,
}

impl<T: Scalar> FnObjective<T> {
    pub fn new(name: impl Into<String>, dim: usize, value: impl Fn(&[T]) -> T + Send + Sync + 'static) -> Self {
        Self { name: name.into(), dim, value: Arc::new(value), gradient: None }
    }

    pub fn with_gradient(mut self, gradient: impl Fn(&[T], &mut [T]) + Send + Sync + 'static) -> Self {
        self.gradient = Some(Arc::new(gradient));
        self
    }
}

impl<T: Scalar> Objective<T> for FnObjective<T> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, x: &[T]) -> T {
        (self.value)(x)
    }

    fn gradient(&self, x: &[T], out: &mut [T]) {
        match &self.gradient {
            Some(g) => g(x, out),
            None => super::central_gradient(self, x, out),
        }
    }

    fn analytic_gradient(&self) -> bool {
        self.gradient.is_some()
    }

    fn name(&self) -> &str {
        &self.name
    }
}
