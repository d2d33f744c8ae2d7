//! Limited-memory BFGS with Armijo backtracking.

use std::collections::VecDeque;

use crate::linalg::{axpy, dot, norm};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug)]
pub struct LbfgsOptions<T> {
    /// Stop after three consecutive iterations with relative decrease below this.
    pub tol: T,
    pub max_iters: usize,
    pub memory: usize,
}

impl<T: Scalar> Default for LbfgsOptions<T> {
    fn default() -> Self {
        Self { tol: T::c(1e-10), max_iters: 5000, memory: 10 }
    }
}

#[derive(Clone, Debug)]
pub struct LbfgsOutcome<T> {
    pub x: Vec<T>,
    pub value: T,
    pub iters: usize,
    pub converged: bool,
}

/// Minimizes `fg`, which returns the value and writes the gradient. Infinite
/// values are allowed and simply rejected by the line search.
pub fn minimize<T: Scalar>(
    x0: Vec<T>,
    mut fg: impl FnMut(&[T], &mut [T]) -> T,
    opts: LbfgsOptions<T>,
) -> LbfgsOutcome<T> {
    let n = x0.len();
    let mut x = x0;
    let mut g = vec![T::zero(); n];
    let mut f = fg(&x, &mut g);
    if n == 0 || !f.is_finite() {
        return LbfgsOutcome { x, value: f, iters: 0, converged: n == 0 };
    }
    let mut hist: VecDeque<(Vec<T>, Vec<T>, T)> = VecDeque::with_capacity(opts.memory);
    let mut x_new = vec![T::zero(); n];
    let mut g_new = vec![T::zero(); n];
    let mut small = 0;
    let c1 = T::c(1e-4);
    for it in 0..opts.max_iters {
        if norm(&g) == T::zero() {
            return LbfgsOutcome { x, value: f, iters: it, converged: true };
        }
        let mut d = two_loop(&g, &hist);
        let mut slope = dot(&g, &d);
        if !(slope < T::zero()) {
            hist.clear();
            d = g.iter().map(|&v| -v).collect();
            slope = dot(&g, &d);
        }
        let mut step = if hist.is_empty() { T::one().min(T::one() / norm(&g)) } else { T::one() };
        let mut accepted = false;
        for _ in 0..60 {
            for i in 0..n {
                x_new[i] = x[i] + step * d[i];
            }
            let f_new = fg(&x_new, &mut g_new);
            if f_new.is_finite() && f_new <= f + c1 * step * slope {
                let s: Vec<T> = x_new.iter().zip(&x).map(|(&a, &b)| a - b).collect();
                let y: Vec<T> = g_new.iter().zip(&g).map(|(&a, &b)| a - b).collect();
                let sy = dot(&s, &y);
                if sy > T::epsilon() * norm(&s) * norm(&y) {
                    if hist.len() == opts.memory {
                        hist.pop_front();
                    }
                    hist.push_back((s, y, T::one() / sy));
                }
                let decrease = f - f_new;
                std::mem::swap(&mut x, &mut x_new);
                std::mem::swap(&mut g, &mut g_new);
                f = f_new;
                if decrease <= opts.tol * (f.abs() + opts.tol) {
                    small += 1;
                    if small >= 3 {
                        return LbfgsOutcome { x, value: f, iters: it + 1, converged: true };
                    }
                } else {
                    small = 0;
                }
                accepted = true;
                break;
            }
            step *= T::c(0.5);
        }
        if !accepted {
            if hist.is_empty() {
                return LbfgsOutcome { x, value: f, iters: it + 1, converged: true };
            }
            hist.clear();
        }
    }
    LbfgsOutcome { x, value: f, iters: opts.max_iters, converged: false }
}

fn two_loop<T: Scalar>(g: &[T], hist: &VecDeque<(Vec<T>, Vec<T>, T)>) -> Vec<T> {
    let mut q = g.to_vec();
    let mut alpha = Vec::with_capacity(hist.len());
    for (s, y, rho) in hist.iter().rev() {
        let a = *rho * dot(s, &q);
        axpy(-a, y, &mut q);
        alpha.push(a);
    }
    if let Some((s, y, _)) = hist.back() {
        let scale = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|v| *v *= scale);
    }
    for ((s, y, rho), a) in hist.iter().zip(alpha.into_iter().rev()) {
        let b = *rho * dot(y, &q);
        axpy(a - b, s, &mut q);
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rosenbrock() {
        let out = minimize(
            vec![-1.2f64, 1.0],
            |x, g| {
                let (a, b) = (x[0], x[1]);
                g[0] = -2.0 * (1.0 - a) - 400.0 * a * (b - a * a);
                g[1] = 200.0 * (b - a * a);
                (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2)
            },
            LbfgsOptions { tol: 1e-14, ..Default::default() },
        );
        assert!((out.x[0] - 1.0).abs() < 1e-5 && (out.x[1] - 1.0).abs() < 1e-5, "{:?}", out);
    }

    #[test]
    fn respects_infinite_barrier() {
        // minimum of (x-2)^2 restricted to x < 1
        let out = minimize(
            vec![0.0f64],
            |x, g| {
                g[0] = 2.0 * (x[0] - 2.0);
                if x[0] >= 1.0 { f64::INFINITY } else { (x[0] - 2.0).powi(2) }
            },
            LbfgsOptions::default(),
        );
        assert!(out.x[0] < 1.0 && out.x[0] > 0.99);
    }
}
