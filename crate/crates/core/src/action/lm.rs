//! Levenberg-Marquardt for the Gaussian action, which is a sum of squared
//! residuals `rho_k = sqrt(dt / (2 sigma^2(m_k))) ((x_{k+1} - x_k) / dt + grad f(m_k))`.
//! The normal equations are block tridiagonal in the interior nodes.

use super::LagrangianCtx;
use crate::linalg::{norm2, solve};
use crate::noise::{NoiseModel, Variance};
use crate::path::DiscretePath;
use crate::scalar::Scalar;

struct Segment<T> {
    rho: Vec<T>,
    /// `d rho_k / d x_k`, row-major
    left: Vec<T>,
    /// `d rho_k / d x_{k+1}`
    right: Vec<T>,
}

fn segments<T: Scalar>(ctx: &LagrangianCtx<T>, nodes: &[Vec<T>], dt: T) -> Option<(T, Vec<Segment<T>>)> {
    let d = nodes[0].len();
    let half = T::c(0.5);
    let slope = match ctx.model {
        NoiseModel::Gaussian { variance: Variance::Affine { a, .. }, .. } => a,
        _ => T::zero(),
    };
    let mut cost = T::zero();
    let mut out = Vec::with_capacity(nodes.len() - 1);
    for w in nodes.windows(2) {
        let m: Vec<T> = w[0].iter().zip(&w[1]).map(|(&p, &q)| (p + q) * half).collect();
        let s2 = ctx.model.gaussian_variance(ctx.spec.f(&m))?;
        if !(s2 > T::zero()) {
            return None;
        }
        let g = ctx.spec.grad(&m);
        let h = ctx.spec.hess(&m);
        let s = (dt / (T::c(2.0) * s2)).sqrt();
        let r: Vec<T> = (0..d).map(|i| (w[1][i] - w[0][i]) / dt + g[i]).collect();
        let rho: Vec<T> = r.iter().map(|&v| s * v).collect();
        cost += norm2(&rho);
        // d s / d x_k = d s / d x_{k+1} = -s a grad f(m) / (4 sigma^2)
        let c: Vec<T> = g.iter().map(|&gi| -s * slope * gi / (T::c(4.0) * s2)).collect();
        let mut left = vec![T::zero(); d * d];
        let mut right = vec![T::zero(); d * d];
        for i in 0..d {
            for j in 0..d {
                let shared = s * half * h[i * d + j] + r[i] * c[j];
                let diag = if i == j { s / dt } else { T::zero() };
                left[i * d + j] = shared - diag;
                right[i * d + j] = shared + diag;
            }
        }
        out.push(Segment { rho, left, right });
    }
    cost.is_finite().then_some((cost, out))
}

fn mat_t_mat<T: Scalar>(a: &[T], b: &[T], d: usize) -> Vec<T> {
    let mut out = vec![T::zero(); d * d];
    for i in 0..d {
        for j in 0..d {
            out[i * d + j] = (0..d).map(|k| a[k * d + i] * b[k * d + j]).sum();
        }
    }
    out
}

fn mat_t_vec<T: Scalar>(a: &[T], v: &[T], d: usize) -> Vec<T> {
    (0..d).map(|i| (0..d).map(|k| a[k * d + i] * v[k]).sum()).collect()
}

/// `a^{-1} b` column by column.
fn solve_mat<T: Scalar>(a: &[T], b: &[T], d: usize) -> Option<Vec<T>> {
    let mut out = vec![T::zero(); d * d];
    for j in 0..d {
        let col: Vec<T> = (0..d).map(|i| b[i * d + j]).collect();
        let x = solve(a, &col)?;
        for i in 0..d {
            out[i * d + j] = x[i];
        }
    }
    Some(out)
}

/// Damped Gauss-Newton step for the interior nodes.
fn step<T: Scalar>(segs: &[Segment<T>], d: usize, mu: T) -> Option<Vec<Vec<T>>> {
    let m = segs.len() - 1;
    let mut diag = Vec::with_capacity(m);
    let mut upper = Vec::with_capacity(m);
    let mut rhs = Vec::with_capacity(m);
    for j in 1..=m {
        let (prev, cur) = (&segs[j - 1], &segs[j]);
        let mut b = mat_t_mat(&prev.right, &prev.right, d);
        for (x, y) in b.iter_mut().zip(mat_t_mat(&cur.left, &cur.left, d)) {
            *x += y;
        }
        for i in 0..d {
            b[i * d + i] += mu;
        }
        diag.push(b);
        upper.push(mat_t_mat(&cur.left, &cur.right, d));
        let g1 = mat_t_vec(&prev.right, &prev.rho, d);
        let g2 = mat_t_vec(&cur.left, &cur.rho, d);
        rhs.push(g1.iter().zip(&g2).map(|(&a, &b)| -(a + b)).collect::<Vec<T>>());
    }
    // block Thomas elimination; upper[j] couples node j+1 to node j+2
    for j in 1..m {
        let lower_t = &upper[j - 1];
        let inv_c = solve_mat(&diag[j - 1], lower_t, d)?;
        let y = solve(&diag[j - 1], &rhs[j - 1])?;
        let corr = mat_t_mat(lower_t, &inv_c, d);
        for (x, c) in diag[j].iter_mut().zip(corr) {
            *x -= c;
        }
        let ry = mat_t_vec(lower_t, &y, d);
        for (x, c) in rhs[j].iter_mut().zip(ry) {
            *x -= c;
        }
    }
    let mut delta = vec![vec![T::zero(); d]; m];
    delta[m - 1] = solve(&diag[m - 1], &rhs[m - 1])?;
    for j in (0..m - 1).rev() {
        let cd: Vec<T> = (0..d).map(|i| (0..d).map(|k| upper[j][i * d + k] * delta[j + 1][k]).sum()).collect();
        let r: Vec<T> = rhs[j].iter().zip(&cd).map(|(&a, &b)| a - b).collect();
        delta[j] = solve(&diag[j], &r)?;
    }
    Some(delta)
}

/// Minimizes the Gaussian action over the interior nodes of `init`.
/// Returns the path and its action, never worse than the start.
pub(crate) fn minimize_gaussian<T: Scalar>(ctx: &LagrangianCtx<T>, init: &DiscretePath<T>, tol: T, max_iters: usize) -> Option<(Vec<Vec<T>>, T)> {
    let d = init.dim();
    let dt = init.dt();
    let mut nodes = init.nodes.clone();
    let (mut cost, mut segs) = segments(ctx, &nodes, dt)?;
    if segs.len() < 2 {
        return Some((nodes, cost));
    }
    let top = segs
        .iter()
        .flat_map(|s| s.right.iter().chain(&s.left))
        .fold(T::zero(), |m, v| m.max(v.abs()));
    let mut mu = T::c(1e-3) * top * top;
    let mu_max = T::c(1e20) * (T::one() + top * top);
    let mut small = 0;
    for _ in 0..max_iters {
        if cost == T::zero() {
            break;
        }
        let Some(delta) = step(&segs, d, mu) else {
            mu *= T::c(10.0);
            if mu > mu_max {
                break;
            }
            continue;
        };
        let mut trial = nodes.clone();
        for (x, dx) in trial[1..].iter_mut().zip(&delta) {
            for (a, &b) in x.iter_mut().zip(dx) {
                *a += b;
            }
        }
        match segments(ctx, &trial, dt) {
            Some((c_new, s_new)) if c_new < cost => {
                let rel = (cost - c_new) / cost;
                nodes = trial;
                cost = c_new;
                segs = s_new;
                mu = (mu / T::c(3.0)).max(T::c(1e-12));
                if rel <= tol {
                    small += 1;
                    if small >= 3 {
                        break;
                    }
                } else {
                    small = 0;
                }
            }
            _ => {
                mu *= T::c(4.0);
                if mu > mu_max {
                    break;
                }
            }
        }
    }
    Some((nodes, cost))
}
