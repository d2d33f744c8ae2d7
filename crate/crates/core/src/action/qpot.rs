use rayon::prelude::*;

use super::lbfgs::{self, LbfgsOptions};
use super::{lm, LagrangianCtx};
use crate::linalg::{dist, lerp, norm, sym_eigenvalues};
use crate::noise::{NoiseModel, Variance};
use crate::objective::CriticalComponent;
use crate::path::DiscretePath;
use crate::scalar::Scalar;
use crate::{Error, Result};

#[derive(Clone, Debug)]
pub struct MinimizeOptions<T> {
    pub tol: T,
    pub max_iters: usize,
    /// Extra initialization tried before the heuristics, resampled to the
    /// requested node count.
    pub warm_start: Option<DiscretePath<T>>,
}

impl<T: Scalar> Default for MinimizeOptions<T> {
    fn default() -> Self {
        Self { tol: T::c(1e-10), max_iters: 5000, warm_start: None }
    }
}

/// Minimum-action path from `x_a` to `x_b` over a fixed horizon.
///
/// Interior nodes are optimized from each initialization (Levenberg-Marquardt
/// on the residual form for Gaussian noise, L-BFGS otherwise): the
/// warm start if one is supplied, a forward flow out of `x_a` joined to a
/// flow arriving at `x_b`, and the straight segment. The best optimized
/// path is returned with its action cached.
pub fn minimize_action<T: Scalar>(
    ctx: &LagrangianCtx<T>,
    x_a: &[T],
    x_b: &[T],
    horizon: T,
    n_nodes: usize,
    opts: &MinimizeOptions<T>,
) -> Result<DiscretePath<T>> {
    if n_nodes < 8 {
        return Err(Error::InvalidArgument("minimize_action needs at least 8 nodes".into()));
    }
    let mut inits = Vec::new();
    if let Some(w) = &opts.warm_start {
        let mut p = if w.nodes.len() == n_nodes { w.clone() } else { w.resampled(n_nodes) };
        p.horizon = horizon;
        inits.push(pin(p, x_a, x_b));
    }
    if let Some(p) = flow_concat_init(ctx, x_a, x_b, horizon, n_nodes) {
        inits.push(p);
    }
    inits.push(DiscretePath::straight(x_a, x_b, horizon, n_nodes)?);

    let lopts = LbfgsOptions { tol: opts.tol, max_iters: opts.max_iters, ..Default::default() };
    let mut best: Option<DiscretePath<T>> = None;
    for init in inits {
        let a0 = ctx.action(&init).unwrap_or(T::infinity());
        if !a0.is_finite() {
            continue;
        }
        let path = optimize(ctx, init, a0, lopts)?;
        let better = match &best {
            None => true,
            Some(b) => path.action.unwrap() < b.action.unwrap(),
        };
        if better {
            best = Some(path);
        }
    }
    best.ok_or(Error::InfeasibleStart)
}

fn pin<T: Scalar>(mut p: DiscretePath<T>, a: &[T], b: &[T]) -> DiscretePath<T> {
    p.nodes[0] = a.to_vec();
    *p.nodes.last_mut().unwrap() = b.to_vec();
    p.action = None;
    p
}

fn optimize<T: Scalar>(ctx: &LagrangianCtx<T>, init: DiscretePath<T>, a0: T, lopts: LbfgsOptions<T>) -> Result<DiscretePath<T>> {
    let mut path = if !ctx.force_numeric && ctx.model.is_gaussian() {
        match lm::minimize_gaussian(ctx, &init, lopts.tol, lopts.max_iters) {
            Some((nodes, _)) => DiscretePath { nodes, horizon: init.horizon, action: None },
            None => init.clone(),
        }
    } else {
        quasi_newton(ctx, &init, lopts)
    };
    let a = ctx.action(&path)?;
    if a <= a0 {
        path.action = Some(a);
        Ok(path)
    } else {
        let mut p = init;
        p.action = Some(a0);
        Ok(p)
    }
}

fn quasi_newton<T: Scalar>(ctx: &LagrangianCtx<T>, init: &DiscretePath<T>, lopts: LbfgsOptions<T>) -> DiscretePath<T> {
    let d = init.dim();
    let n = init.nodes.len();
    let first = init.nodes[0].clone();
    let last = init.nodes[n - 1].clone();
    let horizon = init.horizon;
    let z0: Vec<T> = init.nodes[1..n - 1].iter().flatten().copied().collect();
    let build = |z: &[T]| -> DiscretePath<T> {
        let mut nodes = Vec::with_capacity(n);
        nodes.push(first.clone());
        nodes.extend(z.chunks(d).map(|c| c.to_vec()));
        nodes.push(last.clone());
        DiscretePath { nodes, horizon, action: None }
    };
    let out = lbfgs::minimize(
        z0,
        |z, g| {
            let p = build(z);
            if !p.nodes.iter().all(|v| crate::linalg::is_finite(v)) {
                return T::infinity();
            }
            match ctx.action_gradient(&p) {
                Ok((a, grad)) if a.is_finite() => {
                    for (slot, row) in g.chunks_mut(d).zip(&grad[1..n - 1]) {
                        slot.copy_from_slice(row);
                    }
                    a
                }
                _ => T::infinity(),
            }
        },
        lopts,
    );
    build(&out.x)
}

/// Forward flow out of `x_a` (nudged toward `x_b`), a short straight bridge,
/// and the reversal of an ascent out of `x_b` (nudged toward `x_a`).
fn flow_concat_init<T: Scalar>(ctx: &LagrangianCtx<T>, x_a: &[T], x_b: &[T], horizon: T, n_nodes: usize) -> Option<DiscretePath<T>> {
    let gap = dist(x_a, x_b);
    if gap == T::zero() {
        return DiscretePath::constant(x_a, horizon, n_nodes).ok();
    }
    let n_flow = (n_nodes * 9 / 20).max(2);
    let n_bridge = n_nodes - 2 * n_flow;
    if n_bridge < 2 {
        return None;
    }
    let t_flow = horizon * T::c(0.45);
    let dt = t_flow / T::of_usize(n_flow);
    let nudge = T::c(1e-2);
    let start = lerp(x_a, x_b, nudge);
    let end = lerp(x_b, x_a, nudge);
    let fwd = flow_nodes(ctx, &start, dt, n_flow, -T::one());
    let mut bwd = flow_nodes(ctx, &end, dt, n_flow, T::one());
    bwd.reverse();
    let bridge_from = fwd.last().unwrap().clone();
    let bridge_to = bwd[0].clone();
    let mut nodes = Vec::with_capacity(n_nodes);
    nodes.push(x_a.to_vec());
    nodes.extend(fwd.into_iter().skip(1));
    for k in 1..n_bridge - 1 {
        nodes.push(lerp(&bridge_from, &bridge_to, T::of_usize(k) / T::of_usize(n_bridge - 1)));
    }
    nodes.extend(bwd.into_iter().take(n_flow));
    nodes.push(x_b.to_vec());
    debug_assert_eq!(nodes.len(), n_nodes);
    let p = DiscretePath::new(nodes, horizon).ok()?;
    Some(if p.nodes.len() == n_nodes { p } else { pin(p.resampled(n_nodes), x_a, x_b) })
}

/// `steps + 1` RK4 nodes of `x' = sign * grad f`, frozen once the iterate
/// leaves the search box inflated by 50%.
fn flow_nodes<T: Scalar>(ctx: &LagrangianCtx<T>, x0: &[T], h: T, steps: usize, sign: T) -> Vec<Vec<T>> {
    let spec = &ctx.spec;
    let bounds = spec.search_box.inflate(T::c(0.5));
    let rhs = |x: &[T]| -> Vec<T> { spec.grad(x).into_iter().map(|v| sign * v).collect() };
    let mut x = x0.to_vec();
    let mut out = vec![x.clone()];
    let mut frozen = false;
    for _ in 0..steps {
        if !frozen {
            let k1 = rhs(&x);
            let x2: Vec<T> = x.iter().zip(&k1).map(|(&a, &k)| a + h * T::c(0.5) * k).collect();
            let k2 = rhs(&x2);
            let x3: Vec<T> = x.iter().zip(&k2).map(|(&a, &k)| a + h * T::c(0.5) * k).collect();
            let k3 = rhs(&x3);
            let x4: Vec<T> = x.iter().zip(&k3).map(|(&a, &k)| a + h * k).collect();
            let k4 = rhs(&x4);
            let next: Vec<T> = (0..x.len())
                .map(|i| x[i] + h / T::c(6.0) * (k1[i] + T::c(2.0) * (k2[i] + k3[i]) + k4[i]))
                .collect();
            if bounds.contains(&next) && crate::linalg::is_finite(&next) {
                x = next;
            } else {
                frozen = true;
            }
        }
        out.push(x.clone());
    }
    out
}

#[derive(Clone, Debug)]
pub struct QpOptions<T> {
    pub horizons: Vec<T>,
    pub n_nodes: usize,
    pub tol: T,
    pub max_iters: usize,
    /// Re-optimize the best candidate with doubled node count.
    pub refine: bool,
    /// Member points per component tried as endpoints.
    pub max_endpoints: usize,
    /// Largest time step; defaults to `1 / (2 rho)` with `rho` the largest
    /// Hessian spectral radius at the two endpoints. Coarser steps let the
    /// midpoint rule jump across barriers at spuriously low cost.
    pub max_dt: Option<T>,
    /// Node budget per path; horizons needing more nodes at `max_dt` are
    /// skipped, except the shortest one, which is capped instead.
    pub max_nodes: usize,
}

impl<T: Scalar> Default for QpOptions<T> {
    fn default() -> Self {
        Self {
            horizons: [1.0, 2.0, 4.0, 8.0, 16.0].iter().map(|&h| T::c(h)).collect(),
            n_nodes: 33,
            tol: T::c(1e-8),
            max_iters: 1000,
            refine: true,
            max_endpoints: 3,
            max_dt: None,
            max_nodes: 129,
        }
    }
}

#[derive(Clone, Debug)]
pub struct QuasiPotential<T> {
    pub value: T,
    pub witness: DiscretePath<T>,
    /// Horizons at which no initialization had finite action.
    pub infeasible_horizons: Vec<T>,
}

fn endpoints<T: Scalar>(c: &CriticalComponent<T>, max: usize) -> Vec<&[T]> {
    let mut v: Vec<&[T]> = vec![c.representative()];
    v.extend(c.points.iter().enumerate().filter(|(i, _)| *i != c.rep).map(|(_, p)| p.as_slice()));
    v.truncate(max.max(1));
    v
}

/// Cost of moving from one component to another: the smallest minimized
/// action over endpoint pairs and horizons, followed by one node-doubling
/// refinement of the winner. The reported value is the smaller of the two.
pub fn quasi_potential<T: Scalar>(
    ctx: &LagrangianCtx<T>,
    from: &CriticalComponent<T>,
    to: &CriticalComponent<T>,
    opts: &QpOptions<T>,
) -> Result<QuasiPotential<T>> {
    if from.id == to.id && from.points == to.points {
        let witness = DiscretePath { action: Some(T::zero()), ..DiscretePath::constant(from.representative(), T::one(), opts.n_nodes)? };
        return Ok(QuasiPotential { value: T::zero(), witness, infeasible_horizons: Vec::new() });
    }
    let dt_max = opts.max_dt.unwrap_or_else(|| {
        let rho = [from.representative(), to.representative()]
            .iter()
            .map(|x| sym_eigenvalues(&ctx.spec.hess(x), ctx.spec.dim()).iter().fold(T::zero(), |m, v| m.max(v.abs())))
            .fold(T::one(), T::max);
        T::one() / (T::c(2.0) * rho)
    });
    let shortest = opts.horizons.iter().cloned().fold(T::infinity(), T::min);
    let plan: Vec<(T, usize)> = opts
        .horizons
        .iter()
        .filter_map(|&h| {
            let need = (h / dt_max).ceil().to_usize().unwrap_or(usize::MAX).saturating_add(1).max(opts.n_nodes);
            if need <= opts.max_nodes {
                Some((h, need))
            } else if h == shortest {
                Some((h, opts.max_nodes))
            } else {
                log::debug!("horizon {h} skipped: {need} nodes exceed the budget");
                None
            }
        })
        .collect();
    let ea = endpoints(from, opts.max_endpoints);
    let eb = endpoints(to, opts.max_endpoints);
    let jobs: Vec<(usize, &[T], &[T], T, usize)> = ea
        .iter()
        .flat_map(|a| eb.iter().map(move |b| (*a, *b)))
        .flat_map(|(a, b)| plan.iter().map(move |&(h, n)| (a, b, h, n)))
        .enumerate()
        .map(|(i, (a, b, h, n))| (i, a, b, h, n))
        .collect();
    let mopts = MinimizeOptions { tol: opts.tol, max_iters: opts.max_iters, warm_start: None };
    let results: Vec<(usize, T, Result<DiscretePath<T>>)> = jobs
        .par_iter()
        .map(|&(i, a, b, h, n)| (i, h, minimize_action(ctx, a, b, h, n, &mopts)))
        .collect();
    let mut infeasible = Vec::new();
    let mut best: Option<(T, T, usize, DiscretePath<T>)> = None;
    for (i, h, r) in results {
        match r {
            Ok(p) => {
                let v = p.action.unwrap();
                let replace = match &best {
                    None => true,
                    Some((bv, bh, bi, _)) => v < *bv || (v == *bv && (h < *bh || (h == *bh && i < *bi))),
                };
                if replace {
                    best = Some((v, h, i, p));
                }
            }
            Err(Error::InfeasibleStart) => infeasible.push(h),
            Err(e) => return Err(e),
        }
    }
    let Some((value, _, _, witness)) = best else {
        let witness = DiscretePath {
            action: Some(T::infinity()),
            ..DiscretePath::straight(from.representative(), to.representative(), T::one(), opts.n_nodes)?
        };
        return Ok(QuasiPotential { value: T::infinity(), witness, infeasible_horizons: infeasible });
    };
    if !opts.refine {
        return Ok(QuasiPotential { value, witness, infeasible_horizons: infeasible });
    }
    let fine = witness.doubled();
    let mopts = MinimizeOptions { warm_start: Some(fine.clone()), ..mopts };
    let refined = minimize_action(ctx, witness.start(), witness.end(), witness.horizon, fine.nodes.len(), &mopts)?;
    let rv = refined.action.unwrap();
    if rv > value + T::c(1e-9) {
        log::debug!("refinement raised the action from {value} to {rv}; keeping the coarse path");
    }
    let (value, witness) = if rv <= value { (rv, refined) } else { (value, witness) };
    Ok(QuasiPotential { value, witness, infeasible_horizons: infeasible })
}

/// Per-step cost `c(x, y)`: the minimized action over unit horizon.
pub fn discrete_rate<T: Scalar>(ctx: &LagrangianCtx<T>, x: &[T], y: &[T], n_nodes: usize, opts: &MinimizeOptions<T>) -> Result<T> {
    if dist(x, y) == T::zero() && norm(&ctx.spec.grad(x)) == T::zero() {
        return Ok(T::zero());
    }
    match minimize_action(ctx, x, y, T::one(), n_nodes, opts) {
        Ok(p) => Ok(p.action.unwrap()),
        Err(Error::InfeasibleStart) => Ok(T::infinity()),
        Err(e) => Err(e),
    }
}

/// B-potential: `2 f / sigma^2` for constant variance and
/// `(2 / a) ln(a f + b)` for `sigma^2 = a f + b`.
pub fn b_potential<T: Scalar>(ctx: &LagrangianCtx<T>, x: &[T]) -> Result<T> {
    let fx = ctx.spec.f(x);
    match ctx.model {
        NoiseModel::Gaussian { variance: Variance::Constant(s2), .. } => Ok(T::c(2.0) * fx / s2),
        NoiseModel::Gaussian { variance: Variance::Affine { a, b }, .. } => {
            let s2 = a * fx + b;
            if !(s2 > T::zero()) {
                return Err(Error::NonPositiveVariance(s2.f64()));
            }
            if a == T::zero() {
                Ok(T::c(2.0) * fx / b)
            } else {
                Ok(T::c(2.0) / a * s2.ln())
            }
        }
        _ => Err(Error::InvalidArgument("the B-potential needs isotropic Gaussian noise".into())),
    }
}
