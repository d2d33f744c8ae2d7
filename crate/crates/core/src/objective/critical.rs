use std::cmp::Ordering;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ObjectiveSpec;
use crate::linalg::{self, dist, mat_vec, norm, norm2};
use crate::scalar::Scalar;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Minimizer,
    Maximizer,
    Saddle,
    Degenerate,
}

/// Counts of positive, negative and zero Hessian eigenvalues.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EigSignature {
    pub n_pos: usize,
    pub n_neg: usize,
    pub n_zero: usize,
}

/// A cluster of critical points sharing one objective value.
#[derive(Clone, Debug, PartialEq)]
pub struct CriticalComponent<T> {
    pub id: usize,
    pub points: Vec<Vec<T>>,
    /// Index into `points` of the member with the smallest gradient norm.
    pub rep: usize,
    pub f_value: T,
    pub kind: Kind,
    pub eig_signature: EigSignature,
    /// Local minimizer of `f`: a `Minimizer`, or a `Degenerate` component
    /// that passes the probe test.
    pub minimizing: bool,
}

impl<T: Scalar> CriticalComponent<T> {
    pub fn representative(&self) -> &[T] {
        &self.points[self.rep]
    }

    /// Smallest distance between members of two components.
    pub fn distance_to(&self, other: &Self) -> T {
        self.points
            .iter()
            .flat_map(|a| other.points.iter().map(move |b| dist(a, b)))
            .fold(T::infinity(), T::min)
    }

    /// Distance from `x` to the nearest member point.
    pub fn distance_from(&self, x: &[T]) -> T {
        self.points.iter().map(|p| dist(p, x)).fold(T::infinity(), T::min)
    }
}

/// Tolerances for locating and grouping critical points.
#[derive(Clone, Debug)]
pub struct CriticalOptions<T> {
    pub grid_per_dim: usize,
    pub newton_tol: T,
    pub max_newton_iters: usize,
    /// Defaults to `1e-2 * box diameter`.
    pub link_tol: Option<T>,
    pub tol_f: T,
    /// Relative zero threshold: `|lambda| <= eig_tol * (1 + max |lambda|)`.
    pub eig_tol: T,
}

impl<T: Scalar> Default for CriticalOptions<T> {
    fn default() -> Self {
        Self {
            grid_per_dim: 40,
            newton_tol: T::c(1e-8),
            max_newton_iters: 100,
            link_tol: None,
            tol_f: T::c(1e-6),
            eig_tol: T::c(1e-6),
        }
    }
}

impl<T: Scalar> CriticalOptions<T> {
    /// find, cluster and classify in one pass.
    pub fn run(&self, spec: &ObjectiveSpec<T>) -> Result<Vec<CriticalComponent<T>>> {
        let pts = find_critical_points(spec, self.grid_per_dim, self.newton_tol, self.max_newton_iters)?;
        let link = self.link_tol.unwrap_or_else(|| T::c(1e-2) * spec.search_box.diameter());
        let mut comps = cluster_components(&pts, spec, link, self.tol_f)?;
        for c in &mut comps {
            c.kind = classify_component(c, spec, self.eig_tol);
        }
        finalize_minimizing(&mut comps, spec);
        Ok(comps)
    }
}

enum Seed<T> {
    Converged(Vec<T>),
    Dropped,
}

/// Multi-start Newton on `grad f = 0` from a uniform grid over the box.
///
/// Seeds that do not converge or that leave the box inflated by 10% are
/// dropped. When the Hessian is singular the seed takes damped descent steps
/// on `|grad f|^2 / 2` instead.
pub fn find_critical_points<T: Scalar>(
    spec: &ObjectiveSpec<T>,
    grid_per_dim: usize,
    newton_tol: T,
    max_newton_iters: usize,
) -> Result<Vec<Vec<T>>> {
    if grid_per_dim < 2 {
        return Err(Error::InvalidArgument("grid_per_dim must be >= 2".into()));
    }
    if !(newton_tol > T::zero()) {
        return Err(Error::InvalidArgument("newton_tol must be positive".into()));
    }
    let bounds = spec.search_box.inflate(T::c(0.1));
    let seeds = spec.search_box.grid(grid_per_dim);
    let results: Vec<Seed<T>> = seeds
        .into_par_iter()
        .map(|x0| refine(spec, x0, newton_tol, max_newton_iters, &bounds))
        .collect();

    let dedup_tol = T::c(1e-6) * (T::one() + spec.search_box.diameter());
    let mut out: Vec<Vec<T>> = Vec::new();
    for r in results {
        if let Seed::Converged(p) = r {
            if out.iter().all(|q| dist(q, &p) > dedup_tol) {
                out.push(p);
            }
        }
    }
    Ok(out)
}

fn refine<T: Scalar>(
    spec: &ObjectiveSpec<T>,
    mut x: Vec<T>,
    tol: T,
    max_iters: usize,
    bounds: &super::SearchBox<T>,
) -> Seed<T> {
    let d = x.len();
    let mut g = spec.grad(&x);
    let mut merit = norm2(&g);
    let mut polish = 0;
    for _ in 0..max_iters {
        if !linalg::is_finite(&x) || !bounds.contains(&x) {
            return Seed::Dropped;
        }
        if merit.sqrt() <= tol {
            polish += 1;
            if polish > 3 {
                break;
            }
        }
        let h = spec.hess(&x);
        let neg_g: Vec<T> = g.iter().map(|&v| -v).collect();
        let mut accepted = false;
        if let Some(step) = linalg::solve(&h, &neg_g) {
            let mut alpha = T::one();
            for _ in 0..30 {
                let y: Vec<T> = x.iter().zip(&step).map(|(&a, &s)| a + alpha * s).collect();
                let gy = spec.grad(&y);
                let my = norm2(&gy);
                if my < merit {
                    x = y;
                    g = gy;
                    merit = my;
                    accepted = true;
                    break;
                }
                alpha *= T::c(0.5);
            }
        }
        if !accepted {
            if merit.sqrt() <= tol {
                break;
            }
            // damped descent on |g|^2 / 2, whose gradient is H g
            let hg = mat_vec(&h, &g);
            let hg2 = norm2(&hg);
            if hg2 == T::zero() || !hg2.is_finite() {
                return Seed::Dropped;
            }
            let mut alpha = merit / hg2;
            let mut moved = false;
            for _ in 0..40 {
                let y: Vec<T> = x.iter().zip(&hg).map(|(&a, &s)| a - alpha * s).collect();
                let gy = spec.grad(&y);
                let my = norm2(&gy);
                if my < merit {
                    x = y;
                    g = gy;
                    merit = my;
                    moved = true;
                    break;
                }
                alpha *= T::c(0.5);
            }
            if !moved {
                break;
            }
        }
    }
    let _ = d;
    if merit.sqrt() <= tol && bounds.contains(&x) && linalg::is_finite(&x) {
        Seed::Converged(x)
    } else {
        Seed::Dropped
    }
}

fn lex_cmp<T: Scalar>(a: &[T], b: &[T]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.partial_cmp(y) {
            Some(Ordering::Equal) | None => continue,
            Some(o) => return o,
        }
    }
    Ordering::Equal
}

/// Single-linkage clustering at `link_tol`. Components are ordered by
/// objective value (values within `tol_f` tie) and then lexicographically by
/// representative; ids follow that order. Kinds are filled by
/// [`classify_component`] with the default relative tolerance.
pub fn cluster_components<T: Scalar>(
    points: &[Vec<T>],
    spec: &ObjectiveSpec<T>,
    link_tol: T,
    tol_f: T,
) -> Result<Vec<CriticalComponent<T>>> {
    if points.is_empty() {
        return Err(Error::EmptyInput("no critical points to cluster"));
    }
    let n = points.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for i in 0..n {
        for j in i + 1..n {
            if dist(&points[i], &points[j]) <= link_tol {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut slot = vec![usize::MAX; n];
    for i in 0..n {
        let r = find(&mut parent, i);
        if slot[r] == usize::MAX {
            slot[r] = groups.len();
            groups.push(Vec::new());
        }
        groups[slot[r]].push(i);
    }

    let mut comps: Vec<CriticalComponent<T>> = groups
        .into_iter()
        .map(|members| {
            let mut pts: Vec<Vec<T>> = members.iter().map(|&i| points[i].clone()).collect();
            pts.sort_by(|a, b| lex_cmp(a, b));
            let rep = (0..pts.len())
                .min_by(|&a, &b| {
                    norm(&spec.grad(&pts[a]))
                        .partial_cmp(&norm(&spec.grad(&pts[b])))
                        .unwrap_or(Ordering::Equal)
                })
                .unwrap_or(0);
            let f_value = spec.f(&pts[rep]);
            let spread = pts.iter().map(|p| (spec.f(p) - f_value).abs()).fold(T::zero(), T::max);
            if spread > tol_f {
                log::warn!("component at {:?}: f spread {} exceeds tol_f {}", pts[rep], spread, tol_f);
            }
            let mut c = CriticalComponent {
                id: 0,
                points: pts,
                rep,
                f_value,
                kind: Kind::Degenerate,
                eig_signature: EigSignature { n_pos: 0, n_neg: 0, n_zero: 0 },
                minimizing: false,
            };
            c.kind = classify_component(&c, spec, T::c(1e-6));
            c
        })
        .collect();

    // sort by f, then group values within tol_f and order each group lexicographically
    comps.sort_by(|a, b| a.f_value.partial_cmp(&b.f_value).unwrap_or(Ordering::Equal));
    let mut ordered = Vec::with_capacity(comps.len());
    let mut i = 0;
    while i < comps.len() {
        let start = comps[i].f_value;
        let mut j = i + 1;
        while j < comps.len() && comps[j].f_value - start <= tol_f {
            j += 1;
        }
        let mut group: Vec<_> = comps[i..j].to_vec();
        group.sort_by(|a, b| lex_cmp(a.representative(), b.representative()));
        ordered.extend(group);
        i = j;
    }
    for (id, c) in ordered.iter_mut().enumerate() {
        c.id = id;
    }
    finalize_minimizing(&mut ordered, spec);

    let sep = ordered
        .iter()
        .enumerate()
        .flat_map(|(i, a)| ordered[i + 1..].iter().map(move |b| a.distance_to(b)))
        .fold(T::infinity(), T::min);
    if sep <= T::c(2.0) * link_tol {
        log::warn!("components separated by {} <= 2*link_tol ({})", sep, link_tol);
    }
    Ok(ordered)
}

/// Hessian signature at the representative; eigenvalues with
/// `|lambda| <= eig_tol * (1 + max|lambda|)` count as zero.
pub fn classify_component<T: Scalar>(c: &CriticalComponent<T>, spec: &ObjectiveSpec<T>, eig_tol: T) -> Kind {
    let sig = eig_signature(c.representative(), spec, eig_tol);
    kind_of(sig)
}

fn eig_signature<T: Scalar>(x: &[T], spec: &ObjectiveSpec<T>, eig_tol: T) -> EigSignature {
    let ev = linalg::sym_eigenvalues(&spec.hess(x), spec.dim());
    let scale = ev.iter().fold(T::zero(), |m, v| m.max(v.abs()));
    let zero = eig_tol * (T::one() + scale);
    let mut sig = EigSignature { n_pos: 0, n_neg: 0, n_zero: 0 };
    for v in ev {
        if v.abs() <= zero {
            sig.n_zero += 1;
        } else if v > T::zero() {
            sig.n_pos += 1;
        } else {
            sig.n_neg += 1;
        }
    }
    sig
}

fn kind_of(sig: EigSignature) -> Kind {
    if sig.n_zero > 0 {
        Kind::Degenerate
    } else if sig.n_neg == 0 {
        Kind::Minimizer
    } else if sig.n_pos == 0 {
        Kind::Maximizer
    } else {
        Kind::Saddle
    }
}

/// `f(x) <= f(x + delta u)` for `probes` random unit directions `u`.
pub fn local_min_probe<T: Scalar>(spec: &ObjectiveSpec<T>, x: &[T], delta: T, probes: usize, seed: u64) -> bool {
    use rand_distr::{Distribution, StandardNormal};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f0 = spec.f(x);
    (0..probes).all(|_| {
        let u: Vec<T> = (0..x.len())
            .map(|_| T::c(StandardNormal.sample(&mut rng)))
            .collect();
        let nu = norm(&u);
        let y: Vec<T> = x.iter().zip(&u).map(|(&a, &b)| a + delta * b / nu).collect();
        f0 <= spec.f(&y)
    })
}

fn finalize_minimizing<T: Scalar>(comps: &mut [CriticalComponent<T>], spec: &ObjectiveSpec<T>) {
    for c in comps.iter_mut() {
        c.eig_signature = eig_signature(c.representative(), spec, T::c(1e-6));
        c.minimizing = match c.kind {
            Kind::Minimizer => true,
            Kind::Degenerate => local_min_probe(spec, c.representative(), T::c(1e-3), 64, 0x5eed),
            _ => false,
        };
    }
}
