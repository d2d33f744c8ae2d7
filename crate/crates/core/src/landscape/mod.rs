//! Transition graph between critical components, in-tree energies and the
//! Gibbs prediction they induce.

mod arborescence;

pub use arborescence::{min_in_tree, min_in_tree_brute_force, tree_weight, InTree};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::action::{quasi_potential, LagrangianCtx, QpOptions};
use crate::objective::CriticalComponent;
use crate::path::DiscretePath;
use crate::scalar::Scalar;
use crate::{Error, Result};

/// Pairwise transition costs; `q[i][j]` is the cost of moving from `i` to `j`.
#[derive(Clone, Debug, PartialEq)]
pub struct CostMatrix<T> {
    pub q: Vec<Vec<T>>,
}

impl<T: Scalar> CostMatrix<T> {
    /// Checks shape, zero diagonal and non-negativity (`+inf` allowed).
    pub fn new(q: Vec<Vec<T>>) -> Result<Self> {
        let k = q.len();
        if k == 0 {
            return Err(Error::EmptyInput("cost matrix needs at least one component"));
        }
        for (i, row) in q.iter().enumerate() {
            if row.len() != k {
                return Err(Error::InvalidArgument("cost matrix must be square".into()));
            }
            if row[i] != T::zero() {
                return Err(Error::InvalidArgument(format!("q[{i}][{i}] must be 0")));
            }
            if row.iter().any(|v| v.is_nan() || *v < T::zero()) {
                return Err(Error::InvalidArgument(format!("row {i} has a negative or NaN entry")));
            }
        }
        Ok(Self { q })
    }

    pub fn k(&self) -> usize {
        self.q.len()
    }

    /// Every entry is finite (Assumption 4 of the transition graph).
    pub fn all_finite(&self) -> bool {
        self.q.iter().flatten().all(|v| v.is_finite())
    }

    pub fn infinite_pairs(&self) -> Vec<(usize, usize)> {
        let k = self.k();
        (0..k)
            .flat_map(|i| (0..k).map(move |j| (i, j)))
            .filter(|&(i, j)| !self.q[i][j].is_finite())
            .collect()
    }

    /// Pairs whose cost through intermediate components undercuts the
    /// direct search by more than `rel`: `(i, j, direct, composed)`.
    pub fn multi_hop_gaps(&self, rel: T) -> Vec<(usize, usize, T, T)> {
        let k = self.k();
        let mut c = self.q.clone();
        for m in 0..k {
            for i in 0..k {
                for j in 0..k {
                    let via = c[i][m] + c[m][j];
                    if via < c[i][j] {
                        c[i][j] = via;
                    }
                }
            }
        }
        let mut out = Vec::new();
        for i in 0..k {
            for j in 0..k {
                if c[i][j] < self.q[i][j] * (T::one() - rel) {
                    out.push((i, j, self.q[i][j], c[i][j]));
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct CostReport<T> {
    pub matrix: CostMatrix<T>,
    /// Realizing path per ordered pair (`None` on the diagonal).
    pub witnesses: Vec<Vec<Option<DiscretePath<T>>>>,
    /// Pairs for which the reversed witness of the opposite pair was cheaper
    /// than the direct search.
    pub tightened_by_reversal: Vec<(usize, usize)>,
}

/// Quasi-potential between every ordered pair of components. After the
/// direct searches each entry is tightened by the action of the reversed
/// opposite witness, which is also an admissible path.
pub fn cost_matrix<T: Scalar>(
    ctx: &LagrangianCtx<T>,
    components: &[CriticalComponent<T>],
    opts: &QpOptions<T>,
) -> Result<CostReport<T>> {
    let k = components.len();
    if k == 0 {
        return Err(Error::EmptyInput("cost matrix needs at least one component"));
    }
    let pairs: Vec<(usize, usize)> = (0..k).flat_map(|i| (0..k).map(move |j| (i, j))).filter(|(i, j)| i != j).collect();
    let results: Vec<_> = pairs
        .par_iter()
        .map(|&(i, j)| match quasi_potential(ctx, &components[i], &components[j], opts) {
            Ok(r) => Ok(Some(r)),
            // no admissible path was found: the cost is infinite
            Err(Error::InfeasibleStart) => Ok(None),
            Err(e) => Err(e),
        })
        .collect::<Result<_>>()?;
    let mut q = vec![vec![T::zero(); k]; k];
    let mut witnesses: Vec<Vec<Option<DiscretePath<T>>>> = vec![vec![None; k]; k];
    for (&(i, j), r) in pairs.iter().zip(results) {
        match r {
            Some(r) => {
                q[i][j] = r.value;
                witnesses[i][j] = Some(r.witness);
            }
            None => q[i][j] = T::infinity(),
        }
    }
    let mut tightened = Vec::new();
    for &(i, j) in &pairs {
        let Some(w) = &witnesses[j][i] else { continue };
        if !w.action.is_some_and(|a| a.is_finite()) {
            continue;
        }
        let rev = w.reversed();
        let a = ctx.action(&rev)?;
        if !a.is_finite() {
            continue;
        }
        if a < q[i][j] {
            q[i][j] = a;
            witnesses[i][j] = Some(DiscretePath { action: Some(a), ..rev });
            tightened.push((i, j));
        }
    }
    let matrix = CostMatrix::new(q)?;
    if !matrix.all_finite() {
        log::warn!(
            "transition costs are not all finite ({} pairs); energies use finite edges only",
            matrix.infinite_pairs().len()
        );
    }
    Ok(CostReport { matrix, witnesses, tightened_by_reversal: tightened })
}

/// Energies normalized to minimum zero, with the realizing in-trees.
#[derive(Clone, Debug, PartialEq)]
pub struct EnergyLevels<T> {
    pub e: Vec<T>,
    /// Minimum in-tree weight per root before normalization.
    pub raw: Vec<T>,
    pub witnesses: Vec<Option<InTree<T>>>,
}

impl<T: Scalar> EnergyLevels<T> {
    /// Levels given directly (closed forms); no in-tree witnesses.
    pub fn from_values(values: Vec<T>) -> Result<Self> {
        let m = values.iter().cloned().fold(T::infinity(), T::min);
        if !m.is_finite() {
            return Err(Error::EmptyInput("energy levels need at least one finite value"));
        }
        let e = values.iter().map(|&v| v - m).collect();
        let k = values.len();
        Ok(Self { e, raw: values, witnesses: vec![None; k] })
    }

    /// Indices of minimal energy.
    pub fn ground_state(&self) -> Vec<usize> {
        self.e.iter().enumerate().filter(|(_, v)| **v == T::zero()).map(|(i, _)| i).collect()
    }
}

/// `e_i = W_i - min_j W_j` with `W_i` the minimum in-tree weight rooted at
/// `i`. Roots without a finite in-tree get `+inf`.
pub fn energy_levels<T: Scalar>(q: &CostMatrix<T>) -> Result<EnergyLevels<T>> {
    let k = q.k();
    let trees: Vec<Result<InTree<T>>> = (0..k).into_par_iter().map(|r| min_in_tree(&q.q, r)).collect();
    let mut raw = Vec::with_capacity(k);
    let mut witnesses = Vec::with_capacity(k);
    for t in trees {
        match t {
            Ok(t) => {
                raw.push(t.weight);
                witnesses.push(Some(t));
            }
            Err(Error::NoFiniteTree(_)) => {
                raw.push(T::infinity());
                witnesses.push(None);
            }
            Err(e) => return Err(e),
        }
    }
    let m = raw.iter().cloned().fold(T::infinity(), T::min);
    if !m.is_finite() {
        return Err(Error::NoFiniteTree(0));
    }
    let e = raw.iter().map(|&w| w - m).collect();
    Ok(EnergyLevels { e, raw, witnesses })
}

/// `p_i` proportional to `exp(-e_i / gamma)`, stabilized by subtracting the
/// minimum energy.
pub fn gibbs<T: Scalar>(e: &[T], gamma: T) -> Result<Vec<T>> {
    let lp = log_gibbs(e, gamma)?;
    Ok(lp.into_iter().map(|v| v.exp()).collect())
}

/// Logarithm of [`gibbs`], exact for arbitrarily large energy gaps.
pub fn log_gibbs<T: Scalar>(e: &[T], gamma: T) -> Result<Vec<T>> {
    if !(gamma > T::zero()) {
        return Err(Error::InvalidArgument("gibbs needs gamma > 0".into()));
    }
    if e.is_empty() {
        return Err(Error::EmptyInput("gibbs needs at least one energy"));
    }
    let m = e.iter().cloned().fold(T::infinity(), T::min);
    let z: Vec<T> = e.iter().map(|&v| -(v - m) / gamma).collect();
    let log_norm = z.iter().map(|v| v.exp()).fold(T::zero(), |a, b| a + b).ln();
    Ok(z.into_iter().map(|v| v - log_norm).collect())
}

/// Closed-form Gaussian energies `2 f_i / sigma2`, normalized to minimum zero.
pub fn gaussian_energy_closed_form<T: Scalar>(components: &[CriticalComponent<T>], sigma2: T) -> Result<EnergyLevels<T>> {
    if components.is_empty() {
        return Err(Error::EmptyInput("no components"));
    }
    if !(sigma2 > T::zero()) {
        return Err(Error::NonPositiveVariance(sigma2.f64()));
    }
    EnergyLevels::from_values(components.iter().map(|c| T::c(2.0) * c.f_value / sigma2).collect())
}

/// A non-minimizing component and a minimizing one of strictly lower energy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dominance {
    pub component: usize,
    pub dominated_by: usize,
    pub gap: f64,
}

/// For each non-minimizing component, the minimizing component of lowest
/// energy (smallest id on ties) together with the positive energy gap.
pub fn dominance_report<T: Scalar>(components: &[CriticalComponent<T>], e: &EnergyLevels<T>) -> Result<Vec<Dominance>> {
    if components.len() != e.e.len() {
        return Err(Error::InvalidArgument("components and energies differ in length".into()));
    }
    let best_min = components
        .iter()
        .enumerate()
        .filter(|(_, c)| c.minimizing)
        .min_by(|(i, _), (j, _)| e.e[*i].partial_cmp(&e.e[*j]).unwrap_or(std::cmp::Ordering::Equal).then(i.cmp(j)))
        .map(|(i, _)| i);
    let mut out = Vec::new();
    for (i, c) in components.iter().enumerate() {
        if c.minimizing {
            continue;
        }
        match best_min {
            Some(j) if e.e[j] < e.e[i] => out.push(Dominance { component: i, dominated_by: j, gap: (e.e[i] - e.e[j]).f64() }),
            _ => return Err(Error::DominanceViolation(i)),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::NoiseModel;
    use crate::objective::{CriticalOptions, DoubleWell, ObjectiveSpec, SearchBox};

    #[test]
    fn two_state_energies() {
        let q = CostMatrix::new(vec![vec![0.0, 3.0], vec![1.0, 0.0]]).unwrap();
        let e = energy_levels(&q).unwrap();
        assert_eq!(e.raw, vec![1.0, 3.0]);
        assert_eq!(e.e, vec![0.0, 2.0]);
        let flat = CostMatrix::new(vec![vec![0.0, 2.0, 2.0], vec![2.0, 0.0, 2.0], vec![2.0, 2.0, 0.0]]).unwrap();
        assert_eq!(energy_levels(&flat).unwrap().e, vec![0.0; 3]);
        let single = CostMatrix::new(vec![vec![0.0]]).unwrap();
        assert_eq!(energy_levels(&single).unwrap().e, vec![0.0]);
    }

    #[test]
    fn gibbs_values() {
        let p = gibbs(&[0.0f64, 2.0], 1.0).unwrap();
        assert!((p[0] - 0.880797).abs() < 1e-6 && (p[1] - 0.119203).abs() < 1e-6);
        let p = gibbs(&[0.0, 1.0, 0.5], 1e-6).unwrap();
        assert!(p[0] >= 1.0 - 1e-10);
        assert_eq!(gibbs(&[0.3; 4], 0.1).unwrap(), vec![0.25; 4]);
        let e = [0.0f64, 0.7, 1.3];
        let lp = log_gibbs(&e, 0.05).unwrap();
        assert!(((lp[1] - lp[2]) - (-(0.7 - 1.3) / 0.05)).abs() < 1e-10);
        assert!(gibbs(&e, 0.0).is_err());
    }

    #[test]
    fn double_well_landscape() {
        let spec: ObjectiveSpec<f64> = ObjectiveSpec::new(DoubleWell, SearchBox::cube(1, -2.0, 2.0)).unwrap();
        let comps = CriticalOptions::default().run(&spec).unwrap();
        let ctx = LagrangianCtx::new(spec, NoiseModel::gaussian(1, 1.0).unwrap()).unwrap();
        let report = cost_matrix(&ctx, &comps, &QpOptions::default()).unwrap();
        let q = &report.matrix.q;
        // component order: the two wells (f = 0) first, then the barrier
        assert!((q[0][2] - 2.0).abs() < 0.1 && q[2][0] <= 0.02, "{q:?}");
        let e = energy_levels(&report.matrix).unwrap();
        let closed = gaussian_energy_closed_form(&comps, 1.0).unwrap();
        assert_eq!(closed.e, vec![0.0, 0.0, 2.0]);
        for (a, b) in e.e.iter().zip(&closed.e) {
            assert!((a - b).abs() <= 0.07 * b.max(2.0f64), "{:?}", e.e);
        }
        let dom = dominance_report(&comps, &e).unwrap();
        assert_eq!(dom.len(), 1);
        assert_eq!(dom[0].component, 2);
        assert!(dom[0].gap > 1.8);
        let halved = gaussian_energy_closed_form(&comps, 2.0).unwrap();
        assert_eq!(halved.e[2], 1.0);
    }

    #[test]
    fn dominance_violation_is_reported() {
        let spec: ObjectiveSpec<f64> = ObjectiveSpec::new(DoubleWell, SearchBox::cube(1, -2.0, 2.0)).unwrap();
        let comps = CriticalOptions::default().run(&spec).unwrap();
        let bad = EnergyLevels::from_values(vec![1.0, 1.0, 0.0]).unwrap();
        assert!(matches!(dominance_report(&comps, &bad), Err(Error::DominanceViolation(2))));
    }
}
