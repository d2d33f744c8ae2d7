use serde::{Deserialize, Serialize};

use crate::objective::CriticalComponent;
use crate::scalar::Scalar;
use crate::{Error, Result};

/// Disjoint balls of radius `eps` around the critical components.
#[derive(Clone, Debug)]
pub struct Neighborhoods<T> {
    points: Vec<Vec<Vec<T>>>,
    eps: T,
}

fn dist2<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + (x - y) * (x - y))
}

/// Squared distance from `p` to the segment `a -> b` and the parameter of
/// the closest point.
fn segment_dist2<T: Scalar>(p: &[T], a: &[T], b: &[T]) -> (T, T) {
    let (mut ab2, mut apab) = (T::zero(), T::zero());
    for i in 0..p.len() {
        let ab = b[i] - a[i];
        ab2 += ab * ab;
        apab += (p[i] - a[i]) * ab;
    }
    let t = if ab2 > T::zero() { (apab / ab2).max(T::zero()).min(T::one()) } else { T::zero() };
    let d = (0..p.len()).fold(T::zero(), |acc, i| {
        let c = a[i] + t * (b[i] - a[i]) - p[i];
        acc + c * c
    });
    (d, t)
}

impl<T: Scalar> Neighborhoods<T> {
    /// Fails with `OverlappingNeighborhoods` unless `eps` is below half the
    /// smallest distance between two components.
    pub fn new(components: &[CriticalComponent<T>], eps: T) -> Result<Self> {
        if !(eps > T::zero()) {
            return Err(Error::InvalidArgument("eps must be positive".into()));
        }
        let mut min_dist = T::infinity();
        for (i, a) in components.iter().enumerate() {
            for b in &components[i + 1..] {
                min_dist = min_dist.min(a.distance_to(b));
            }
        }
        if eps >= min_dist / T::c(2.0) {
            return Err(Error::OverlappingNeighborhoods { eps: eps.f64(), min_dist: min_dist.f64() });
        }
        Ok(Self { points: components.iter().map(|c| c.points.clone()).collect(), eps })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn eps(&self) -> T {
        self.eps
    }

    fn dist2_to(&self, c: usize, x: &[T]) -> T {
        self.points[c].iter().map(|p| dist2(p, x)).fold(T::infinity(), T::min)
    }

    /// Component whose `eps`-ball contains `x`.
    #[inline]
    pub fn locate(&self, x: &[T]) -> Option<usize> {
        let e2 = self.eps * self.eps;
        (0..self.points.len()).find(|&c| self.dist2_to(c, x) < e2)
    }
}

/// Occupation counts and next-visit transition counts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OccupationStats {
    pub eps: f64,
    pub eps_in: f64,
    pub eps_out: f64,
    pub counts: Vec<u64>,
    pub outside: u64,
    pub total: u64,
    /// `transitions[i][j]`: visits to `i` followed by a visit to `j`.
    pub transitions: Vec<Vec<u64>>,
    pub n_chains_contributing: usize,
}

impl OccupationStats {
    pub fn empty(eps: f64, k: usize) -> Self {
        Self {
            eps,
            eps_in: 0.5 * eps,
            eps_out: 1.5 * eps,
            counts: vec![0; k],
            outside: 0,
            total: 0,
            transitions: vec![vec![0; k]; k],
            n_chains_contributing: 0,
        }
    }

    #[inline]
    pub fn record(&mut self, c: Option<usize>) {
        match c {
            Some(i) => self.counts[i] += 1,
            None => self.outside += 1,
        }
        self.total += 1;
    }

    pub fn add_sequence(&mut self, seq: &[usize]) {
        for w in seq.windows(2) {
            self.transitions[w[0]][w[1]] += 1;
        }
    }

    /// Adds the counts of `other`, which must share `eps` and `k`.
    pub fn merge(&mut self, other: &Self) {
        assert_eq!(self.counts.len(), other.counts.len(), "merging stats of different component sets");
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        for (ra, rb) in self.transitions.iter_mut().zip(&other.transitions) {
            for (a, b) in ra.iter_mut().zip(rb) {
                *a += b;
            }
        }
        self.outside += other.outside;
        self.total += other.total;
        self.n_chains_contributing += other.n_chains_contributing;
    }

    pub fn fractions(&self) -> Vec<f64> {
        let t = self.total.max(1) as f64;
        self.counts.iter().map(|&c| c as f64 / t).collect()
    }

    pub fn outside_fraction(&self) -> f64 {
        self.outside as f64 / self.total.max(1) as f64
    }

    pub fn n_transitions(&self) -> u64 {
        self.transitions.iter().flatten().sum()
    }
}

/// Occupation statistics of recorded iterates; every trajectory counts as
/// one contributing chain.
pub fn occupation_measure<T: Scalar, P: AsRef<[T]>>(
    trajectories: &[Vec<P>],
    components: &[CriticalComponent<T>],
    eps: T,
) -> Result<OccupationStats> {
    let hoods = Neighborhoods::new(components, eps)?;
    let mut stats = OccupationStats::empty(eps.f64(), components.len());
    for tr in trajectories {
        for x in tr {
            stats.record(hoods.locate(x.as_ref()));
        }
        stats.n_chains_contributing += 1;
    }
    Ok(stats)
}

/// A stay near one component: entered at step `entry`, left at step `exit`
/// (`None` while still inside at the end of the run).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Visit {
    pub component: usize,
    pub entry: u64,
    pub exit: Option<u64>,
}

/// Streaming hysteresis detector. A visit starts when the chain comes within
/// `eps_in` of a component, including a step whose straight segment crosses
/// the inner ball, and ends once the chain is farther than `eps_out`.
pub struct VisitDetector<'a, T> {
    hoods: &'a Neighborhoods<T>,
    eps_in2: T,
    eps_out2: T,
    current: Option<Visit>,
    visits: Vec<Visit>,
}

impl<'a, T: Scalar> VisitDetector<'a, T> {
    pub fn new(hoods: &'a Neighborhoods<T>, eps_in: T, eps_out: T) -> Self {
        assert!(eps_in < eps_out, "eps_in must be below eps_out");
        Self { hoods, eps_in2: eps_in * eps_in, eps_out2: eps_out * eps_out, current: None, visits: Vec::new() }
    }

    /// Feeds the iterate at step `n`; `prev` is the iterate at step `n - 1`.
    pub fn observe(&mut self, n: u64, prev: Option<&[T]>, x: &[T]) {
        let mut left = None;
        if let Some(v) = self.current {
            if self.hoods.dist2_to(v.component, x) <= self.eps_out2 {
                return;
            }
            self.visits.push(Visit { exit: Some(n), ..v });
            self.current = None;
            left = Some(v.component);
        }
        let mut hits: Vec<(T, usize)> = Vec::new();
        for c in 0..self.hoods.len() {
            if Some(c) == left {
                continue;
            }
            let hit = match prev {
                Some(a) => self.hoods.points[c]
                    .iter()
                    .map(|p| segment_dist2(p, a, x))
                    .filter(|&(d, _)| d < self.eps_in2)
                    .map(|(_, t)| t)
                    .fold(None, |m: Option<T>, t| Some(m.map_or(t, |m| m.min(t)))),
                None => (self.hoods.dist2_to(c, x) < self.eps_in2).then_some(T::zero()),
            };
            if let Some(t) = hit {
                hits.push((t, c));
            }
        }
        hits.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal).then(a.1.cmp(&b.1)));
        let last = hits.len();
        for (idx, &(_, c)) in hits.iter().enumerate() {
            let v = Visit { component: c, entry: n, exit: None };
            if idx + 1 == last && self.hoods.dist2_to(c, x) <= self.eps_out2 {
                self.current = Some(v);
            } else {
                self.visits.push(Visit { exit: Some(n), ..v });
            }
        }
    }

    /// Visits so far, the open one last.
    pub fn visits(&self) -> Vec<Visit> {
        let mut v = self.visits.clone();
        v.extend(self.current);
        v
    }

    pub fn sequence(&self) -> Vec<usize> {
        visit_sequence(&self.visits())
    }
}

/// Visits of a recorded trajectory (consecutive iterates, step = index).
pub fn detect_visits<T: Scalar, P: AsRef<[T]>>(
    trajectory: &[P],
    components: &[CriticalComponent<T>],
    eps_in: T,
    eps_out: T,
) -> Result<Vec<Visit>> {
    if !(eps_in > T::zero() && eps_in < eps_out) {
        return Err(Error::InvalidArgument("need 0 < eps_in < eps_out".into()));
    }
    let hoods = Neighborhoods { points: components.iter().map(|c| c.points.clone()).collect(), eps: eps_in };
    let mut det = VisitDetector::new(&hoods, eps_in, eps_out);
    let mut prev: Option<&[T]> = None;
    for (n, x) in trajectory.iter().enumerate() {
        det.observe(n as u64, prev, x.as_ref());
        prev = Some(x.as_ref());
    }
    Ok(det.visits())
}

pub fn visit_sequence(visits: &[Visit]) -> Vec<usize> {
    visits.iter().map(|v| v.component).collect()
}

/// Wilson score interval for `successes` out of `n` at normal quantile `z`.
/// Returns `[0, 1]` when `n = 0`.
pub fn wilson_interval(successes: u64, n: u64, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let nf = n as f64;
    let p = successes as f64 / nf;
    let z2 = z * z;
    let denom = 1.0 + z2 / nf;
    let center = (p + z2 / (2.0 * nf)) / denom;
    let half = z * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt() / denom;
    ((center - half).max(0.0), (center + half).min(1.0))
}

/// Row-normalised next-visit frequencies with 95% Wilson intervals. Rows
/// without observed departures have `p = 0` and the interval `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransitionEstimate {
    pub counts: Vec<Vec<u64>>,
    pub row_totals: Vec<u64>,
    pub p: Vec<Vec<f64>>,
    pub lower: Vec<Vec<f64>>,
    pub upper: Vec<Vec<f64>>,
}

impl TransitionEstimate {
    pub fn from_counts(counts: Vec<Vec<u64>>) -> Result<Self> {
        let row_totals: Vec<u64> = counts.iter().map(|r| r.iter().sum()).collect();
        if row_totals.iter().all(|&t| t == 0) {
            return Err(Error::InsufficientTransitions("no completed transition".into()));
        }
        let mut p = Vec::new();
        let mut lower = Vec::new();
        let mut upper = Vec::new();
        for (row, &n) in counts.iter().zip(&row_totals) {
            p.push(row.iter().map(|&c| if n == 0 { 0.0 } else { c as f64 / n as f64 }).collect());
            let (lo, hi): (Vec<f64>, Vec<f64>) = row.iter().map(|&c| wilson_interval(c, n, 1.959_963_984_540_054)).unzip();
            lower.push(lo);
            upper.push(hi);
        }
        Ok(Self { counts, row_totals, p, lower, upper })
    }
}

pub fn empirical_transition_matrix(sequences: &[Vec<usize>], k: usize) -> Result<TransitionEstimate> {
    let mut counts = vec![vec![0u64; k]; k];
    for s in sequences {
        for w in s.windows(2) {
            if w[0] >= k || w[1] >= k {
                return Err(Error::InvalidArgument(format!("component id out of range (k = {k})")));
            }
            counts[w[0]][w[1]] += 1;
        }
    }
    TransitionEstimate::from_counts(counts)
}
