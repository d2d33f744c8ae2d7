use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::linalg::{self, lerp};
use crate::scalar::Scalar;
use crate::{Error, Result};

/// Piecewise-linear curve on `[0, horizon]` sampled at `N + 1` equally spaced
/// times. `action` caches the value computed by the action functional;
/// `Some(inf)` marks an infinite action.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscretePath<T> {
    pub nodes: Vec<Vec<T>>,
    pub horizon: T,
    pub action: Option<T>,
}

impl<T: Scalar> DiscretePath<T> {
    pub fn new(nodes: Vec<Vec<T>>, horizon: T) -> Result<Self> {
        if nodes.len() < 2 {
            return Err(Error::InvalidArgument("a path needs at least two nodes".into()));
        }
        if !(horizon > T::zero()) || !horizon.is_finite() {
            return Err(Error::InvalidArgument("path horizon must be positive and finite".into()));
        }
        let d = nodes[0].len();
        if nodes.iter().any(|n| n.len() != d || !linalg::is_finite(n)) {
            return Err(Error::InvalidArgument("path nodes must be finite and of equal dimension".into()));
        }
        Ok(Self { nodes, horizon, action: None })
    }

    /// Straight segment from `a` to `b` with `n_nodes` nodes.
    pub fn straight(a: &[T], b: &[T], horizon: T, n_nodes: usize) -> Result<Self> {
        let n = n_nodes.max(2) - 1;
        let nodes = (0..=n).map(|k| lerp(a, b, T::of_usize(k) / T::of_usize(n))).collect();
        Self::new(nodes, horizon)
    }

    pub fn constant(x: &[T], horizon: T, n_nodes: usize) -> Result<Self> {
        Self::new(vec![x.to_vec(); n_nodes.max(2)], horizon)
    }

    pub fn segments(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn dim(&self) -> usize {
        self.nodes[0].len()
    }

    pub fn dt(&self) -> T {
        self.horizon / T::of_usize(self.segments())
    }

    pub fn start(&self) -> &[T] {
        &self.nodes[0]
    }

    pub fn end(&self) -> &[T] {
        self.nodes.last().expect("non-empty path")
    }

    /// Time reversal `t -> horizon - t`.
    pub fn reversed(&self) -> Self {
        let mut nodes = self.nodes.clone();
        nodes.reverse();
        Self { nodes, horizon: self.horizon, action: None }
    }

    /// Inserts segment midpoints, doubling the number of segments.
    pub fn doubled(&self) -> Self {
        let mut nodes = Vec::with_capacity(2 * self.nodes.len() - 1);
        for w in self.nodes.windows(2) {
            nodes.push(w[0].clone());
            nodes.push(lerp(&w[0], &w[1], T::c(0.5)));
        }
        nodes.push(self.end().to_vec());
        Self { nodes, horizon: self.horizon, action: None }
    }

    /// Linear interpolation at time `t` (clamped to the horizon).
    pub fn at(&self, t: T) -> Vec<T> {
        let s = (t / self.dt()).max(T::zero()).min(T::of_usize(self.segments()));
        let k = s.floor().to_usize().unwrap_or(0).min(self.segments() - 1);
        lerp(&self.nodes[k], &self.nodes[k + 1], s - T::of_usize(k))
    }

    /// Resamples onto `n_nodes` equally spaced times.
    pub fn resampled(&self, n_nodes: usize) -> Self {
        let n = n_nodes.max(2) - 1;
        let nodes = (0..=n)
            .map(|k| self.at(self.horizon * T::of_usize(k) / T::of_usize(n)))
            .collect();
        Self { nodes, horizon: self.horizon, action: None }
    }

    /// Concatenation; the first node of `other` replaces the last of `self`.
    pub fn concat(&self, other: &Self) -> Self {
        let mut nodes = self.nodes.clone();
        nodes.pop();
        nodes.extend(other.nodes.iter().cloned());
        Self { nodes, horizon: self.horizon + other.horizon, action: None }
    }

    /// CSV with columns `t, x_0, .., x_{d-1}`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let header: Vec<String> = std::iter::once("t".to_string())
            .chain((0..self.dim()).map(|i| format!("x_{i}")))
            .collect();
        writeln!(w, "{}", header.join(","))?;
        let dt = self.dt();
        for (k, n) in self.nodes.iter().enumerate() {
            let row: Vec<String> = std::iter::once(dt * T::of_usize(k))
                .chain(n.iter().copied())
                .map(|v| format!("{:.16e}", v.f64()))
                .collect();
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }

    pub fn to_record(&self) -> PathRecord {
        PathRecord {
            horizon: self.horizon.f64(),
            nodes: self.nodes.iter().map(|n| n.iter().map(|v| v.f64()).collect()).collect(),
            action: self.action.map(|a| a.f64()).filter(|a| a.is_finite()),
            infinite_action: self.action.map(|a| a.is_infinite()).unwrap_or(false),
        }
    }
}

/// JSON form of a path: `{horizon, nodes, action}`; an infinite action is
/// written as `null` with `infinite_action: true`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathRecord {
    pub horizon: f64,
    pub nodes: Vec<Vec<f64>>,
    pub action: Option<f64>,
    #[serde(default)]
    pub infinite_action: bool,
}

impl PathRecord {
    pub fn to_path<T: Scalar>(&self) -> Result<DiscretePath<T>> {
        let nodes = self.nodes.iter().map(|n| n.iter().map(|&v| T::c(v)).collect()).collect();
        let mut p = DiscretePath::new(nodes, T::c(self.horizon))?;
        p.action = if self.infinite_action { Some(T::infinity()) } else { self.action.map(T::c) };
        Ok(p)
    }
}
