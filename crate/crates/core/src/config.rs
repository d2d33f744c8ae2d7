//! JSON experiment configuration.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::action::QpOptions;
use crate::noise::{AffineErr, NoiseModel};
use crate::objective::{DoubleWell, Himmelblau, ObjectiveSpec, Polynomial, PolynomialTerm, Quadratic, SearchBox, TiltedDoubleWell};
use crate::scalar::Scalar;
use crate::simulate::SgdConfig;
use crate::{Error, Result};

pub const FORMAT_VERSION: &str = "1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxConfig {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

/// A built-in objective, optionally with its own search box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum ObjectiveConfig {
    Himmelblau {
        #[serde(default)]
        search_box: Option<BoxConfig>,
    },
    DoubleWell {
        #[serde(default)]
        search_box: Option<BoxConfig>,
    },
    TiltedDoubleWell {
        alpha: f64,
        #[serde(default)]
        search_box: Option<BoxConfig>,
    },
    Quadratic {
        curvature: Vec<f64>,
        #[serde(default)]
        search_box: Option<BoxConfig>,
    },
    Polynomial {
        terms: Vec<PolynomialTerm>,
        search_box: BoxConfig,
    },
}

impl ObjectiveConfig {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Himmelblau { .. } => "himmelblau",
            Self::DoubleWell { .. } => "double_well",
            Self::TiltedDoubleWell { .. } => "tilted_double_well",
            Self::Quadratic { .. } => "quadratic",
            Self::Polynomial { .. } => "polynomial",
        }
    }

    pub fn build<T: Scalar>(&self) -> Result<ObjectiveSpec<T>> {
        fn bx<T: Scalar>(b: &Option<BoxConfig>, dim: usize, lo: f64, hi: f64) -> Result<SearchBox<T>> {
            match b {
                Some(b) => to_box(b),
                None => Ok(SearchBox::cube(dim, T::c(lo), T::c(hi))),
            }
        }
        match self {
            Self::Himmelblau { search_box } => ObjectiveSpec::new(Himmelblau, bx(search_box, 2, -6.0, 6.0)?),
            Self::DoubleWell { search_box } => ObjectiveSpec::new(DoubleWell, bx(search_box, 1, -2.0, 2.0)?),
            Self::TiltedDoubleWell { alpha, search_box } => {
                ObjectiveSpec::new(TiltedDoubleWell::new(*alpha), bx(search_box, 1, -2.0, 2.0)?)
            }
            Self::Quadratic { curvature, search_box } => {
                if curvature.is_empty() || curvature.iter().any(|&c| !(c > 0.0)) {
                    return Err(Error::Config("quadratic curvature must be a non-empty list of positive numbers".into()));
                }
                ObjectiveSpec::new(Quadratic::with_curvature(curvature.clone()), bx(search_box, curvature.len(), -2.0, 2.0)?)
            }
            Self::Polynomial { terms, search_box } => ObjectiveSpec::new(Polynomial::new(terms.clone())?, to_box(search_box)?),
        }
    }
}

fn to_box<T: Scalar>(b: &BoxConfig) -> Result<SearchBox<T>> {
    SearchBox::new(b.lo.iter().map(|&v| T::c(v)).collect(), b.hi.iter().map(|&v| T::c(v)).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AffineErrConfig {
    pub offset: Vec<f64>,
    /// Row-major `d x d` matrix.
    #[serde(default)]
    pub linear: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseConfig {
    Zero,
    Gaussian { sigma2: f64 },
    /// Variance `a f(x) + b`.
    GaussianAffine { a: f64, b: f64 },
    TruncatedGaussian { sigma2: f64, radius: f64 },
    FiniteSum { errs: Vec<AffineErrConfig>, batch: usize },
}

impl NoiseConfig {
    pub fn build<T: Scalar>(&self, dim: usize) -> Result<NoiseModel<T>> {
        match self {
            Self::Zero => Ok(NoiseModel::Zero { dim }),
            Self::Gaussian { sigma2 } => NoiseModel::gaussian(dim, T::c(*sigma2)),
            Self::GaussianAffine { a, b } => Ok(NoiseModel::gaussian_affine(dim, T::c(*a), T::c(*b))),
            Self::TruncatedGaussian { sigma2, radius } => NoiseModel::truncated_gaussian(dim, T::c(*sigma2), T::c(*radius)),
            Self::FiniteSum { errs, batch } => {
                let conv = |v: &[f64]| v.iter().map(|&x| T::c(x)).collect::<Vec<T>>();
                let maps = errs
                    .iter()
                    .map(|e| {
                        if e.offset.len() != dim || e.linear.as_ref().is_some_and(|l| l.len() != dim * dim) {
                            return Err(Error::Config("finite-sum error map has the wrong dimension".into()));
                        }
                        Ok(AffineErr { offset: conv(&e.offset), linear: e.linear.as_deref().map(conv) })
                    })
                    .collect::<Result<Vec<_>>>()?;
                NoiseModel::finite_sum(maps, *batch)
            }
        }
    }

    /// Variance of isotropic Gaussian noise with constant variance.
    pub fn constant_gaussian_variance(&self) -> Option<f64> {
        match self {
            Self::Gaussian { sigma2 } => Some(*sigma2),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    /// Neighbourhood radius for occupation statistics.
    pub eps: f64,
    #[serde(default = "default_horizons")]
    pub horizons: Vec<f64>,
    #[serde(default = "default_n_nodes")]
    pub n_nodes: usize,
    /// Step-size sweep for Gibbs tables, simulation and slope fits.
    #[serde(default)]
    pub gammas: Vec<f64>,
    /// Pairs `(i, j)` whose next-visit slope `ldp-slope` fits.
    #[serde(default)]
    pub ldp_pairs: Vec<(usize, usize)>,
    /// Radius of the ring on which the signal-to-noise condition is checked;
    /// defaults to the half diagonal of the search box.
    #[serde(default)]
    pub ring_radius: Option<f64>,
}

fn default_horizons() -> Vec<f64> {
    vec![1.0, 2.0, 4.0, 8.0, 16.0]
}

fn default_n_nodes() -> usize {
    33
}

impl AnalysisConfig {
    pub fn qp_options<T: Scalar>(&self) -> QpOptions<T> {
        QpOptions { horizons: self.horizons.iter().map(|&h| T::c(h)).collect(), n_nodes: self.n_nodes, ..QpOptions::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub format_version: String,
    pub objective: ObjectiveConfig,
    pub noise: NoiseConfig,
    pub sgd: SgdConfig,
    pub analysis: AnalysisConfig,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn check(&self) -> Result<()> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::Config(format!("format_version {:?} is not supported (expected {FORMAT_VERSION:?})", self.format_version)));
        }
        if !(self.analysis.eps > 0.0) {
            return Err(Error::Config("analysis.eps must be positive".into()));
        }
        if self.analysis.horizons.is_empty() || self.analysis.horizons.iter().any(|&h| !(h > 0.0)) {
            return Err(Error::Config("analysis.horizons must be positive".into()));
        }
        if self.analysis.gammas.iter().any(|&g| !(g > 0.0)) {
            return Err(Error::Config("analysis.gammas must be positive".into()));
        }
        Ok(())
    }

    /// Step sizes to simulate: the sweep if given, else `sgd.gamma`.
    pub fn gamma_sweep(&self) -> Vec<f64> {
        if self.analysis.gammas.is_empty() {
            vec![self.sgd.gamma]
        } else {
            self.analysis.gammas.clone()
        }
    }
}
