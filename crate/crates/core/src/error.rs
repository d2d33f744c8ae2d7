use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("gradient flow blew up at t = {time} (|x| = {norm:e})")]
    BlowUp { time: f64, norm: f64 },
    #[error("rejection sampler stalled: acceptance rate {0:e} below 1e-6")]
    RejectionStall(f64),
    #[error("lemma condition violated: {0}")]
    ConditionViolated(String),
    #[error("cumulant generating function is not convex at the probe (min Hessian eigenvalue {0:e})")]
    NonConcaveDetected(f64),
    #[error("no initialization with finite action between the endpoints")]
    InfeasibleStart,
    #[error("variance a*f(x)+b = {0} is not positive")]
    NonPositiveVariance(f64),
    #[error("no spanning in-tree with finite weight rooted at {0}")]
    NoFiniteTree(usize),
    #[error("component {0} is not minimizing and no minimizing component has lower energy")]
    DominanceViolation(usize),
    #[error("SGD iterate diverged at step {step} (|x| = {norm:e})")]
    DivergenceGuard { step: u64, norm: f64 },
    #[error("eps = {eps} overlaps neighbourhoods (min inter-component distance {min_dist})")]
    OverlappingNeighborhoods { eps: f64, min_dist: f64 },
    #[error("insufficient transitions: {0}")]
    InsufficientTransitions(String),
    #[error("config: {0}")]
    Config(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
