use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid law: {0}")]
    InvalidLaw(String),

    #[error("moment diverges: {0}")]
    NonIntegrable(String),

    #[error("allocation did not terminate after {rounds} rounds")]
    CascadeStall { rounds: u64 },

    #[error("perturbed walk produced more than {cap} points")]
    PathExplosion { cap: u64 },

    #[error("individual count {count} exceeds budget {cap}")]
    BudgetExceeded { count: u64, cap: u64 },

    #[error("grids differ in step or length")]
    GridMismatch,

    #[error("lattice span {span} is not a multiple of grid step {step}")]
    NonCommensurableGrid { span: f64, step: f64 },

    #[error("t_max^j/j! exceeds 1e300 for j = {j}, t_max = {t_max}")]
    OverflowRisk { j: usize, t_max: f64 },

    #[error("argument {t} lies beyond grid end {t_max}")]
    GridTooShort { t: f64, t_max: f64 },

    #[error("admissible range [{lo}, {hi}] is empty")]
    RangeEmpty { lo: f64, hi: f64 },

    #[error("envelope sum diverges")]
    EnvelopeDiverges,

    #[error("residual never exceeds the noise floor")]
    NoisyTail,

    #[error("hypothesis not met: {0}")]
    HypothesisUnmet(String),

    #[error("gamma = {0} is not positive")]
    GammaNonpositive(f64),

    #[error("domain error: {0}")]
    DomainError(String),

    #[error("horizon * min(u) = {0} is below 20")]
    HorizonTooShort(f64),

    #[error("invalid plan: {0}")]
    InvalidPlan(String),
}
