use thiserror::Error;

/// Errors surfaced by the dynamics and estimation routines.
#[derive(Debug, Error)]
pub enum DynError {
    #[error("matrix is singular (determinant zero)")]
    DegenerateMatrix,

    #[error("map is not hyperbolic: eigenvalue modulus {modulus} within {tol} of 1")]
    NotHyperbolic { modulus: f64, tol: f64 },

    #[error(
        "Newton iteration did not reach tol={tol:.3e} within {iters} steps (residual {residual:.3e})"
    )]
    NewtonDivergence { tol: f64, iters: u32, residual: f64 },

    #[error("inverse branches {dist:.3e} apart, below the minimum separation {min_sep:.3e}")]
    BranchCollision { dist: f64, min_sep: f64 },

    #[error("preimage tree needs {needed} nodes, over the budget of {budget}")]
    TreeBudgetExceeded { needed: u128, budget: usize },

    #[error("separated set at n={n} hit the point budget ({admitted} admitted, budget {budget})")]
    SeparatedBudgetExceeded { n: u32, admitted: usize, budget: usize },

    #[error("grid step {step} cannot {eps}/2-cover the phase space")]
    GridTooCoarse { step: f64, eps: f64 },

    #[error("singular-value gap {gap:.3e} below threshold {threshold}; stable split ill-conditioned")]
    WeakHyperbolicity { gap: f64, threshold: f64 },

    #[error("{empty} of {total} probe boxes carry no cloud mass; cloud too shallow")]
    InsufficientMass { empty: usize, total: usize },

    #[error("decay fit inconclusive: {usable} points above the noise floor, need at least 3")]
    InconclusiveFit { usable: usize },

    #[error("point outside the basin: distance {dist:.3e} exceeds margin {margin:.3e}")]
    OutsideBasin { dist: f64, margin: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, DynError>;
