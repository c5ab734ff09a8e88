use std::fmt;

use thiserror::Error;

/// Structural assumption whose violation a validation error reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Assumption {
    /// Delays stay inside the extension window.
    A,
    /// Change-of-variables bound for the delays.
    B,
    /// Lipschitz bound on `f`.
    H1Lipschitz,
    /// Lipschitz bound on `g` with the `alpha1 + alpha2 * M < 1/2` constraint.
    H1Contraction,
    /// Barrier below the extension data.
    H2Barrier,
    /// Continuity of the terminal data at `T`.
    TerminalMatch,
}

impl fmt::Display for Assumption {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Assumption::A => "(A)",
            Assumption::B => "(B)",
            Assumption::H1Lipschitz => "(H1.1)(i)",
            Assumption::H1Contraction => "(H1.1)(ii)",
            Assumption::H2Barrier => "(H2.2)",
            Assumption::TerminalMatch => "eta_T = xi",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("simulation requires sigma = 0 (got sigma = {0}); a Gaussian part inside L is not supported")]
    UnsupportedSimulation(f64),

    #[error("invalid power-jump order {0}; orders start at 1")]
    InvalidOrder(usize),

    #[error("Gram matrix is singular: order {order} exceeds the dimension {max} of L2(mu) for this jump measure")]
    SingularGram { order: usize, max: usize },

    #[error("Gram matrix is ill-conditioned (condition number {0:.3e} > 1e12)")]
    IllConditioned(f64),

    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    Dimension {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("assumption {assumption} violated: {detail}")]
    Assumption {
        assumption: Assumption,
        detail: String,
    },

    #[error("unsupported delay: {0}")]
    UnsupportedDelay(String),

    #[error("invalid specification: {0}")]
    InvalidSpec(String),

    #[error("regression failed: {0}")]
    Regression(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{0}")]
    Refused(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn assumption(assumption: Assumption, detail: impl Into<String>) -> Self {
        Error::Assumption {
            assumption,
            detail: detail.into(),
        }
    }

    /// Process exit code: 1 for validation failures, 2 for numerical or I/O failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::UnsupportedSimulation(_)
            | Error::InvalidOrder(_)
            | Error::Assumption { .. }
            | Error::UnsupportedDelay(_)
            | Error::InvalidSpec(_)
            | Error::Config(_)
            | Error::Refused(_) => 1,
            Error::SingularGram { .. }
            | Error::IllConditioned(_)
            | Error::Dimension { .. }
            | Error::Regression(_)
            | Error::Io(_) => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
