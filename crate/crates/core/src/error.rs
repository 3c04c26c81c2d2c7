use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("point outside the domain of {what}: {detail}")]
    Domain { what: &'static str, detail: String },

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("numeric conjugate did not converge after {iterations} iterations (gradient norm {residual:e})")]
    Nonconvergence { iterations: usize, residual: f64 },

    #[error("unsupported game: {0}")]
    UnsupportedGame(String),

    #[error("trajectory left the mirror domain at t = {time}: {detail}")]
    DomainEscape { time: f64, detail: String },

    #[error("market price left the positive region at t = {time} (min price {min_price:e})")]
    PriceRegion { time: f64, min_price: f64 },

    #[error("conjugate Hessian is numerically singular (eigenvalue {eigenvalue:e})")]
    SingularHessian { eigenvalue: f64 },

    #[error("insufficient decay data: {nodes} nodes above the floor, need at least {required}")]
    InsufficientDecayData { nodes: usize, required: usize },

    #[error("insufficient paths: standard error / bound = {ratio:.3} at t = {time}")]
    InsufficientPaths { time: f64, ratio: f64 },
}

impl Error {
    pub(crate) fn domain(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Domain {
            what,
            detail: detail.into(),
        }
    }

    pub(crate) fn check_len(context: &'static str, expected: usize, got: usize) -> Result<()> {
        if expected == got {
            Ok(())
        } else {
            Err(Error::Dimension {
                context,
                expected,
                got,
            })
        }
    }
}
