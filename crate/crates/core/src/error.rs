use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("geometry error in cell {cell}: {detail}")]
    Geometry { cell: usize, detail: String },

    #[error("unsupported element order {0} (only order 2 is implemented)")]
    UnsupportedOrder(usize),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("assembly error: {0}")]
    Assembly(String),

    #[error("solver error: {0}")]
    Solver(String),

    #[error("pole of the Fourier integrand on the real axis at xi = {xi}")]
    Pole { xi: f64 },

    #[error(
        "quadrature did not converge at x = {x} after {halvings} halvings \
         (last two iterates {previous} and {last})"
    )]
    Quadrature {
        x: f64,
        halvings: usize,
        previous: num_complex::Complex64,
        last: num_complex::Complex64,
    },

    #[error("sample grids do not match: {0}")]
    GridMismatch(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("cycle {cycle}: {source}")]
    Cycle {
        cycle: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn in_cycle(self, cycle: usize) -> Self {
        Error::Cycle {
            cycle,
            source: Box::new(self),
        }
    }
}
