use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("degenerate state: {0}")]
    Degenerate(String),
    #[error("unphysical equation of state: {0}")]
    Eos(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("incompatible Poisson right-hand side (relative imbalance {0:e})")]
    Solvability(f64),
    #[error("Poisson solver did not converge in {iterations} iterations (relative residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("non-finite value detected in {0}")]
    NonFinite(String),
    #[error("concentration excursion {excursion:e} at cell ({i}, {j}) exceeds hard limit")]
    Excursion { i: usize, j: usize, excursion: f64 },
    #[error("time step violates viscous stability limit (alpha_nu = {0:.4})")]
    Stability(f64),
    #[error("insufficient statistics: {0}")]
    Statistics(String),
    #[error("fit failed: {0}")]
    Fit(String),
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
