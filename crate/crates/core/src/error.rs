use thiserror::Error;

/// Errors raised by the simulation, estimation and control layers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// A value broke the validity range of its type. `invariant` names the rule, e.g. `"M > 0"`.
    #[error("invalid parameter: {invariant} violated")]
    InvalidParameter { invariant: &'static str },

    #[error("singular mass matrix (det = {det:e})")]
    SingularMassMatrix { det: f64 },

    #[error("integration diverged: non-finite state after step")]
    IntegrationDiverged,

    #[error("robot fell over at theta = {theta:.4} rad")]
    FallenOver { theta: f64 },

    #[error("LQR synthesis failed after {iterations} iterations: {reason} (residual {residual:e})")]
    SynthesisFailed {
        reason: String,
        residual: f64,
        iterations: usize,
    },

    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Returns `Err(InvalidParameter)` naming `invariant` unless `ok` holds.
pub(crate) fn ensure(ok: bool, invariant: &'static str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidParameter { invariant })
    }
}
