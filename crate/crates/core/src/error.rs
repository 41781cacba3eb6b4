use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid network: {0}")]
    InvalidNetwork(String),

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("unknown bus id {0}")]
    UnknownBus(usize),

    #[error("line {index} ({from}-{to}) has zero impedance")]
    ZeroImpedance { index: usize, from: usize, to: usize },

    #[error("power flow did not converge after {iterations} iterations (max mismatch {mismatch:.3e} p.u.)")]
    PowerFlowDiverged { iterations: usize, mismatch: f64 },

    #[error("reduced Jacobian is singular (reciprocal condition estimate {rcond:.3e})")]
    SingularJacobian { rcond: f64 },

    #[error("protocol error at bus {bus}: {detail}")]
    Protocol { bus: usize, detail: String },

    #[error("non-finite value at bus {bus} during {stage} (iteration {iteration})")]
    NonFinite {
        bus: usize,
        stage: &'static str,
        iteration: usize,
    },

    #[error("divergence: residual {residual:.3e} exceeds guard at iteration {iteration}")]
    Diverged { iteration: usize, residual: f64 },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("parse error in {context} at `{field}`")]
    Parse {
        context: String,
        field: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("I/O error on {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Deserializes JSON, recording the path of the offending field on failure.
pub(crate) fn parse_json<T: serde::de::DeserializeOwned>(text: &str, context: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| Error::Parse {
        context: context.to_string(),
        field: e.path().to_string(),
        source: e.into_inner(),
    })
}
