use thiserror::Error;

/// Errors shared across the workbench modules.
#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix contains a non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },

    #[error("degenerate matrix shape {rows}x{cols}")]
    DegenerateShape { rows: usize, cols: usize },

    #[error("operator spec invalid: {0}")]
    SpecInvalid(String),

    #[error("estimate did not stabilize: {context} (delta {delta:.3e})")]
    Unstable { context: String, delta: f64 },

    #[error("cross-check failed: {0}")]
    CrossCheckFailed(String),

    #[error("symbol vanishes on the sampled circle (min modulus {min_modulus:.3e})")]
    SymbolVanishes { min_modulus: f64 },

    #[error("operator is not left invertible at the working truncation")]
    NotLeftInvertible,

    #[error("perturbation too large: gap {gap:.3e} >= bound {bound:.3e}")]
    PerturbationTooLarge { gap: f64, bound: f64 },

    #[error("certified window too small for the requested computation: {0}")]
    WindowTooSmall(String),

    #[error("Fredholm index is {found}, expected -1")]
    IndexNotMinusOne { found: i64 },

    #[error("operator is not analytic (density defect {defect:.3})")]
    NotAnalytic { defect: f64 },

    #[error("operator is not a natural left invertible: {0}")]
    NotNatural(String),

    #[error("point {lambda} lies outside the safety disc of radius {radius:.6}")]
    OutsideDisc { lambda: num_complex::Complex64, radius: f64 },

    #[error("grid too small: {0}")]
    BadGrid(String),

    #[error("syntax error at column {position}: {message}")]
    Syntax { position: usize, message: String },

    #[error("empty expression")]
    EmptyInput,

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("malformed spec file: {0}")]
    Json(#[from] serde_json::Error),
}
