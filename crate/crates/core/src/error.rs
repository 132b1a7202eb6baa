use thiserror::Error;

#[derive(Debug, Error)]
pub enum NearFieldError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid harmonic index (l={l}, m={m})")]
    Index { l: usize, m: i64 },
    #[error("geometry error: {0}")]
    Geometry(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("PoleError at degree {l}: {detail}")]
    Pole { l: usize, detail: String },
    #[error("F_n - F_out not invertible at degree {l} (|diff| = {magnitude:e})")]
    Invertibility { l: usize, magnitude: f64 },
    #[error("only {surviving} modes survive truncation, {required} required")]
    Rank { surviving: usize, required: usize },
    #[error("degenerate Moebius inversion at degree {l}")]
    Degenerate { l: usize },
    #[error("no convergence after {iterations} iterations (best misfit {misfit:e})")]
    NonConvergence { iterations: usize, misfit: f64 },
    #[error("parameter {name} = {value} out of bounds [{lo}, {hi}]")]
    Bounds { name: String, value: f64, lo: f64, hi: f64 },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, NearFieldError>;
