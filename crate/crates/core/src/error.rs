use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParamError {
    #[error("invalid parameter `{name}`: {reason}")]
    Invalid { name: &'static str, reason: String },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GridError {
    #[error("grid dimension must be 1 or 2, got {0}")]
    Dimension(usize),
    #[error("axis {axis}: at least 4 cells required, got {cells}")]
    TooFewCells { axis: usize, cells: usize },
    #[error("axis {axis}: extent must be positive and finite, got {extent}")]
    Extent { axis: usize, extent: f64 },
    #[error("expected {expected} values per axis, got {got}")]
    AxisCount { expected: usize, got: usize },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FieldError {
    #[error("non-finite value {value} at cell {index}")]
    NonFinite { index: usize, value: f64 },
    #[error("negative density {value} at cell {index} (tolerance {tol})")]
    Negative { index: usize, value: f64, tol: f64 },
    #[error("field has {got} values, grid has {expected} cells")]
    Length { expected: usize, got: usize },
}

#[derive(Debug, Error)]
pub enum SnapshotError {
    #[error("bad snapshot magic")]
    Magic,
    #[error("snapshot truncated: expected {expected} bytes, got {got}")]
    Truncated { expected: usize, got: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
