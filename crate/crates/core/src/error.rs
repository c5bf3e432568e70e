// SPDX-License-Identifier: MIT OR Apache-2.0

use thiserror::Error;

/// Errors produced anywhere in the detection pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum CbpError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("distance matrix is not symmetric at ({row}, {column}): {upper} vs {lower}")]
    NotSymmetric {
        row: usize,
        column: usize,
        upper: f64,
        lower: f64,
    },
    #[error("invalid distance at ({row}, {column}): {value}")]
    InvalidDistance {
        row: usize,
        column: usize,
        value: f64,
    },
    #[error("index {index} at line {line} is outside [1, {n}]")]
    IndexOutOfRange { line: usize, index: usize, n: usize },
    #[error("non-finite coordinate at observation {row}, dimension {column}")]
    NonFinite { row: usize, column: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("block size L={block} leaves m={blocks} blocks; at least {required} are needed (use a smaller L or a longer sequence)")]
    TooFewBlocks {
        block: usize,
        blocks: usize,
        required: usize,
    },
    #[error("enumeration of {requested} assignments exceeds the budget of {budget}")]
    BudgetExceeded { requested: u128, budget: u128 },
    #[error("degenerate graph: standard deviation of R(t) is zero at t={t}")]
    DegenerateGraph { t: usize },
    #[error("degenerate configuration at t={t}: {message}")]
    DegenerateConfiguration { t: usize, message: String },
    #[error("no sign change of p(b) - alpha on [{lo}, {hi}]")]
    NoBracket { lo: f64, hi: f64 },
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for CbpError {
    fn from(err: std::io::Error) -> Self {
        CbpError::Io(err.to_string())
    }
}

pub type Result<T> = std::result::Result<T, CbpError>;
