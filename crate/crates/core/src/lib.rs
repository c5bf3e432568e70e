// SPDX-License-Identifier: MIT OR Apache-2.0

//! Change-point detection for locally dependent sequences with graph-based
//! edge-count scan statistics calibrated by circular block permutation.

pub mod cbp;
pub mod detector;
pub mod error;
pub mod moments;
pub mod oracle;
pub mod parallel;
pub mod pvalue;
pub mod seqdata;
pub mod simgraph;
pub mod simlab;

pub use error::{CbpError, Result};
