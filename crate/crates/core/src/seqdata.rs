// SPDX-License-Identifier: MIT OR Apache-2.0

//! Sequence ingestion, pairwise distances and block-size augmentation.
//!
//! All indices handed to or read from users are 1-based; everything inside
//! the crate is 0-based.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CbpError, Result};

/// Relative tolerance used when checking symmetry of user supplied matrices.
pub const SYMMETRY_TOLERANCE: f64 = 1e-12;

/// Payload of an observation sequence.
#[derive(Clone, Debug, PartialEq)]
pub enum Observations {
    /// Row-major `n_raw x d` coordinates, one row per time point.
    Vectors { d: usize, data: Vec<f64> },
    /// Items known only through an external distance matrix or edge list.
    Opaque,
}

/// An ordered sequence of observations, possibly padded with edgeless
/// pseudo-observations so that the active block size divides its length.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservationSequence {
    items: Observations,
    n_raw: usize,
    x_aug: usize,
}

impl ObservationSequence {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n_raw = rows.len();
        if n_raw == 0 {
            return Err(CbpError::InvalidArgument("empty sequence".into()));
        }
        let d = rows[0].len();
        if d == 0 {
            return Err(CbpError::InvalidArgument(
                "observations have dimension 0".into(),
            ));
        }
        let mut data = Vec::with_capacity(n_raw * d);
        for (r, row) in rows.iter().enumerate() {
            if row.len() != d {
                return Err(CbpError::Parse {
                    line: r + 1,
                    column: row.len().min(d) + 1,
                    message: format!("expected {d} values, found {}", row.len()),
                });
            }
            for (c, &v) in row.iter().enumerate() {
                if !v.is_finite() {
                    return Err(CbpError::NonFinite {
                        row: r + 1,
                        column: c + 1,
                    });
                }
            }
            data.extend_from_slice(row);
        }
        Ok(Self {
            items: Observations::Vectors { d, data },
            n_raw,
            x_aug: 0,
        })
    }

    pub fn from_flat(n_raw: usize, d: usize, data: Vec<f64>) -> Result<Self> {
        if n_raw == 0 || d == 0 || data.len() != n_raw * d {
            return Err(CbpError::InvalidArgument(format!(
                "flat buffer of length {} does not match {n_raw} x {d}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(CbpError::NonFinite {
                row: pos / d + 1,
                column: pos % d + 1,
            });
        }
        Ok(Self {
            items: Observations::Vectors { d, data },
            n_raw,
            x_aug: 0,
        })
    }

    /// A sequence of `n_raw` items without coordinates.
    pub fn opaque(n_raw: usize) -> Result<Self> {
        if n_raw == 0 {
            return Err(CbpError::InvalidArgument("empty sequence".into()));
        }
        Ok(Self {
            items: Observations::Opaque,
            n_raw,
            x_aug: 0,
        })
    }

    /// Total length including pseudo-observations.
    pub fn n(&self) -> usize {
        self.n_raw + self.x_aug
    }

    pub fn n_raw(&self) -> usize {
        self.n_raw
    }

    pub fn x_aug(&self) -> usize {
        self.x_aug
    }

    /// Dimension of the observations, 0 for opaque items.
    pub fn d(&self) -> usize {
        match &self.items {
            Observations::Vectors { d, .. } => *d,
            Observations::Opaque => 0,
        }
    }

    pub fn items(&self) -> &Observations {
        &self.items
    }

    /// Coordinates of the 0-based observation `i`; `None` for pseudo or opaque items.
    pub fn row(&self, i: usize) -> Option<&[f64]> {
        match &self.items {
            Observations::Vectors { d, data } if i < self.n_raw => Some(&data[i * d..(i + 1) * d]),
            _ => None,
        }
    }

    pub fn is_pseudo(&self, i: usize) -> bool {
        i >= self.n_raw && i < self.n()
    }

    /// Returns a copy padded with the minimal number of pseudo-observations
    /// making the length divisible by `block`. Any earlier padding is discarded
    /// first, so the operation is idempotent for a fixed block size.
    pub fn augment(&self, block: usize) -> Result<Self> {
        if block == 0 {
            return Err(CbpError::InvalidArgument(
                "block size must be at least 1".into(),
            ));
        }
        Ok(Self {
            items: self.items.clone(),
            n_raw: self.n_raw,
            x_aug: augmentation_for(self.n_raw, block),
        })
    }

    /// Observations in reverse time order (padding is dropped).
    pub fn reversed(&self) -> Self {
        let items = match &self.items {
            Observations::Vectors { d, data } => {
                let mut out = Vec::with_capacity(data.len());
                for row in data.chunks(*d).rev() {
                    out.extend_from_slice(row);
                }
                Observations::Vectors { d: *d, data: out }
            }
            Observations::Opaque => Observations::Opaque,
        };
        Self {
            items,
            n_raw: self.n_raw,
            x_aug: 0,
        }
    }
}

/// Number of pseudo-observations needed so that `block` divides the length.
pub fn augmentation_for(n_raw: usize, block: usize) -> usize {
    (block - n_raw % block) % block
}

/// Symmetric matrix of pairwise distances between the raw observations.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    values: Vec<f64>,
}

impl DistanceMatrix {
    /// Validates symmetry, a zero diagonal and finite non-negative entries.
    pub fn new(n: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n * n {
            return Err(CbpError::InvalidArgument(format!(
                "distance buffer of length {} is not {n} x {n}",
                values.len()
            )));
        }
        for i in 0..n {
            for j in 0..n {
                let v = values[i * n + j];
                if !v.is_finite() || v < 0.0 || (i == j && v != 0.0) {
                    return Err(CbpError::InvalidDistance {
                        row: i + 1,
                        column: j + 1,
                        value: v,
                    });
                }
            }
        }
        for i in 0..n {
            for j in (i + 1)..n {
                let upper = values[i * n + j];
                let lower = values[j * n + i];
                let scale = upper.abs().max(lower.abs());
                if (upper - lower).abs() > SYMMETRY_TOLERANCE * scale {
                    return Err(CbpError::NotSymmetric {
                        row: j + 1,
                        column: i + 1,
                        upper,
                        lower,
                    });
                }
            }
        }
        Ok(Self { n, values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let mut values = Vec::with_capacity(n * n);
        for (r, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(CbpError::Parse {
                    line: r + 1,
                    column: row.len().min(n) + 1,
                    message: format!(
                        "distance matrix row has {} entries, expected {n}",
                        row.len()
                    ),
                });
            }
            values.extend_from_slice(row);
        }
        Self::new(n, values)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Distance between 0-based items `i` and `j`.
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n..(i + 1) * self.n]
    }
}

/// Distance used between coordinate vectors.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    #[default]
    Euclidean,
    L1,
}

impl std::str::FromStr for Metric {
    type Err = CbpError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "euclidean" | "l2" => Ok(Metric::Euclidean),
            "l1" | "manhattan" => Ok(Metric::L1),
            other => Err(CbpError::InvalidArgument(format!(
                "unknown metric '{other}'"
            ))),
        }
    }
}

/// Pairwise distances over the raw (non-pseudo) observations.
pub fn pairwise_distances(seq: &ObservationSequence, metric: Metric) -> Result<DistanceMatrix> {
    let (d, data) = match seq.items() {
        Observations::Vectors { d, data } => (*d, data),
        Observations::Opaque => {
            return Err(CbpError::InvalidArgument(
                "opaque observations need an explicit distance matrix".into(),
            ))
        }
    };
    let n = seq.n_raw();
    if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
        return Err(CbpError::NonFinite {
            row: pos / d + 1,
            column: pos % d + 1,
        });
    }
    let mut values = vec![0.0; n * n];
    for i in 0..n {
        let a = &data[i * d..(i + 1) * d];
        for j in (i + 1)..n {
            let b = &data[j * d..(j + 1) * d];
            let dist = match metric {
                Metric::Euclidean => a
                    .iter()
                    .zip(b)
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum::<f64>()
                    .sqrt(),
                Metric::L1 => a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>(),
            };
            values[i * n + j] = dist;
            values[j * n + i] = dist;
        }
    }
    Ok(DistanceMatrix { n, values })
}

/// On-disk layouts accepted by [`load_sequence`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InputFormat {
    CsvRows,
    DistanceMatrix,
    EdgeList,
}

/// Result of loading one input file.
#[derive(Clone, Debug)]
pub struct LoadedInput {
    pub sequence: ObservationSequence,
    pub distances: Option<DistanceMatrix>,
    /// 0-based edge endpoints, as read from an edge list.
    pub edges: Option<Vec<(usize, usize)>>,
}

/// Loads a sequence from disk.
///
/// For [`InputFormat::EdgeList`] the sequence length cannot be inferred from
/// the file; `n_raw` must be given and every index must lie in `[1, n_raw]`.
pub fn load_sequence(
    path: &Path,
    format: InputFormat,
    n_raw: Option<usize>,
) -> Result<LoadedInput> {
    let text = fs::read_to_string(path)?;
    match format {
        InputFormat::CsvRows => {
            let rows = parse_numeric_csv(&text)?;
            Ok(LoadedInput {
                sequence: ObservationSequence::from_rows(&rows)?,
                distances: None,
                edges: None,
            })
        }
        InputFormat::DistanceMatrix => {
            let rows = parse_numeric_csv(&text)?;
            let dist = DistanceMatrix::from_rows(&rows)?;
            Ok(LoadedInput {
                sequence: ObservationSequence::opaque(dist.n())?,
                distances: Some(dist),
                edges: None,
            })
        }
        InputFormat::EdgeList => {
            let n = n_raw.ok_or_else(|| {
                CbpError::InvalidArgument("edge-list input requires the sequence length".into())
            })?;
            let edges = parse_edge_list(&text, n)?;
            Ok(LoadedInput {
                sequence: ObservationSequence::opaque(n)?,
                distances: None,
                edges: Some(edges),
            })
        }
    }
}

/// Parses comma separated numeric rows. A first row that does not parse as
/// numbers is treated as a header; blank lines are skipped. Empty fields and
/// `NA`-style tokens are rejected with their location.
pub fn parse_numeric_csv(text: &str) -> Result<Vec<Vec<f64>>> {
    let mut rows = Vec::new();
    let mut width: Option<usize> = None;
    for (lineno, line) in text.lines().enumerate() {
        let line_no = lineno + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').map(str::trim).collect();
        let parsed: Vec<std::result::Result<f64, usize>> = fields
            .iter()
            .enumerate()
            .map(|(c, f)| parse_field(f).ok_or(c + 1))
            .collect();
        if rows.is_empty() && width.is_none() && parsed.iter().all(|p| p.is_err()) {
            // header
            width = Some(fields.len());
            continue;
        }
        let mut row = Vec::with_capacity(fields.len());
        for (c, p) in parsed.into_iter().enumerate() {
            match p {
                Ok(v) => row.push(v),
                Err(_) => {
                    let message = if fields[c].is_empty() {
                        "missing value".to_string()
                    } else {
                        format!("cannot parse '{}' as a number", fields[c])
                    };
                    return Err(CbpError::Parse {
                        line: line_no,
                        column: c + 1,
                        message,
                    });
                }
            }
        }
        match width {
            Some(w) if w != row.len() => {
                return Err(CbpError::Parse {
                    line: line_no,
                    column: row.len().min(w) + 1,
                    message: format!("expected {w} fields, found {}", row.len()),
                })
            }
            None => width = Some(row.len()),
            _ => {}
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(CbpError::Parse {
            line: 1,
            column: 1,
            message: "no data rows".into(),
        });
    }
    Ok(rows)
}

fn parse_field(field: &str) -> Option<f64> {
    let v: f64 = field.parse().ok()?;
    v.is_finite().then_some(v)
}

/// Parses a two column, 1-based edge list into 0-based pairs.
pub fn parse_edge_list(text: &str, n_raw: usize) -> Result<Vec<(usize, usize)>> {
    let mut edges = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line_no = lineno + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .collect();
        if fields.len() != 2 {
            if edges.is_empty() && fields.iter().all(|f| f.parse::<usize>().is_err()) {
                continue;
            }
            return Err(CbpError::Parse {
                line: line_no,
                column: fields.len().min(2) + 1,
                message: format!("expected 2 indices, found {}", fields.len()),
            });
        }
        let mut pair = [0usize; 2];
        for (c, f) in fields.iter().enumerate() {
            let idx: usize = match f.parse() {
                Ok(v) => v,
                Err(_) if edges.is_empty() && line_no == 1 => {
                    // header line
                    pair = [usize::MAX; 2];
                    break;
                }
                Err(_) => {
                    return Err(CbpError::Parse {
                        line: line_no,
                        column: c + 1,
                        message: format!("cannot parse '{f}' as an index"),
                    })
                }
            };
            if idx == 0 || idx > n_raw {
                return Err(CbpError::IndexOutOfRange {
                    line: line_no,
                    index: idx,
                    n: n_raw,
                });
            }
            pair[c] = idx - 1;
        }
        if pair[0] == usize::MAX {
            continue;
        }
        edges.push((pair[0], pair[1]));
    }
    Ok(edges)
}
