// SPDX-License-Identifier: MIT OR Apache-2.0

//! Exact permutation moments of the edge count and the standardized scan
//! process.

mod coefficients;

pub use coefficients::{
    blocking_counts, case_analysis_applies, counts_by_blocking, counts_by_cases,
    variance_coefficients, BranchCoverage, ConfigurationCounts, MomentCoefficients, PairStrategy,
};

use serde::Serialize;

use crate::error::{CbpError, Result};
use crate::simgraph::EdgeTaxonomy;

/// Probability that a pair in category `k` lands with its first node at or
/// before `t = aL + b` and its second node after it.
pub fn split_probability(k: usize, a: usize, b: usize, block: usize, m: usize) -> f64 {
    let (k, a, b, l, m) = (k as f64, a as f64, b as f64, block as f64, m as f64);
    let n = m * l;
    let denom = n * (m - 1.0);
    let pos = |x: f64| x.max(0.0);
    pos(k - b) * a * (m - a) / denom
        + pos(b - (l - k)) * (a + 1.0) * (m - a - 1.0) / denom
        + (b.min(l - k) - pos(b - k)) * (a * (m - a - 1.0) + (m - 1.0)) / denom
}

/// `E(R(t))` for `t = 0..=n`, with `e[0] = e[n] = 0`.
pub fn expectation_curve(tax: &EdgeTaxonomy) -> Result<Vec<f64>> {
    let (n, l, m) = (tax.n, tax.block, tax.m);
    if m < 2 {
        return Err(CbpError::TooFewBlocks {
            block: l,
            blocks: m,
            required: 2,
        });
    }
    let mut e = vec![0.0; n + 1];
    for (t, slot) in e.iter_mut().enumerate().take(n).skip(1) {
        let (a, b) = (t / l, t % l);
        *slot = tax
            .counts
            .iter()
            .enumerate()
            .map(|(k, &count)| 2.0 * split_probability(k + 1, a, b, l, m) * count as f64)
            .sum();
    }
    Ok(e)
}

fn require_four_blocks(block: usize, m: usize) -> Result<()> {
    if m < 4 {
        return Err(CbpError::TooFewBlocks {
            block,
            blocks: m,
            required: 4,
        });
    }
    Ok(())
}

fn falling(m: f64, k: usize) -> f64 {
    (0..k).map(|i| m - i as f64).product()
}

pub fn p1(a: f64, m: f64) -> f64 {
    2.0 * a * (m - a) / (m * (m - 1.0))
}

pub fn p3(a: f64, m: f64) -> f64 {
    4.0 * a * (a - 1.0) * (m - a) * (m - a - 1.0) / falling(m, 4)
}

/// `Var(R(aL))`.
pub fn variance_at(coef: &MomentCoefficients, m: usize, a: usize) -> f64 {
    let (af, mf) = (a as f64, m as f64);
    if a == 0 || a == m {
        return 0.0;
    }
    let q = p1(af, mf);
    coef.c1 * q + coef.c2 * q / 2.0 + coef.c3 * p3(af, mf) - coef.c0 * coef.c0 * q * q
}

/// `Var(R(aL))` for `a = 0..=m`.
pub fn variance_grid(coef: &MomentCoefficients, n: usize, block: usize) -> Result<Vec<f64>> {
    let m = n / block;
    require_four_blocks(block, m)?;
    Ok((0..=m).map(|a| variance_at(coef, m, a)).collect())
}

/// `Cov(R(a1 L), R(a2 L))` for `a1 <= a2`.
pub fn covariance_grid(
    coef: &MomentCoefficients,
    n: usize,
    block: usize,
    a1: usize,
    a2: usize,
) -> Result<f64> {
    let m = n / block;
    require_four_blocks(block, m)?;
    if a1 > a2 || a2 > m {
        return Err(CbpError::InvalidArgument(format!(
            "covariance needs 0 <= a1 <= a2 <= m, got a1={a1}, a2={a2}, m={m}"
        )));
    }
    let (x, y, mf) = (a1 as f64, a2 as f64, m as f64);
    let q1 = 2.0 * x * (mf - y) / falling(mf, 2);
    let q2 = x * (mf - y) * (mf - 2.0 * x + 2.0 * y - 2.0) / falling(mf, 3);
    let q3 = 4.0 * x * (mf - y) * ((x - 1.0) * (mf - x - 1.0) + (y - x) * (mf - x - 2.0))
        / falling(mf, 4);
    Ok(coef.c1 * q1 + coef.c2 * q2 + coef.c3 * q3 - coef.c0 * coef.c0 * p1(x, mf) * p1(y, mf))
}

/// SD at every `t = 0..=n`: exact at multiples of `L`, linear in between.
pub fn sd_curve(var_grid: &[f64], n: usize, block: usize) -> Vec<f64> {
    let sd_knots: Vec<f64> = var_grid.iter().map(|v| v.max(0.0).sqrt()).collect();
    (0..=n)
        .map(|t| {
            let (a, b) = (t / block, t % block);
            if b == 0 {
                sd_knots[a]
            } else {
                let f = b as f64 / block as f64;
                sd_knots[a] * (1.0 - f) + sd_knots[a + 1] * f
            }
        })
        .collect()
}

/// Inclusive scan range `[n0, n1]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct ScanWindow {
    pub n0: usize,
    pub n1: usize,
}

impl ScanWindow {
    /// `n0 = floor(frac * n_raw)` (at least 1) and `n1 = n_raw - n0`; the
    /// trailing pseudo-observations are never part of the scan.
    pub fn from_fraction(n_raw: usize, frac: f64) -> Result<Self> {
        if !(0.0..0.5).contains(&frac) {
            return Err(CbpError::InvalidArgument(format!(
                "window fraction {frac} outside [0, 0.5)"
            )));
        }
        let n0 = ((frac * n_raw as f64).floor() as usize).max(1);
        if n_raw < 2 || n0 > n_raw - n0 {
            return Err(CbpError::InvalidArgument(format!(
                "empty scan window for n={n_raw}, fraction {frac}"
            )));
        }
        Ok(Self { n0, n1: n_raw - n0 })
    }

    pub fn len(&self) -> usize {
        self.n1 - self.n0 + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn iter(&self) -> std::ops::RangeInclusive<usize> {
        self.n0..=self.n1
    }
}

/// Moment curves for one graph and block size.
#[derive(Clone, Debug, Serialize)]
pub struct MomentCurves {
    pub n: usize,
    pub block: usize,
    pub coefficients: MomentCoefficients,
    /// `e[t]`, `t = 0..=n`.
    pub e: Vec<f64>,
    /// `var_grid[a]`, `a = 0..=m`.
    pub var_grid: Vec<f64>,
    /// `sd[t]`, `t = 0..=n`.
    pub sd: Vec<f64>,
}

impl MomentCurves {
    pub fn compute(g: &crate::simgraph::SimilarityGraph, tax: &EdgeTaxonomy) -> Result<Self> {
        let coefficients = variance_coefficients(g, tax.block)?;
        Self::from_coefficients(tax, coefficients)
    }

    pub fn from_coefficients(tax: &EdgeTaxonomy, coefficients: MomentCoefficients) -> Result<Self> {
        let var_grid = variance_grid(&coefficients, tax.n, tax.block)?;
        Ok(Self {
            n: tax.n,
            block: tax.block,
            coefficients,
            e: expectation_curve(tax)?,
            sd: sd_curve(&var_grid, tax.n, tax.block),
            var_grid,
        })
    }

    /// Standardized, sign-flipped statistic on the window.
    pub fn z_curve(&self, r: &[u32], window: ScanWindow) -> Result<ZCurve> {
        let mut values = Vec::with_capacity(window.len());
        for t in window.iter() {
            let sd = self.sd[t];
            if !(sd > 0.0) {
                return Err(CbpError::DegenerateGraph { t });
            }
            values.push(-(r[t] as f64 - self.e[t]) / sd);
        }
        Ok(ZCurve { window, values })
    }

    /// Maximum of the standardized curve without allocating it. Assumes the
    /// window was validated by [`MomentCurves::z_curve`].
    pub fn z_max(&self, r: &[u32], window: ScanWindow) -> f64 {
        window
            .iter()
            .map(|t| -(r[t] as f64 - self.e[t]) / self.sd[t])
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Plot-ready `t,e,sd,z` rows, 1-based `t`, for the window.
    pub fn to_csv(&self, z: &ZCurve) -> String {
        let mut out = String::from("t,e,sd,z\n");
        for (k, t) in z.window.iter().enumerate() {
            out.push_str(&format!(
                "{t},{},{},{}\n",
                self.e[t], self.sd[t], z.values[k]
            ));
        }
        out
    }
}

/// `Z(t)` on a scan window.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ZCurve {
    pub window: ScanWindow,
    pub values: Vec<f64>,
}

impl ZCurve {
    pub fn get(&self, t: usize) -> Option<f64> {
        if t < self.window.n0 || t > self.window.n1 {
            return None;
        }
        Some(self.values[t - self.window.n0])
    }

    /// `(t_hat, z_max)`, ties resolved toward the smallest `t`.
    pub fn argmax(&self) -> (usize, f64) {
        let mut best = (self.window.n0, self.values[0]);
        for (k, &z) in self.values.iter().enumerate().skip(1) {
            if z > best.1 {
                best = (self.window.n0 + k, z);
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simgraph::{classify_edges, SimilarityGraph};

    fn path(n: usize) -> SimilarityGraph {
        SimilarityGraph::new(n, (0..n - 1).map(|i| (i, i + 1))).unwrap()
    }

    #[test]
    fn grid_expectation_reduces() {
        let g = path(12);
        let tax = classify_edges(&g, 3).unwrap();
        let e = expectation_curve(&tax).unwrap();
        let weighted = tax.weighted_count() as f64;
        for a in 1..4 {
            let want = 2.0 * a as f64 * (4 - a) as f64 / (12.0 * 3.0) * weighted;
            assert!((e[3 * a] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn permutation_expectation_example() {
        let tax = classify_edges(&path(4), 1).unwrap();
        assert!((expectation_curve(&tax).unwrap()[2] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn variance_endpoints_and_symmetry() {
        let coef = MomentCoefficients {
            c0: 3.0,
            c1: 4.0,
            c2: 5.0,
            c3: 6.0,
        };
        let v = variance_grid(&coef, 20, 2).unwrap();
        assert_eq!(v[0], 0.0);
        assert_eq!(v[10], 0.0);
        for a in 0..=10 {
            assert!((v[a] - v[10 - a]).abs() < 1e-12);
        }
        assert!(matches!(
            variance_grid(&coef, 6, 2),
            Err(CbpError::TooFewBlocks { .. })
        ));
    }

    #[test]
    fn covariance_reduces_to_variance() {
        let coef = MomentCoefficients {
            c0: 3.0,
            c1: 4.5,
            c2: 5.0,
            c3: 7.0,
        };
        for a in 0..=8 {
            let cov = covariance_grid(&coef, 16, 2, a, a).unwrap();
            assert!((cov - variance_at(&coef, 8, a)).abs() < 1e-12);
        }
        assert_eq!(covariance_grid(&coef, 16, 2, 0, 5).unwrap(), 0.0);
        assert!(covariance_grid(&coef, 16, 2, 5, 3).is_err());
    }

    #[test]
    fn sd_interpolation() {
        let grid = vec![0.0, 4.0, 16.0, 4.0, 0.0];
        let sd = sd_curve(&grid, 8, 2);
        assert_eq!(sd[2], 2.0);
        assert_eq!(sd[4], 4.0);
        assert_eq!(sd[3], 3.0);
        let sd1 = sd_curve(&grid, 4, 1);
        assert_eq!(sd1, vec![0.0, 2.0, 4.0, 2.0, 0.0]);
    }

    #[test]
    fn window_examples() {
        assert_eq!(
            ScanWindow::from_fraction(200, 0.05).unwrap(),
            ScanWindow { n0: 10, n1: 190 }
        );
        assert_eq!(
            ScanWindow::from_fraction(20, 0.0).unwrap(),
            ScanWindow { n0: 1, n1: 19 }
        );
        assert!(ScanWindow::from_fraction(20, 0.6).is_err());
    }

    #[test]
    fn z_sign_and_degenerate() {
        let tax = classify_edges(&path(8), 1).unwrap();
        let curves = MomentCurves::compute(&path(8), &tax).unwrap();
        let w = ScanWindow { n0: 2, n1: 6 };
        let t = 4;
        let mut r = vec![0u32; 9];
        let z = curves.z_curve(&r, w).unwrap();
        assert!((z.get(t).unwrap() - curves.e[t] / curves.sd[t]).abs() < 1e-12);
        r[t] = 100;
        assert!(curves.z_curve(&r, w).unwrap().get(t).unwrap() < 0.0);
        let empty = SimilarityGraph::new(8, []).unwrap();
        let tax = classify_edges(&empty, 1).unwrap();
        let curves = MomentCurves::compute(&empty, &tax).unwrap();
        assert!(matches!(
            curves.z_curve(&r, w),
            Err(CbpError::DegenerateGraph { t: 2 })
        ));
    }

    #[test]
    fn argmax_prefers_smallest_t() {
        let z = ZCurve {
            window: ScanWindow { n0: 3, n1: 6 },
            values: vec![1.0, 2.0, 2.0, 0.5],
        };
        assert_eq!(z.argmax(), (4, 2.0));
    }
}
