// SPDX-License-Identifier: MIT OR Apache-2.0

//! Exhaustive-enumeration check of the analytic moments on small instances.

use std::collections::BTreeSet;

use rand::Rng;
use serde::Serialize;

use crate::cbp::{cbp_group_size, enumerate_cbp, r_curve};
use crate::error::{CbpError, Result};
use crate::moments::{
    case_analysis_applies, counts_by_cases, covariance_grid, expectation_curve,
    variance_coefficients, variance_grid, BranchCoverage, MomentCoefficients, PairStrategy,
};
use crate::parallel::stream_rng;
use crate::simgraph::{classify_edges, SimilarityGraph};

/// Moments of `R(t)` over the whole CBP group, from exact integer sums.
#[derive(Clone, Debug, PartialEq)]
pub struct ExactMoments {
    pub n: usize,
    pub block: usize,
    /// `e[t]`, `t = 0..=n`.
    pub e: Vec<f64>,
    /// `cov[a1][a2] = Cov(R(a1 L), R(a2 L))`, `a = 0..=m`.
    pub cov: Vec<Vec<f64>>,
}

pub fn exact_moments(g: &SimilarityGraph, block: usize, budget: u128) -> Result<ExactMoments> {
    let n = g.n();
    let m = n / block;
    let mut count: i128 = 0;
    let mut s1 = vec![0i128; n + 1];
    let mut s2 = vec![vec![0i128; m + 1]; m + 1];
    for a in enumerate_cbp(n, block, budget)? {
        let r = r_curve(g, &a.pi);
        count += 1;
        for t in 0..=n {
            s1[t] += r[t] as i128;
        }
        for x in 0..=m {
            let rx = r[x * block] as i128;
            for y in x..=m {
                s2[x][y] += rx * r[y * block] as i128;
            }
        }
    }
    let nf = count as f64;
    let e = s1.iter().map(|&s| s as f64 / nf).collect();
    let mut cov = vec![vec![0.0; m + 1]; m + 1];
    for x in 0..=m {
        for y in x..=m {
            // N^2 Cov = N * sum(xy) - sum(x) sum(y), exact in integers.
            let num = count * s2[x][y] - s1[x * block] * s1[y * block];
            let v = num as f64 / (nf * nf);
            cov[x][y] = v;
            cov[y][x] = v;
        }
    }
    Ok(ExactMoments { n, block, e, cov })
}

/// `|a - b| / max(|b|, 1)`.
pub fn relative_error(analytic: f64, exact: f64) -> f64 {
    (analytic - exact).abs() / exact.abs().max(1.0)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Mismatch {
    pub instance: usize,
    pub n: usize,
    #[serde(rename = "L")]
    pub block: usize,
    pub quantity: String,
    pub analytic: f64,
    pub exact: f64,
    pub relative_error: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct InstanceCheck {
    pub worst_abs: f64,
    pub worst_rel: f64,
    pub compared: usize,
    pub variance_checked: bool,
    pub closed_form_checked: bool,
    pub mismatches: Vec<Mismatch>,
}

impl InstanceCheck {
    fn compare(
        &mut self,
        id: (usize, usize, usize),
        quantity: impl FnOnce() -> String,
        analytic: f64,
        exact: f64,
        tol: f64,
    ) {
        let rel = relative_error(analytic, exact);
        self.compared += 1;
        self.worst_abs = self.worst_abs.max((analytic - exact).abs());
        self.worst_rel = self.worst_rel.max(rel);
        if !(rel <= tol) {
            self.mismatches.push(Mismatch {
                instance: id.0,
                n: id.1,
                block: id.2,
                quantity: quantity(),
                analytic,
                exact,
                relative_error: rel,
            });
        }
    }
}

/// Closed forms at `L = 1`: returns the first violated identity.
pub fn closed_form_violation(g: &SimilarityGraph, coef: &MomentCoefficients) -> Option<String> {
    let e = g.edge_count() as f64;
    let d2 = g.degree_square_sum() as f64;
    let expect = [
        ("c0", coef.c0, e),
        ("c1", coef.c1, e),
        ("c2", coef.c2, d2 - 2.0 * e),
        ("c3", coef.c3, e * e - d2 + e),
    ];
    expect
        .iter()
        .find(|(_, got, want)| got != want)
        .map(|(name, got, want)| format!("{name}: {got} vs closed form {want}"))
}

/// Test hook applied to the analytic coefficients before comparison.
pub type Corruption = fn(&mut MomentCoefficients);

/// Compares analytic `E` at every `t` and, with at least four blocks, `Var`
/// and `Cov` on the block grid.
pub fn check_instance(
    instance: usize,
    g: &SimilarityGraph,
    block: usize,
    tolerance: f64,
    budget: u128,
    corrupt: Option<Corruption>,
) -> Result<InstanceCheck> {
    let n = g.n();
    let m = n / block;
    let id = (instance, n, block);
    let exact = exact_moments(g, block, budget)?;
    let tax = classify_edges(g, block)?;
    let mut out = InstanceCheck::default();
    let e = expectation_curve(&tax)?;
    for t in 0..=n {
        out.compare(id, || format!("E(t={t})"), e[t], exact.e[t], tolerance);
    }
    let mut coef = variance_coefficients(g, block)?;
    if let Some(f) = corrupt {
        f(&mut coef);
    }
    if block == 1 {
        out.closed_form_checked = true;
        if let Some(msg) = closed_form_violation(g, &coef) {
            out.mismatches.push(Mismatch {
                instance,
                n,
                block,
                quantity: format!("L=1 closed form {msg}"),
                analytic: f64::NAN,
                exact: f64::NAN,
                relative_error: f64::INFINITY,
            });
        }
    }
    if m >= 4 {
        out.variance_checked = true;
        let var = variance_grid(&coef, n, block)?;
        for a in 0..=m {
            out.compare(
                id,
                || format!("Var(a={a})"),
                var[a],
                exact.cov[a][a],
                tolerance,
            );
            for b in a + 1..=m {
                let c = covariance_grid(&coef, n, block, a, b)?;
                out.compare(
                    id,
                    || format!("Cov(a1={a}, a2={b})"),
                    c,
                    exact.cov[a][b],
                    tolerance,
                );
            }
        }
    }
    Ok(out)
}

/// Random simple graph; a `local_fraction` of the edges joins points at
/// circular distance at most `2L`.
pub fn random_instance<R: Rng + ?Sized>(
    rng: &mut R,
    n: usize,
    block: usize,
    max_edges: usize,
    local_fraction: f64,
) -> SimilarityGraph {
    let possible = n * (n - 1) / 2;
    let target = rng.random_range(1..=max_edges.min(possible).max(1));
    let near = 2 * block;
    let mut edges = BTreeSet::new();
    let mut guard = 0;
    while edges.len() < target && guard < 100 * max_edges + 100 {
        guard += 1;
        let i = rng.random_range(0..n);
        let j = if rng.random::<f64>() < local_fraction {
            let step = rng.random_range(1..=near.min(n / 2).max(1));
            if rng.random::<bool>() {
                (i + step) % n
            } else {
                (i + n - step) % n
            }
        } else {
            rng.random_range(0..n)
        };
        if i != j {
            edges.insert((i.min(j), i.max(j)));
        }
    }
    SimilarityGraph::new(n, edges).expect("valid random graph")
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OracleConfig {
    /// `(n, L)` pairs, cycled through by instance index.
    pub pairs: Vec<(usize, usize)>,
    pub instances: usize,
    pub max_edges: usize,
    pub local_fraction: f64,
    pub seed: u64,
    pub tolerance: f64,
    pub budget: u128,
}

impl OracleConfig {
    /// Even sizes `4..=max_n` crossed with the block sizes that divide them.
    pub fn grid(max_n: usize, blocks: &[usize], instances: usize, seed: u64) -> Result<Self> {
        let mut pairs = Vec::new();
        for n in (4..=max_n).step_by(2) {
            for &l in blocks {
                if l > 0 && n % l == 0 && n / l >= 2 {
                    pairs.push((n, l));
                }
            }
        }
        if pairs.is_empty() {
            return Err(CbpError::InvalidArgument(
                "no (n, L) pair with at least two blocks".into(),
            ));
        }
        Ok(Self {
            pairs,
            instances,
            max_edges: 10,
            local_fraction: 0.0,
            seed,
            tolerance: 1e-10,
            budget: crate::cbp::DEFAULT_ENUMERATION_BUDGET,
        })
    }

    /// The default small corpus: `n` in {4, 6, 8}, `L` in {1, 2, 3}.
    pub fn small(seed: u64) -> Self {
        Self::grid(8, &[1, 2, 3], 200, seed).expect("non-empty grid")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SuiteReport {
    pub instances: usize,
    pub compared: usize,
    pub variance_instances: usize,
    pub closed_form_instances: usize,
    pub worst_abs: f64,
    pub worst_rel: f64,
    pub coverage: BranchCoverage,
    pub missing_branches: Vec<String>,
    pub mismatches: Vec<Mismatch>,
    pub passed: bool,
}

pub fn run_suite(cfg: &OracleConfig, corrupt: Option<Corruption>) -> Result<SuiteReport> {
    for &(n, l) in &cfg.pairs {
        let size = cbp_group_size(n, l)?;
        if size > cfg.budget {
            return Err(CbpError::BudgetExceeded {
                requested: size,
                budget: cfg.budget,
            });
        }
    }
    let mut report = SuiteReport {
        instances: cfg.instances,
        compared: 0,
        variance_instances: 0,
        closed_form_instances: 0,
        worst_abs: 0.0,
        worst_rel: 0.0,
        coverage: BranchCoverage::default(),
        missing_branches: Vec::new(),
        mismatches: Vec::new(),
        passed: false,
    };
    for k in 0..cfg.instances {
        let (n, l) = cfg.pairs[k % cfg.pairs.len()];
        let mut rng = stream_rng(cfg.seed, k as u64);
        let g = random_instance(&mut rng, n, l, cfg.max_edges, cfg.local_fraction);
        let check = check_instance(k, &g, l, cfg.tolerance, cfg.budget, corrupt)?;
        if check.variance_checked && case_analysis_applies(n, l) {
            counts_by_cases(&g, l, PairStrategy::Exhaustive, Some(&mut report.coverage))?;
        }
        report.compared += check.compared;
        report.variance_instances += check.variance_checked as usize;
        report.closed_form_instances += check.closed_form_checked as usize;
        report.worst_abs = report.worst_abs.max(check.worst_abs);
        report.worst_rel = report.worst_rel.max(check.worst_rel);
        report.mismatches.extend(check.mismatches);
    }
    report.missing_branches = report.coverage.missing();
    report.passed = report.mismatches.is_empty();
    Ok(report)
}
