// SPDX-License-Identifier: MIT OR Apache-2.0

//! Graph functionals `c0..c3` entering the variance and covariance kernels.
//!
//! Every coefficient is `(1/L)` times an integer count of (edge pair,
//! blocking) configurations, so the counts are accumulated exactly in
//! integers and divided once at the end.

use serde::Serialize;

use crate::error::{CbpError, Result};
use crate::simgraph::{circular_distance, SimilarityGraph};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MomentCoefficients {
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
}

/// Integer configuration counts; `c_k = w_k / L`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ConfigurationCounts {
    pub block: usize,
    pub w0: i128,
    pub w1: i128,
    pub w2: i128,
    pub w3: i128,
}

impl ConfigurationCounts {
    pub fn coefficients(&self) -> MomentCoefficients {
        let l = self.block as f64;
        MomentCoefficients {
            c0: self.w0 as f64 / l,
            c1: self.w1 as f64 / l,
            c2: self.w2 as f64 / l,
            c3: self.w3 as f64 / l,
        }
    }
}

/// Which pairs go through the per-pair case analysis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PairStrategy {
    /// Only pairs with some cross distance below `L`; the remaining
    /// separated pairs are aggregated through residue counts.
    Local,
    /// Every ordered pair of edges individually. Quadratic; for testing.
    Exhaustive,
}

/// How often each branch of the pair case analysis was taken.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct BranchCoverage {
    /// Shared-node pairs by number of close index pairs (0..=3).
    pub shared: [u64; 4],
    /// Disjoint pairs by number of close index pairs (0..=6).
    pub disjoint: [u64; 7],
    /// Close pairs whose short arc wraps past position n.
    pub wraparound: u64,
    /// Disjoint pairs containing a close triangle.
    pub triangles: u64,
}

impl BranchCoverage {
    pub fn merge(&mut self, other: &BranchCoverage) {
        for (a, b) in self.shared.iter_mut().zip(other.shared) {
            *a += b;
        }
        for (a, b) in self.disjoint.iter_mut().zip(other.disjoint) {
            *a += b;
        }
        self.wraparound += other.wraparound;
        self.triangles += other.triangles;
    }

    /// Branch labels that were never taken.
    pub fn missing(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (h, &c) in self.shared.iter().enumerate() {
            if c == 0 {
                out.push(format!("h0={h}"));
            }
        }
        for (h, &c) in self.disjoint.iter().enumerate() {
            if c == 0 {
                out.push(format!("h1={h}"));
            }
        }
        if self.wraparound == 0 {
            out.push("wraparound".into());
        }
        if self.triangles == 0 {
            out.push("triangle".into());
        }
        out
    }
}

/// Whether the distance-based case analysis describes every pair. With
/// fewer than four blocks, close points can wrap all the way around the
/// circle; the blocking decomposition is used there instead.
pub fn case_analysis_applies(n: usize, block: usize) -> bool {
    block > 0 && n.is_multiple_of(block) && n / block >= 4
}

#[inline]
fn pos(x: i64) -> i64 {
    x.max(0)
}

/// Geometry helper for one `(n, L)` pair.
#[derive(Clone, Copy)]
struct Circle {
    n: usize,
    l: i64,
}

impl Circle {
    #[inline]
    fn d(&self, a: usize, b: usize) -> i64 {
        circular_distance(a, b, self.n) as i64
    }

    /// Start of the short arc between two close positions.
    #[inline]
    fn start(&self, a: usize, b: usize) -> i64 {
        let diff = a.abs_diff(b) as i64;
        if diff < self.l {
            a.min(b) as i64
        } else {
            a.max(b) as i64
        }
    }

    /// Number of blockings separating both close pairs `(a, b)` and `(c, e)`.
    #[inline]
    fn overlap(&self, a: usize, b: usize, c: usize, e: usize) -> i64 {
        let d1 = self.d(a, b);
        let d2 = self.d(c, e);
        let shift = (self.start(c, e) - self.start(a, b)).rem_euclid(self.l);
        pos(d1.min(shift + d2) - shift) + pos(d1.min(shift + d2 - self.l))
    }

    #[inline]
    fn wraps(&self, a: usize, b: usize) -> bool {
        let diff = a.abs_diff(b) as i64;
        diff >= self.l && (self.n as i64 - diff) < self.l
    }

    /// Residue-set overlap for two arbitrary edges.
    #[inline]
    fn residue_overlap(&self, a: usize, b: usize, c: usize, e: usize) -> i64 {
        let (d1, d2) = (self.d(a, b), self.d(c, e));
        match (d1 < self.l, d2 < self.l) {
            (false, false) => self.l,
            (false, true) => d2,
            (true, false) => d1,
            (true, true) => self.overlap(a, b, c, e),
        }
    }
}

/// Counts for the ordered pair `(i,j), (i,u)` sharing node `i`.
fn shared_weights(
    c: &Circle,
    i: usize,
    j: usize,
    u: usize,
    cov: Option<&mut BranchCoverage>,
) -> [i64; 3] {
    let l = c.l;
    let (dij, diu, dju) = (c.d(i, j), c.d(i, u), c.d(j, u));
    let h0 = (dij < l) as usize + (diu < l) as usize + (dju < l) as usize;
    if let Some(cov) = cov {
        cov.shared[h0] += 1;
        cov.wraparound += [(i, j), (i, u), (j, u)]
            .iter()
            .filter(|&&(a, b)| c.wraps(a, b))
            .count() as u64;
    }
    let max = dij.max(diu).max(dju);
    let mut w1 = 0;
    if h0 < 3 && dju < l {
        w1 += l - dju;
    }
    if h0 == 3 && max != dju {
        w1 += dij.min(diu);
    }
    let w2 = match h0 {
        0 => l,
        1 => dij.min(diu).min(dju),
        2 => max - l,
        _ => 0,
    };
    [w1, w2, 0]
}

/// Counts for the ordered pair `(i,j), (u,v)` with four distinct endpoints.
fn disjoint_weights(
    c: &Circle,
    i: usize,
    j: usize,
    u: usize,
    v: usize,
    cov: Option<&mut BranchCoverage>,
) -> [i64; 3] {
    let l = c.l;
    let (dij, duv) = (c.d(i, j), c.d(u, v));
    let (diu, div, dju, djv) = (c.d(i, u), c.d(i, v), c.d(j, u), c.d(j, v));
    let near = |x: i64| x < l;
    let all = [dij, diu, div, dju, djv, duv];
    let h1 = all.iter().filter(|&&x| near(x)).count();
    let o3 = (near(dij) && near(diu) && near(dju)) as i64
        + (near(dij) && near(div) && near(djv)) as i64
        + (near(duv) && near(diu) && near(div)) as i64
        + (near(duv) && near(dju) && near(djv)) as i64;
    if let Some(cov) = cov {
        cov.disjoint[h1] += 1;
        if o3 > 0 {
            cov.triangles += 1;
        }
        cov.wraparound += [(i, j), (i, u), (i, v), (j, u), (j, v), (u, v)]
            .iter()
            .filter(|&&(a, b)| c.wraps(a, b))
            .count() as u64;
    }
    let mut sorted = all;
    sorted.sort_unstable();
    let min2 = sorted[0] + sorted[1];
    let min3 = min2 + sorted[2];
    let max_cross = diu.max(div).max(dju).max(djv);
    let min_cross = diu.min(div).min(dju).min(djv);
    let (mut w1, mut w2, mut w3) = (0i64, 0i64, 0i64);
    match h1 {
        0 => w3 = l,
        1 => {
            if !near(dij) && !near(duv) {
                w2 = l - sorted[0];
            }
            w3 = sorted[0];
        }
        2 => {
            let diag_a = near(diu) && near(djv);
            let diag_b = near(div) && near(dju);
            let x_a = if diag_a { c.overlap(i, u, j, v) } else { 0 };
            let x_b = if diag_b { c.overlap(i, v, j, u) } else { 0 };
            if diag_a {
                w1 += l - diu - djv + x_a;
                w2 += 2 * diu + 2 * djv - 2 * l - 2 * x_a;
                w3 += x_a - min2 + l;
            }
            if diag_b {
                w1 += l - div - dju + x_b;
                w2 += 2 * div + 2 * dju - 2 * l - 2 * x_b;
                w3 += x_b - min2 + l;
            }
            w2 += pos(l - diu) + pos(l - div) + pos(l - dju) + pos(l - djv);
            w3 += min2 - l;
            if near(dij) && near(duv) {
                w3 += c.overlap(i, j, u, v) - min2 + l;
            }
        }
        3 => {
            let open = (o3 == 0) as i64;
            let mixed = (near(dij) && !near(duv)) || (!near(dij) && near(duv));
            let both_far = !near(dij) && !near(duv);
            w1 += pos(2 * l - min3) * (open * mixed as i64 + both_far as i64);
            if near(dij) && near(duv) {
                w2 += l - min_cross;
            }
            // The far in-edge distance equals the chain span min3 whenever the
            // chain is the short way round; min3 stays correct when it is not.
            if near(dij) && !near(duv) {
                w2 += dij - open * (min3 - 2 * l).abs();
            }
            if !near(dij) && near(duv) {
                w2 += duv - open * (min3 - 2 * l).abs();
            }
            if both_far {
                w2 += min3 - l - 2 * pos(min3 - 2 * l);
            }
            w3 += pos(min3 - 2 * l);
        }
        4 => {
            if !near(dij) {
                w1 += l + duv - max_cross;
                w2 += max_cross - l;
            }
            if !near(duv) {
                w1 += l + dij - max_cross;
                w2 += max_cross - l;
            }
            if !near(diu) && !near(div) {
                w2 += duv;
            }
            if !near(dju) && !near(djv) {
                w2 += duv;
            }
            if !near(diu) && !near(dju) {
                w2 += dij;
            }
            if !near(div) && !near(djv) {
                w2 += dij;
            }
        }
        _ => {
            let max = sorted[5];
            if max == dij {
                w1 += duv;
            } else if max == duv {
                w1 += dij;
            } else if max == diu {
                w1 += djv * (dij == div + djv) as i64;
            } else if max == div {
                w1 += dju * (dij == diu + dju) as i64;
            } else if max == dju {
                w1 += div * (dij == div + djv) as i64;
            } else {
                w1 += diu * (dij == diu + dju) as i64;
            }
            if h1 == 5 {
                w2 += pos(max_cross - l);
            }
        }
    }
    [w1, w2, w3]
}

fn check_block(g: &SimilarityGraph, block: usize) -> Result<Circle> {
    if block == 0 || !g.n().is_multiple_of(block) {
        return Err(CbpError::InvalidArgument(format!(
            "block size {block} does not divide n={}",
            g.n()
        )));
    }
    Ok(Circle {
        n: g.n(),
        l: block as i64,
    })
}

/// Coefficients by the per-pair case analysis, falling back to the blocking
/// decomposition when [`case_analysis_applies`] is false.
pub fn variance_coefficients(g: &SimilarityGraph, block: usize) -> Result<MomentCoefficients> {
    if !case_analysis_applies(g.n(), block) {
        return Ok(counts_by_blocking(g, block)?.coefficients());
    }
    Ok(counts_by_cases(g, block, PairStrategy::Local, None)?.coefficients())
}

/// Configuration counts via the distance case analysis.
///
/// The caller is responsible for [`case_analysis_applies`]; outside it the
/// counts are not meaningful.
pub fn counts_by_cases(
    g: &SimilarityGraph,
    block: usize,
    strategy: PairStrategy,
    mut coverage: Option<&mut BranchCoverage>,
) -> Result<ConfigurationCounts> {
    let c = check_block(g, block)?;
    let edges = g.edges();
    let ne = edges.len();
    let mut w = [0i128; 3];
    let add = |w: &mut [i128; 3], x: [i64; 3]| {
        w[0] += x[0] as i128;
        w[1] += x[1] as i128;
        w[2] += x[2] as i128;
    };

    let w0: i128 = edges.iter().map(|&(i, j)| c.d(i, j).min(c.l) as i128).sum();
    // e = f: both copies cross on the same two blocks.
    w[0] += w0;

    // Shared-node ordered pairs.
    let mut shared_residue = 0i128;
    for v in 0..g.n() {
        let inc = g.incident(v);
        for &e in inc {
            let j = other(edges[e], v);
            for &f in inc {
                if e == f {
                    continue;
                }
                let u = other(edges[f], v);
                add(&mut w, shared_weights(&c, v, j, u, coverage.as_deref_mut()));
                shared_residue += c.residue_overlap(v, j, v, u) as i128;
            }
        }
    }

    match strategy {
        PairStrategy::Exhaustive => {
            for (e, &(i, j)) in edges.iter().enumerate() {
                for (f, &(u, v)) in edges.iter().enumerate() {
                    if e == f || u == i || u == j || v == i || v == j {
                        continue;
                    }
                    add(
                        &mut w,
                        disjoint_weights(&c, i, j, u, v, coverage.as_deref_mut()),
                    );
                }
            }
        }
        PairStrategy::Local => {
            // All ordered pairs e != f, weighted by the number of blockings
            // cutting both: sum over blockings of N(N - 1).
            let l = block;
            let mut diff = vec![0i64; l + 1];
            for &(i, j) in edges {
                let d = c.d(i, j);
                if d >= c.l {
                    diff[0] += 1;
                    diff[l] -= 1;
                } else {
                    let s = ((c.start(i, j) + 1).rem_euclid(c.l)) as usize;
                    let end = s + d as usize;
                    if end <= l {
                        diff[s] += 1;
                        diff[end] -= 1;
                    } else {
                        diff[s] += 1;
                        diff[l] -= 1;
                        diff[0] += 1;
                        diff[end - l] -= 1;
                    }
                }
            }
            let mut total = 0i128;
            let mut acc = 0i64;
            for r in 0..l {
                acc += diff[r];
                total += acc as i128 * (acc as i128 - 1);
            }
            let mut separated = total - shared_residue;

            // Disjoint pairs with some cross distance below L.
            let reach = (block - 1).min(g.n() / 2);
            let n = g.n();
            let mut stamp = vec![usize::MAX; ne];
            for (e, &(i, j)) in edges.iter().enumerate() {
                for end in [i, j] {
                    for s in 0..=reach {
                        for p in [(end + s) % n, (end + n - s) % n] {
                            for &f in g.incident(p) {
                                if stamp[f] == e {
                                    continue;
                                }
                                stamp[f] = e;
                                let (u, v) = edges[f];
                                if u == i || u == j || v == i || v == j {
                                    continue;
                                }
                                add(
                                    &mut w,
                                    disjoint_weights(&c, i, j, u, v, coverage.as_deref_mut()),
                                );
                                separated -= c.residue_overlap(i, j, u, v) as i128;
                            }
                        }
                    }
                }
            }
            w[2] += separated;
        }
    }
    Ok(ConfigurationCounts {
        block,
        w0,
        w1: w[0],
        w2: w[1],
        w3: w[2],
    })
}

#[inline]
fn other((a, b): (usize, usize), v: usize) -> usize {
    if a == v {
        b
    } else {
        a
    }
}

/// Counts for one blocking: `(c0, c1, c2, c3)` of that blocking.
pub fn blocking_counts(g: &SimilarityGraph, block: usize, offset: usize) -> [i128; 4] {
    let n = g.n();
    let mut pairs: Vec<(usize, usize)> = Vec::with_capacity(g.edge_count());
    let mut boundary = vec![0i128; n / block];
    for &(i, j) in g.edges() {
        let bi = crate::simgraph::block_of(i, offset, n, block);
        let bj = crate::simgraph::block_of(j, offset, n, block);
        if bi != bj {
            pairs.push((bi.min(bj), bi.max(bj)));
            boundary[bi] += 1;
            boundary[bj] += 1;
        }
    }
    pairs.sort_unstable();
    let c0 = pairs.len() as i128;
    let mut c1 = 0i128;
    let mut k = 0;
    while k < pairs.len() {
        let mut r = k;
        while r < pairs.len() && pairs[r] == pairs[k] {
            r += 1;
        }
        c1 += ((r - k) as i128).pow(2);
        k = r;
    }
    let c2 = boundary.iter().map(|d| d * d).sum::<i128>() - 2 * c1;
    [c0, c1, c2, c0 * c0 - c1 - c2]
}

/// Exact counts by averaging per-blocking configuration counts over all
/// `L` blockings; O(L (|G| log |G| + n)) and valid for every `n`.
pub fn counts_by_blocking(g: &SimilarityGraph, block: usize) -> Result<ConfigurationCounts> {
    check_block(g, block)?;
    let mut w = [0i128; 4];
    for offset in 0..block {
        let c = blocking_counts(g, block, offset);
        for k in 0..4 {
            w[k] += c[k];
        }
    }
    Ok(ConfigurationCounts {
        block,
        w0: w[0],
        w1: w[1],
        w2: w[2],
        w3: w[3],
    })
}
