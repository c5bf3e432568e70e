// SPDX-License-Identifier: MIT OR Apache-2.0

//! Similarity graphs over sequence positions and the circular edge taxonomy.

use std::collections::HashSet;

use serde::Serialize;

use crate::error::{CbpError, Result};
use crate::seqdata::DistanceMatrix;

/// Undirected simple graph over sequence positions `0..n`.
///
/// Positions at or beyond `n_edges_limit` (pseudo-observations) never carry
/// edges.
#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityGraph {
    n: usize,
    edges: Vec<(usize, usize)>,
    incident: Vec<Vec<usize>>,
}

impl SimilarityGraph {
    /// Builds a graph over `n` nodes from 0-based pairs. Pairs are normalised
    /// to `(min, max)` and sorted; self-loops, duplicates and out-of-range
    /// endpoints are rejected.
    pub fn new(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut list: Vec<(usize, usize)> = Vec::new();
        for (i, j) in edges {
            if i == j {
                return Err(CbpError::InvalidArgument(format!(
                    "self-loop at node {}",
                    i + 1
                )));
            }
            if i >= n || j >= n {
                return Err(CbpError::InvalidArgument(format!(
                    "edge ({}, {}) outside [1, {n}]",
                    i + 1,
                    j + 1
                )));
            }
            list.push((i.min(j), i.max(j)));
        }
        list.sort_unstable();
        if let Some(w) = list.windows(2).find(|w| w[0] == w[1]) {
            return Err(CbpError::InvalidArgument(format!(
                "duplicate edge ({}, {})",
                w[0].0 + 1,
                w[0].1 + 1
            )));
        }
        Ok(Self::from_sorted(n, list))
    }

    fn from_sorted(n: usize, edges: Vec<(usize, usize)>) -> Self {
        let mut incident = vec![Vec::new(); n];
        for (id, &(i, j)) in edges.iter().enumerate() {
            incident[i].push(id);
            incident[j].push(id);
        }
        Self { n, edges, incident }
    }

    /// The same edges over a longer node range; the extra nodes are the
    /// edgeless pseudo-observations appended by augmentation.
    pub fn with_len(&self, n: usize) -> Result<Self> {
        if n < self.n {
            return Err(CbpError::InvalidArgument(format!(
                "cannot shrink a graph over {} nodes to {n}",
                self.n
            )));
        }
        Ok(Self::from_sorted(n, self.edges.clone()))
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn incident(&self, v: usize) -> &[usize] {
        &self.incident[v]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.incident[v].len()
    }

    /// Sum of squared degrees, `sum_i |G_i|^2`.
    pub fn degree_square_sum(&self) -> u64 {
        self.incident.iter().map(|e| (e.len() as u64).pow(2)).sum()
    }

    /// Nodes `0..limit` may carry edges; checks that nothing touches the rest.
    pub fn check_pseudo_free(&self, limit: usize) -> Result<()> {
        match self.edges.iter().find(|&&(_, j)| j >= limit) {
            Some(&(i, j)) => Err(CbpError::InvalidArgument(format!(
                "edge ({}, {}) touches a pseudo-observation",
                i + 1,
                j + 1
            ))),
            None => Ok(()),
        }
    }

    /// Edge list as 1-based text, one `i,j` pair per line in sorted order.
    pub fn to_edge_list(&self) -> String {
        let mut out = String::with_capacity(self.edges.len() * 8);
        for &(i, j) in &self.edges {
            out.push_str(&format!("{},{}\n", i + 1, j + 1));
        }
        out
    }

    pub fn total_weight(&self, dist: &DistanceMatrix) -> f64 {
        self.edges.iter().map(|&(i, j)| dist.get(i, j)).sum()
    }
}

/// How the similarity graph is constructed from distances.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum GraphKind {
    Mst,
    Knn { k: usize },
    Edges,
}

impl std::str::FromStr for GraphKind {
    type Err = CbpError;

    /// `mst`, `knn:K` or `edges`.
    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        match lower.as_str() {
            "mst" => Ok(GraphKind::Mst),
            "edges" => Ok(GraphKind::Edges),
            _ => match lower.strip_prefix("knn:").map(str::parse::<usize>) {
                Some(Ok(k)) if k > 0 => Ok(GraphKind::Knn { k }),
                _ => Err(CbpError::InvalidArgument(format!(
                    "unknown graph '{s}', expected mst, knn:K or edges"
                ))),
            },
        }
    }
}

/// Strict ordering used for tie-breaking: distance, then lexicographic pair.
#[inline]
fn edge_key_less(w: f64, a: (usize, usize), w2: f64, b: (usize, usize)) -> bool {
    match w.total_cmp(&w2) {
        std::cmp::Ordering::Less => true,
        std::cmp::Ordering::Greater => false,
        std::cmp::Ordering::Equal => a < b,
    }
}

/// Minimum spanning tree (Prim, O(n^2)) with ties broken by lexicographic
/// `(i, j)` order, so the tree is unique for any input.
pub fn build_mst(dist: &DistanceMatrix) -> Result<SimilarityGraph> {
    let n = dist.n();
    if n < 2 {
        return Err(CbpError::InvalidArgument(
            "a spanning tree needs at least 2 observations".into(),
        ));
    }
    for i in 0..n {
        if let Some(j) = dist.row(i).iter().position(|v| !v.is_finite()) {
            return Err(CbpError::InvalidDistance {
                row: i + 1,
                column: j + 1,
                value: dist.get(i, j),
            });
        }
    }
    let mut in_tree = vec![false; n];
    let mut best_w = vec![f64::INFINITY; n];
    let mut best_pair = vec![(usize::MAX, usize::MAX); n];
    let mut edges = Vec::with_capacity(n - 1);
    in_tree[0] = true;
    for v in 1..n {
        best_w[v] = dist.get(0, v);
        best_pair[v] = (0, v);
    }
    for _ in 1..n {
        let mut pick = usize::MAX;
        for v in 0..n {
            if in_tree[v] {
                continue;
            }
            if pick == usize::MAX
                || edge_key_less(best_w[v], best_pair[v], best_w[pick], best_pair[pick])
            {
                pick = v;
            }
        }
        in_tree[pick] = true;
        edges.push(best_pair[pick]);
        let row = dist.row(pick);
        for v in 0..n {
            if in_tree[v] {
                continue;
            }
            let pair = (pick.min(v), pick.max(v));
            if edge_key_less(row[v], pair, best_w[v], best_pair[v]) {
                best_w[v] = row[v];
                best_pair[v] = pair;
            }
        }
    }
    SimilarityGraph::new(n, edges)
}

/// Undirected k-nearest-neighbour graph. Each node keeps its `k` closest
/// other nodes, ordered by distance and then by index.
pub fn build_knn(dist: &DistanceMatrix, k: usize) -> Result<SimilarityGraph> {
    let n = dist.n();
    if k == 0 || k >= n {
        return Err(CbpError::InvalidArgument(format!(
            "k={k} must satisfy 1 <= k < {n}"
        )));
    }
    let mut set = HashSet::new();
    let mut order: Vec<usize> = Vec::with_capacity(n);
    for i in 0..n {
        order.clear();
        order.extend((0..n).filter(|&j| j != i));
        let row = dist.row(i);
        order.sort_by(|&a, &b| row[a].total_cmp(&row[b]).then(a.cmp(&b)));
        for &j in order.iter().take(k) {
            set.insert((i.min(j), i.max(j)));
        }
    }
    SimilarityGraph::new(n, set)
}

/// Circular index distance `min(|i-j|, n-|i-j|)`.
#[inline]
pub fn circular_distance(i: usize, j: usize, n: usize) -> usize {
    let d = i.abs_diff(j);
    d.min(n - d)
}

/// Per-edge circular distances and category counts `|E_1|, ..., |E_L|`.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeTaxonomy {
    pub block: usize,
    pub n: usize,
    pub m: usize,
    pub delta: Vec<usize>,
    /// `counts[k - 1] = |E_k|`; the last entry collects every `delta >= L`.
    pub counts: Vec<u64>,
}

impl EdgeTaxonomy {
    /// `sum_k k |E_k|`.
    pub fn weighted_count(&self) -> u64 {
        self.counts
            .iter()
            .enumerate()
            .map(|(k, &c)| (k as u64 + 1) * c)
            .sum()
    }

    /// Category index (1-based) of edge `e`.
    pub fn category(&self, e: usize) -> usize {
        self.delta[e].min(self.block)
    }
}

/// Classifies edges by circular distance for block size `block`.
pub fn classify_edges(g: &SimilarityGraph, block: usize) -> Result<EdgeTaxonomy> {
    let n = g.n();
    if block == 0 || !n.is_multiple_of(block) {
        return Err(CbpError::InvalidArgument(format!(
            "block size {block} does not divide n={n}"
        )));
    }
    let delta: Vec<usize> = g
        .edges()
        .iter()
        .map(|&(i, j)| circular_distance(i, j, n))
        .collect();
    let mut counts = vec![0u64; block];
    for &d in &delta {
        counts[d.min(block) - 1] += 1;
    }
    Ok(EdgeTaxonomy {
        block,
        n,
        m: n / block,
        delta,
        counts,
    })
}

/// Block containing position `p` under blocking `offset`.
#[inline]
pub fn block_of(p: usize, offset: usize, n: usize, block: usize) -> usize {
    ((p + n - offset) % n) / block
}

/// Raw quantities entering the asymptotic conditions, without any verdict.
#[derive(Clone, Debug, Serialize)]
pub struct ConditionDiagnostics {
    pub edge_count: usize,
    pub n: usize,
    pub block: usize,
    /// `sum_e |A_{e,L,1}| |A_{e,L,2}|`.
    pub edge_neighborhood_sum: u64,
    /// `sum_i |A_{i,L,1}| |A_{i,L,2}|`.
    pub node_neighborhood_sum: u64,
    /// Boundary degrees `D_i(omega)` for every blocking offset.
    pub boundary_degrees: Vec<Vec<u64>>,
    /// `E_Omega(sum_i D_i)`.
    pub mean_sum_d: f64,
    /// `E_Omega(sum_i D_i^2)`.
    pub mean_sum_d2: f64,
    /// `E_Omega(sum_i D_i^2) - (E_Omega(sum_i D_i))^2 / m`.
    pub flatness: f64,
    /// Crossing edges `c_0(omega)` for every blocking offset.
    pub crossing_per_blocking: Vec<u64>,
}

/// Boundary degree `D_b` of every block under blocking `offset`.
pub fn boundary_degrees(g: &SimilarityGraph, block: usize, offset: usize) -> Vec<u64> {
    let n = g.n();
    let mut d = vec![0u64; n / block];
    for &(i, j) in g.edges() {
        let (bi, bj) = (block_of(i, offset, n, block), block_of(j, offset, n, block));
        if bi != bj {
            d[bi] += 1;
            d[bj] += 1;
        }
    }
    d
}

pub fn condition_diagnostics(g: &SimilarityGraph, block: usize) -> Result<ConditionDiagnostics> {
    let n = g.n();
    if block == 0 || !n.is_multiple_of(block) {
        return Err(CbpError::InvalidArgument(format!(
            "block size {block} does not divide n={n}"
        )));
    }
    let m = n / block;
    let ne = g.edge_count();

    // A_{e,L,0}: edges with some endpoint closer than L to an endpoint of e.
    let near_nodes = |v: usize| -> Vec<usize> {
        let reach = (block - 1).min(n / 2);
        let mut out: Vec<usize> = (0..=reach)
            .flat_map(|s| [(v + s) % n, (v + n - s) % n])
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    };
    let mut stamp = vec![usize::MAX; ne];
    let mut a0_node: Vec<Vec<usize>> = Vec::with_capacity(n);
    for v in 0..n {
        let mut set = Vec::new();
        for w in near_nodes(v) {
            for &f in g.incident(w) {
                if stamp[f] != v {
                    stamp[f] = v;
                    set.push(f);
                }
            }
        }
        a0_node.push(set);
    }
    let mut stamp = vec![usize::MAX; ne];
    let a0_edge: Vec<Vec<usize>> = g
        .edges()
        .iter()
        .enumerate()
        .map(|(e, &(i, j))| {
            let mut set = Vec::new();
            for v in [i, j] {
                for &f in &a0_node[v] {
                    if stamp[f] != e {
                        stamp[f] = e;
                        set.push(f);
                    }
                }
            }
            set
        })
        .collect();

    // Expands S to S together with the A-sets of every edge adjacent to S.
    let expand =
        |seed: &[usize], level: &[Vec<usize>], stamp: &mut Vec<usize>, tag: usize| -> usize {
            let mut size = 0usize;
            let mut adjacent = Vec::new();
            let mut adj_stamp = vec![false; ne];
            for &f in seed {
                if stamp[f] != tag {
                    stamp[f] = tag;
                    size += 1;
                }
                let (a, b) = g.edges()[f];
                for v in [a, b] {
                    for &h in g.incident(v) {
                        if !adj_stamp[h] {
                            adj_stamp[h] = true;
                            adjacent.push(h);
                        }
                    }
                }
            }
            for h in adjacent {
                for &f in &level[h] {
                    if stamp[f] != tag {
                        stamp[f] = tag;
                        size += 1;
                    }
                }
            }
            size
        };
    let collect = |seed: &[usize], level: &[Vec<usize>]| -> Vec<usize> {
        let mut seen = vec![false; ne];
        let mut out = Vec::new();
        let mut push = |f: usize, out: &mut Vec<usize>| {
            if !seen[f] {
                seen[f] = true;
                out.push(f);
            }
        };
        for &f in seed {
            push(f, &mut out);
        }
        for &f in seed {
            let (a, b) = g.edges()[f];
            for v in [a, b] {
                for &h in g.incident(v) {
                    for &x in &level[h] {
                        push(x, &mut out);
                    }
                }
            }
        }
        out
    };

    let a1_edge: Vec<Vec<usize>> = a0_edge.iter().map(|s| collect(s, &a0_edge)).collect();
    let mut stamp = vec![usize::MAX; ne];
    let mut edge_sum = 0u64;
    for e in 0..ne {
        let a2 = expand(&a1_edge[e], &a1_edge, &mut stamp, e);
        edge_sum += (a1_edge[e].len() * a2) as u64;
    }
    let mut stamp = vec![usize::MAX; ne];
    let mut node_sum = 0u64;
    for v in 0..n {
        let a1 = collect(&a0_node[v], &a0_edge);
        let a2 = expand(&a1, &a1_edge, &mut stamp, v);
        node_sum += (a1.len() * a2) as u64;
    }

    let boundary: Vec<Vec<u64>> = (0..block).map(|w| boundary_degrees(g, block, w)).collect();
    let sums: Vec<u64> = boundary.iter().map(|d| d.iter().sum()).collect();
    let sums2: Vec<u64> = boundary
        .iter()
        .map(|d| d.iter().map(|x| x * x).sum())
        .collect();
    let mean_sum_d = sums.iter().sum::<u64>() as f64 / block as f64;
    let mean_sum_d2 = sums2.iter().sum::<u64>() as f64 / block as f64;
    Ok(ConditionDiagnostics {
        edge_count: ne,
        n,
        block,
        edge_neighborhood_sum: edge_sum,
        node_neighborhood_sum: node_sum,
        crossing_per_blocking: sums.iter().map(|s| s / 2).collect(),
        boundary_degrees: boundary,
        mean_sum_d,
        mean_sum_d2,
        flatness: mean_sum_d2 - mean_sum_d * mean_sum_d / m as f64,
    })
}
