// SPDX-License-Identifier: MIT OR Apache-2.0

//! Single change-point detection and the data-driven block-size rule.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::cbp::r_curve_identity;
use crate::error::{CbpError, Result};
use crate::moments::{MomentCurves, ScanWindow, ZCurve};
use crate::parallel::{map_indexed, stream_rng};
use crate::pvalue::{
    mc_maxima, mc_pvalue_from_maxima, pvalue_a1, pvalue_a2, skewness_curve, PvalueReport,
};
use crate::seqdata::{augmentation_for, pairwise_distances, LoadedInput, Metric};
use crate::simgraph::{build_knn, build_mst, classify_edges, GraphKind, SimilarityGraph};

pub const MIN_LENGTH: usize = 20;
pub const DEFAULT_WINDOW_FRAC: f64 = 0.05;
pub const DEFAULT_RATIO_THRESHOLD: f64 = 0.99;
pub const DEFAULT_SKEW_SAMPLES: usize = 10_000;

/// How to obtain the similarity graph from an input.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GraphSpec {
    pub kind: GraphKind,
    pub metric: Metric,
}

impl Default for GraphSpec {
    fn default() -> Self {
        Self {
            kind: GraphKind::Mst,
            metric: Metric::Euclidean,
        }
    }
}

/// Similarity graph over the raw observations, before any padding.
#[derive(Clone, Debug)]
pub struct PreparedGraph {
    pub graph: SimilarityGraph,
    pub kind: GraphKind,
}

impl PreparedGraph {
    pub fn n_raw(&self) -> usize {
        self.graph.n()
    }
}

pub fn prepare_graph(input: &LoadedInput, spec: &GraphSpec) -> Result<PreparedGraph> {
    let n_raw = input.sequence.n_raw();
    let graph = match (&spec.kind, &input.edges) {
        (GraphKind::Edges, Some(edges)) => SimilarityGraph::new(n_raw, edges.iter().copied())?,
        (GraphKind::Edges, None) => {
            return Err(CbpError::InvalidArgument(
                "edge-list graph needs an edge-list input".into(),
            ))
        }
        (_, Some(_)) => {
            return Err(CbpError::InvalidArgument(
                "an edge-list input can only be used with the edges graph".into(),
            ))
        }
        (kind, None) => {
            let computed;
            let dist = match &input.distances {
                Some(d) => d,
                None => {
                    computed = pairwise_distances(&input.sequence, spec.metric)?;
                    &computed
                }
            };
            match kind {
                GraphKind::Mst => build_mst(dist)?,
                GraphKind::Knn { k } => build_knn(dist, *k)?,
                GraphKind::Edges => unreachable!(),
            }
        }
    };
    Ok(PreparedGraph {
        graph,
        kind: spec.kind.clone(),
    })
}

/// Which tail probabilities to compute.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PvalueSpec {
    pub a1: bool,
    pub a2: bool,
    /// Monte Carlo permutations; 0 disables the Monte Carlo p-value.
    pub mc_samples: usize,
    pub skew_samples: usize,
    pub seed: u64,
    pub workers: usize,
}

impl Default for PvalueSpec {
    fn default() -> Self {
        Self {
            a1: true,
            a2: true,
            mc_samples: 0,
            skew_samples: DEFAULT_SKEW_SAMPLES,
            seed: 0,
            workers: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GraphSummary {
    #[serde(rename = "type")]
    pub kind: String,
    #[serde(rename = "|G|")]
    pub edges: usize,
}

impl GraphSummary {
    fn of(g: &PreparedGraph) -> Self {
        let kind = match g.kind {
            GraphKind::Mst => "mst".to_string(),
            GraphKind::Knn { k } => format!("knn:{k}"),
            GraphKind::Edges => "edges".to_string(),
        };
        Self {
            kind,
            edges: g.graph.edge_count(),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ScanResult {
    pub t_hat: usize,
    pub z_max: f64,
    pub window: ScanWindow,
    #[serde(rename = "L")]
    pub block: usize,
    pub p_a1: Option<f64>,
    pub p_a2: Option<f64>,
    pub p_mc: Option<f64>,
    pub graph: GraphSummary,
    pub x_aug: usize,
    pub report: PvalueReport,
    #[serde(skip)]
    pub z: ZCurve,
    #[serde(skip)]
    pub curves: MomentCurves,
}

impl ScanResult {
    /// Plot-ready `t,z` rows over the window.
    pub fn z_csv(&self) -> String {
        let mut out = String::from("t,z\n");
        for (k, t) in self.z.window.iter().enumerate() {
            out.push_str(&format!("{t},{}\n", self.z.values[k]));
        }
        out
    }
}

/// Padded graph, moments and observed curve for one block size.
struct Scan {
    graph: SimilarityGraph,
    curves: MomentCurves,
    window: ScanWindow,
    z: ZCurve,
    x_aug: usize,
}

fn scan(g: &PreparedGraph, block: usize, window_frac: f64) -> Result<Scan> {
    let n_raw = g.n_raw();
    if n_raw < MIN_LENGTH {
        return Err(CbpError::InvalidArgument(format!(
            "sequence has {n_raw} observations, at least {MIN_LENGTH} are needed"
        )));
    }
    if block == 0 {
        return Err(CbpError::InvalidArgument(
            "block size must be at least 1".into(),
        ));
    }
    let window = ScanWindow::from_fraction(n_raw, window_frac)?;
    let x_aug = augmentation_for(n_raw, block);
    let graph = g.graph.with_len(n_raw + x_aug)?;
    let tax = classify_edges(&graph, block)?;
    let curves = MomentCurves::compute(&graph, &tax)?;
    let z = curves.z_curve(&r_curve_identity(&graph), window)?;
    Ok(Scan {
        graph,
        curves,
        window,
        z,
        x_aug,
    })
}

fn sub_seed(seed: u64, tag: u64) -> u64 {
    stream_rng(seed, u64::MAX - tag).next_u64()
}

pub fn detect(
    input: &LoadedInput,
    spec: &GraphSpec,
    block: usize,
    window_frac: f64,
    pv: &PvalueSpec,
) -> Result<ScanResult> {
    detect_prepared(&prepare_graph(input, spec)?, block, window_frac, pv)
}

/// Full scan on an already built graph.
pub fn detect_prepared(
    g: &PreparedGraph,
    block: usize,
    window_frac: f64,
    pv: &PvalueSpec,
) -> Result<ScanResult> {
    let s = scan(g, block, window_frac)?;
    let (t_hat, z_max) = s.z.argmax();
    let n = s.graph.n();
    let coef = &s.curves.coefficients;
    let p_a1 = if pv.a1 {
        Some(pvalue_a1(z_max, coef, n, block, s.window)?)
    } else {
        None
    };
    let (p_a2, skipped_t) = if pv.a2 {
        let gamma = skewness_curve(
            &s.graph,
            s.window,
            pv.skew_samples,
            sub_seed(pv.seed, 1),
            pv.workers,
        )?;
        let (p, skipped) = pvalue_a2(z_max, coef, &gamma.gamma, n, block, s.window)?;
        (Some(p), skipped)
    } else {
        (None, Vec::new())
    };
    let p_mc = if pv.mc_samples > 0 {
        let maxima = mc_maxima(
            &s.graph,
            &s.curves,
            s.window,
            pv.mc_samples,
            sub_seed(pv.seed, 2),
            pv.workers,
        )?;
        Some(mc_pvalue_from_maxima(&maxima, z_max).p)
    } else {
        None
    };
    let report = PvalueReport {
        b_obs: z_max,
        p_a1,
        p_a2,
        p_mc,
        mc_samples: pv.mc_samples,
        skew_samples: if pv.a2 { pv.skew_samples } else { 0 },
        skipped_t,
        window: s.window,
        block,
    };
    Ok(ScanResult {
        t_hat,
        z_max,
        window: s.window,
        block,
        p_a1,
        p_a2,
        p_mc,
        graph: GraphSummary::of(g),
        x_aug: s.x_aug,
        report,
        z: s.z,
        curves: s.curves,
    })
}

/// Scan maximum for one block size, or the reason it is unavailable.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CandidateOutcome {
    #[serde(rename = "L")]
    pub block: usize,
    pub z_max: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LSelectionTrace {
    pub candidates: Vec<usize>,
    pub z_max_per_l: Vec<Option<f64>>,
    /// `ratios[k] = z_max(candidates[k + 1]) / z_max(candidates[k])`.
    pub ratios: Vec<Option<f64>>,
    pub threshold: f64,
    pub chosen_l: usize,
    /// Set when no ratio reached the threshold and the largest candidate was taken.
    pub fallback: bool,
    pub outcomes: Vec<CandidateOutcome>,
}

impl LSelectionTrace {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("L,z_max,ratio\n");
        for (k, &l) in self.candidates.iter().enumerate() {
            let z = self.z_max_per_l[k]
                .map(|v| v.to_string())
                .unwrap_or_default();
            let r = self
                .ratios
                .get(k)
                .copied()
                .flatten()
                .map(|v| v.to_string())
                .unwrap_or_default();
            out.push_str(&format!("{l},{z},{r}\n"));
        }
        out
    }
}

pub fn default_candidates() -> Vec<usize> {
    (1..=12).collect()
}

/// Picks the block size at which the scan maximum stops moving: the larger
/// member of the first consecutive pair whose ratio reaches `threshold`.
pub fn select_l(
    g: &PreparedGraph,
    candidates: &[usize],
    threshold: f64,
    window_frac: f64,
    workers: usize,
) -> Result<LSelectionTrace> {
    if candidates.len() < 2 {
        return Err(CbpError::InvalidArgument(
            "block-size selection needs at least two candidates".into(),
        ));
    }
    if candidates.windows(2).any(|w| w[0] >= w[1]) || candidates[0] == 0 {
        return Err(CbpError::InvalidArgument(
            "candidates must be positive and strictly increasing".into(),
        ));
    }
    if !(threshold > 0.0) {
        return Err(CbpError::InvalidArgument(format!(
            "ratio threshold {threshold} must be positive"
        )));
    }
    let outcomes = map_indexed(candidates.len(), workers, |k| {
        let block = candidates[k];
        match scan(g, block, window_frac) {
            Ok(s) => CandidateOutcome {
                block,
                z_max: Some(s.z.argmax().1),
                error: None,
            },
            Err(e) => CandidateOutcome {
                block,
                z_max: None,
                error: Some(e.to_string()),
            },
        }
    })?;
    // Problems shared by every candidate are input errors, not per-L failures.
    if outcomes.iter().all(|o| o.z_max.is_none()) {
        scan(g, candidates[0], window_frac)?;
    }
    let z_max_per_l: Vec<Option<f64>> = outcomes.iter().map(|o| o.z_max).collect();
    let ratios: Vec<Option<f64>> = z_max_per_l
        .windows(2)
        .map(|w| match (w[0], w[1]) {
            (Some(a), Some(b)) if a > 0.0 => Some(b / a),
            _ => None,
        })
        .collect();
    let hit = ratios
        .iter()
        .position(|r| r.is_some_and(|r| r >= threshold));
    let (chosen_l, fallback) = match hit {
        Some(k) => (candidates[k + 1], false),
        None => (*candidates.last().unwrap(), true),
    };
    Ok(LSelectionTrace {
        candidates: candidates.to_vec(),
        z_max_per_l,
        ratios,
        threshold,
        chosen_l,
        fallback,
        outcomes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seqdata::ObservationSequence;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian_rows(n: usize, d: usize, shift_at: usize, shift: f64, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                (0..d)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        z + if i >= shift_at { shift } else { 0.0 }
                    })
                    .collect()
            })
            .collect()
    }

    fn input(rows: &[Vec<f64>]) -> LoadedInput {
        LoadedInput {
            sequence: ObservationSequence::from_rows(rows).unwrap(),
            distances: None,
            edges: None,
        }
    }

    fn quick() -> PvalueSpec {
        PvalueSpec {
            a2: false,
            ..PvalueSpec::default()
        }
    }

    #[test]
    fn finds_obvious_shift() {
        let rows = gaussian_rows(20, 2, 10, 2.0, 11);
        let r = detect(&input(&rows), &GraphSpec::default(), 1, 0.05, &quick()).unwrap();
        assert!((8..=12).contains(&r.t_hat), "t_hat={}", r.t_hat);
        assert_eq!(r.z.get(r.t_hat), Some(r.z_max));
    }

    #[test]
    fn default_window_at_200() {
        let rows = gaussian_rows(200, 2, 200, 0.0, 1);
        let r = detect(&input(&rows), &GraphSpec::default(), 5, 0.05, &quick()).unwrap();
        assert_eq!((r.window.n0, r.window.n1), (10, 190));
        assert!(r.t_hat >= 10 && r.t_hat <= 190);
    }

    #[test]
    fn augmentation_reported() {
        let rows = gaussian_rows(100, 2, 50, 1.0, 2);
        let r = detect(&input(&rows), &GraphSpec::default(), 3, 0.05, &quick()).unwrap();
        assert_eq!(r.x_aug, 2);
        assert_eq!(r.curves.n, 102);
    }

    #[test]
    fn too_short_rejected() {
        let rows = gaussian_rows(19, 2, 10, 1.0, 2);
        assert!(detect(&input(&rows), &GraphSpec::default(), 1, 0.05, &quick()).is_err());
    }

    #[test]
    fn deterministic_given_seed() {
        let rows = gaussian_rows(60, 3, 30, 0.8, 4);
        let pv = PvalueSpec {
            mc_samples: 300,
            skew_samples: 1000,
            seed: 8,
            ..PvalueSpec::default()
        };
        let a = detect(&input(&rows), &GraphSpec::default(), 2, 0.05, &pv).unwrap();
        let b = detect(
            &input(&rows),
            &GraphSpec::default(),
            2,
            0.05,
            &PvalueSpec { workers: 3, ..pv },
        )
        .unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }

    #[test]
    fn selection_rule_and_fallback() {
        let rows = gaussian_rows(120, 3, 60, 1.0, 5);
        let g = prepare_graph(&input(&rows), &GraphSpec::default()).unwrap();
        let tr = select_l(&g, &[1, 2, 3, 4], 0.0001, 0.05, 1).unwrap();
        assert_eq!(tr.chosen_l, 2);
        assert!(!tr.fallback);
        let tr = select_l(&g, &[1, 2, 3, 4], 1e9, 0.05, 2).unwrap();
        assert_eq!(tr.chosen_l, 4);
        assert!(tr.fallback);
        assert_eq!(tr.ratios.len(), 3);
        assert!(select_l(&g, &[3], 0.99, 0.05, 1).is_err());
    }

    #[test]
    fn edge_input_requires_edge_graph() {
        let li = LoadedInput {
            sequence: ObservationSequence::opaque(30).unwrap(),
            distances: None,
            edges: Some((0..29).map(|i| (i, i + 1)).collect()),
        };
        assert!(prepare_graph(&li, &GraphSpec::default()).is_err());
        let spec = GraphSpec {
            kind: GraphKind::Edges,
            metric: Metric::Euclidean,
        };
        assert_eq!(prepare_graph(&li, &spec).unwrap().graph.edge_count(), 29);
    }
}
