// SPDX-License-Identifier: MIT OR Apache-2.0

//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::time::{Duration, Instant};

use cbp_core::cbp::r_curve_identity;
use cbp_core::detector::{prepare_graph, GraphSpec};
use cbp_core::moments::{
    counts_by_blocking, covariance_grid, variance_coefficients, variance_grid, BranchCoverage,
    ScanWindow,
};
use cbp_core::oracle::{random_instance, run_suite, OracleConfig, SuiteReport};
use cbp_core::parallel::stream_rng;
use cbp_core::pvalue::{c_of_t, pvalue_a1, pvalue_a2, skewness_curve};
use cbp_core::seqdata::{pairwise_distances, LoadedInput, Metric};
use cbp_core::simgraph::{build_mst, SimilarityGraph};
use cbp_core::simlab::{
    run_experiment, BlockSummary, ExperimentConfig, ModelName, Noise, PvalueMethod, SimModel,
};
use rand::Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn workers() -> usize {
    std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
}

fn mst_of_model(model: &SimModel, seed: u64) -> SimilarityGraph {
    let seq = model
        .generator()
        .unwrap()
        .generate(&mut stream_rng(seed, 0))
        .unwrap();
    build_mst(&pairwise_distances(&seq, Metric::Euclidean).unwrap()).unwrap()
}

fn method(s: &BlockSummary, m: PvalueMethod) -> &cbp_core::simlab::MethodSummary {
    s.methods
        .iter()
        .find(|x| x.method == m)
        .expect("method present")
}

fn block(r: &cbp_core::simlab::ExperimentReport, l: usize) -> &BlockSummary {
    r.summaries
        .iter()
        .find(|s| s.block == l)
        .expect("block present")
}

fn describe(r: &SuiteReport) -> String {
    format!(
        "{} instances, {} comparisons, {} with Var/Cov, worst rel {:.1e}, {} mismatches",
        r.instances,
        r.compared,
        r.variance_instances,
        r.worst_rel,
        r.mismatches.len()
    )
}

fn coverage_text(c: &BranchCoverage) -> String {
    format!(
        "h0 {:?}, h1 {:?}, wraparound {}, triangles {}",
        c.shared, c.disjoint, c.wraparound, c.triangles
    )
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let small = run_suite(&OracleConfig::small(2024), None).unwrap();
    // The small corpus cannot place four close index pairs on two edges, so
    // a second corpus with longer sequences and local edges completes the
    // branch coverage under the same oracle and tolerance.
    let extended_cfg = OracleConfig {
        pairs: vec![
            (12, 3),
            (15, 3),
            (18, 3),
            (20, 4),
            (24, 4),
            (25, 5),
            (30, 5),
        ],
        instances: 140,
        max_edges: 12,
        local_fraction: 0.8,
        ..OracleConfig::small(2025)
    };
    let extended = run_suite(&extended_cfg, None).unwrap();
    let mut union = small.coverage.clone();
    union.merge(&extended.coverage);
    let missing = union.missing();
    let elapsed = start.elapsed();
    println!("    small corpus: {}", describe(&small));
    println!(
        "    small corpus coverage: {}",
        coverage_text(&small.coverage)
    );
    println!("    small corpus missing: {:?}", small.missing_branches);
    println!("    extended corpus: {}", describe(&extended));
    println!("    union coverage: {}", coverage_text(&union));
    Outcome {
        pass: small.passed
            && extended.passed
            && missing.is_empty()
            && elapsed < Duration::from_secs(60),
        detail: format!(
            "worst rel {:.1e} (tol 1e-10), missing branches {:?}, {:.1}s (limit 60s)",
            small.worst_rel.max(extended.worst_rel),
            missing,
            elapsed.as_secs_f64()
        ),
    }
}

fn criterion_2() -> Outcome {
    let mut closed_ok = 0;
    let mut identity_ok = 0;
    let mut bound_ok = 0;
    let mut bound_total = 0;
    for k in 0..50u64 {
        let mut rng = stream_rng(77, k);
        let n = [30usize, 60, 90][rng.random_range(0..3)];
        let g = random_instance(&mut rng, n, 5, 3 * n, 0.5);
        let e = g.edge_count() as i128;
        let d2 = g.degree_square_sum() as i128;
        let c = counts_by_blocking(&g, 1).unwrap();
        let coef = variance_coefficients(&g, 1).unwrap();
        let closed = [e, e, d2 - 2 * e, e * e - d2 + e];
        if [c.w0, c.w1, c.w2, c.w3] == closed
            && [coef.c0, coef.c1, coef.c2, coef.c3] == closed.map(|v| v as f64)
        {
            closed_ok += 1;
        }
        if c.w1 + c.w2 + c.w3 == c.w0 * c.w0 {
            identity_ok += 1;
        }
        for l in [2usize, 3, 5] {
            // c1 + c2 + c3 >= c0^2 with c_k = w_k / L, in integers.
            let w = counts_by_blocking(&g, l).unwrap();
            bound_total += 1;
            if (l as i128) * (w.w1 + w.w2 + w.w3) >= w.w0 * w.w0 {
                bound_ok += 1;
            }
        }
    }
    Outcome {
        pass: closed_ok == 50 && identity_ok == 50 && bound_ok == bound_total,
        detail: format!(
            "closed forms exact {closed_ok}/50, c1+c2+c3=c0^2 at L=1 {identity_ok}/50, bound at L in {{2,3,5}} {bound_ok}/{bound_total}"
        ),
    }
}

fn criterion_3() -> Outcome {
    let (n, l) = (1000usize, 5usize);
    let m = n / l;
    let g = mst_of_model(&SimModel::new(ModelName::Iid, 10, n).unwrap(), 3);
    let coef = variance_coefficients(&g, l).unwrap();
    let var = variance_grid(&coef, n, l).unwrap();
    let mut worst_cov = 0.0f64;
    for a in 0..=m {
        let c = covariance_grid(&coef, n, l, a, a).unwrap();
        worst_cov = worst_cov.max((c - var[a]).abs() / var[a].abs().max(1.0));
    }
    let rho =
        |x: usize, y: usize| covariance_grid(&coef, n, l, x, y).unwrap() / (var[x] * var[y]).sqrt();
    // C(t) = (1/L) d rho(s, t) / ds at s = t-, s counted in blocks.
    let window = ScanWindow::from_fraction(n, 0.05).unwrap();
    let (mut worst_fd2, mut worst_fd1) = (0.0f64, 0.0f64);
    for a in window.n0 / l..=window.n1 / l {
        let c = c_of_t(&coef, n, l, a * l).unwrap();
        let fd1 = (1.0 - rho(a - 1, a)) / l as f64;
        let fd2 = (3.0 - 4.0 * rho(a - 1, a) + rho(a - 2, a)) / (2.0 * l as f64);
        worst_fd1 = worst_fd1.max((c - fd1).abs() / c);
        worst_fd2 = worst_fd2.max((c - fd2).abs() / c);
    }
    let bound = 5.0 / m as f64;
    Outcome {
        pass: worst_cov <= 1e-12 && worst_fd2 <= bound,
        detail: format!(
            "max |Cov(a,a)-Var(a)| rel {worst_cov:.1e} (tol 1e-12); C vs second-order difference max rel {worst_fd2:.4} (tol {bound:.3}); first-order difference {worst_fd1:.4}"
        ),
    }
}

fn null_config() -> ExperimentConfig {
    ExperimentConfig::from_toml_str(
        "model = \"M1\"\nn = 200\nd = 10\nblock = [1, 5]\nreplicates = 500\npvalues = [\"a2\", \"mc\"]\nmc_samples = 2000\nseed = 20240601\n",
    )
    .unwrap()
}

fn criteria_4_5() -> (Outcome, Outcome) {
    let start = Instant::now();
    let r = run_experiment(&null_config(), workers()).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let l5 = block(&r, 5);
    let a2 = method(l5, PvalueMethod::A2);
    let mc = method(l5, PvalueMethod::Mc);
    let c4 = Outcome {
        pass: (0.02..=0.09).contains(&a2.rate) && mc.ks_pvalue > 0.01 && l5.failed == 0,
        detail: format!(
            "L=5 A2 rejection {:.3} (range [0.02, 0.09]); KS on MC p-values D={:.4} p={:.3} (reject below 0.01); {:.0}s",
            a2.rate, mc.ks_statistic, mc.ks_pvalue, secs
        ),
    };
    let l1 = method(block(&r, 1), PvalueMethod::Mc);
    let c5 = Outcome {
        pass: l1.rate > 0.05 && l1.binomial_p_above_alpha < 0.01,
        detail: format!(
            "L=1 rejection {:.3} over {} runs, one-sided binomial p={:.2e} (needs < 0.01)",
            l1.rate, l1.completed, l1.binomial_p_above_alpha
        ),
    };
    (c4, c5)
}

fn criterion_6() -> Outcome {
    let ar = ExperimentConfig::from_toml_str(
        "model = \"M1\"\nn = 200\nd = 10\nblock = 5\nshift = 2.0\nreplicates = 500\npvalues = [\"mc\"]\nmc_samples = 2000\nseed = 20240602\n",
    )
    .unwrap();
    let iid = ExperimentConfig::from_toml_str(
        "model = \"iid\"\nn = 200\nd = 10\nblock = [1, 5]\nshift = 2.0\nreplicates = 500\npvalues = [\"mc\"]\nmc_samples = 2000\nseed = 20240603\n",
    )
    .unwrap();
    let r_ar = run_experiment(&ar, workers()).unwrap();
    let r_iid = run_experiment(&iid, workers()).unwrap();
    let cbp_ar = method(block(&r_ar, 5), PvalueMethod::Mc).rate;
    let cbp_iid = method(block(&r_iid, 5), PvalueMethod::Mc).rate;
    let perm_iid = method(block(&r_iid, 1), PvalueMethod::Mc).rate;
    let near = |x: f64, target: f64| (x - target).abs() <= 0.08;
    Outcome {
        pass: near(cbp_ar, 0.775) && near(cbp_iid, 0.779) && near(perm_iid, 0.791),
        detail: format!(
            "CBP L=5 AR(1) {cbp_ar:.3} (0.775), CBP L=5 independent {cbp_iid:.3} (0.779), permutation independent {perm_iid:.3} (0.791); tol 0.08"
        ),
    }
}

fn criterion_7() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    let mut worst_single = 0.0f64;
    for model in ["M1", "M3"] {
        let cfg = ExperimentConfig::from_toml_str(&format!(
            "kind = \"critical-value\"\nmodel = \"{model}\"\nn = 200\nd = 10\nblock = [2, 5]\nreplicates = 10\nmc_samples = 10000\nskew_samples = 10000\nseed = 20240604\n"
        ))
        .unwrap();
        let r = run_experiment(&cfg, workers()).unwrap();
        for s in &r.summaries {
            let gap = s.a2_minus_mc.as_ref().unwrap().mean;
            let a1_a2 = s.a1_minus_a2.as_ref().unwrap().mean;
            pass &= gap.abs() <= 0.1 && a1_a2 > 0.0 && s.failed == 0;
            parts.push(format!(
                "{model} L={}: A1 {:.3} A2 {:.3} MC {:.3}",
                s.block,
                s.cv_a1.as_ref().unwrap().mean,
                s.cv_a2.as_ref().unwrap().mean,
                s.cv_mc.as_ref().unwrap().mean
            ));
        }
        for o in &r.outcomes {
            for b in &o.blocks {
                worst_single = worst_single.max((b.cv_a2.unwrap() - b.cv_mc.unwrap()).abs());
            }
        }
    }
    for p in &parts {
        println!("    {p}");
    }
    Outcome {
        pass,
        detail: format!(
            "mean |A2 - MC| <= 0.1 and A1 > A2 in every setting (10 sequences each); largest single-sequence |A2 - MC| {worst_single:.3}"
        ),
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let k = v.len();
    if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}

fn criterion_8() -> Outcome {
    let n = 200;
    let window = ScanWindow::from_fraction(n, 0.05).unwrap();
    let mut pass = true;
    let mut parts = Vec::new();
    for (d, noise) in [(100usize, Noise::T5), (1000, Noise::Laplace)] {
        let mut model = SimModel::new(ModelName::M2, d, n).unwrap();
        model.noise = noise;
        let generator = model.generator().unwrap();
        let (mut edges, mut centers) = (Vec::new(), Vec::new());
        for k in 0..20u64 {
            let seq = generator
                .generate(&mut stream_rng(8000 + d as u64, k))
                .unwrap();
            let input = LoadedInput {
                sequence: seq,
                distances: None,
                edges: None,
            };
            let g = prepare_graph(&input, &GraphSpec::default()).unwrap().graph;
            let s = skewness_curve(&g, window, 10_000, k, workers()).unwrap();
            let w = s.gamma.len();
            edges.push(0.5 * (s.gamma[0] + s.gamma[w - 1]));
            centers.push(s.gamma[n / 2 - window.n0]);
        }
        let (e, c) = (median(edges), median(centers));
        pass &= e < 0.0 && e < c;
        parts.push(format!(
            "d={d}: median gamma at window ends {e:.3}, at center {c:.3}"
        ));
    }
    Outcome {
        pass,
        detail: parts.join("; "),
    }
}

fn criterion_9() -> Outcome {
    let mut equal = 0;
    for k in 0..100u64 {
        let mut rng = stream_rng(99, k);
        let n = 10 * rng.random_range(5..30usize);
        let g = random_instance(&mut rng, n, 5, 2 * n, 0.3);
        let block = [1usize, 2, 5][rng.random_range(0..3)];
        let b = rng.random_range(1.5..5.0);
        let coef = variance_coefficients(&g, block).unwrap();
        let w = ScanWindow::from_fraction(n, 0.05).unwrap();
        let zero = vec![0.0; w.len()];
        let p1 = pvalue_a1(b, &coef, n, block, w).unwrap();
        let (p2, skipped) = pvalue_a2(b, &coef, &zero, n, block, w).unwrap();
        if p1.to_bits() == p2.to_bits() && skipped.is_empty() {
            equal += 1;
        }
    }
    Outcome {
        pass: equal == 100,
        detail: format!("bitwise equal in {equal}/100 (b, instance) pairs"),
    }
}

fn per_call<F: FnMut()>(mut f: F, reps: usize) -> f64 {
    let mut best = f64::INFINITY;
    for _ in 0..5 {
        let start = Instant::now();
        for _ in 0..reps {
            f();
        }
        best = best.min(start.elapsed().as_secs_f64() / reps as f64);
    }
    best
}

fn criterion_10() -> Outcome {
    let g = mst_of_model(&SimModel::new(ModelName::M1, 10, 1000).unwrap(), 10);
    let vc = per_call(
        || {
            std::hint::black_box(variance_coefficients(&g, 5).unwrap());
        },
        1,
    );
    let sizes = [1_000usize, 10_000, 100_000];
    let times: Vec<f64> = sizes
        .iter()
        .map(|&n| {
            let path = SimilarityGraph::new(n, (0..n - 1).map(|i| (i, i + 1))).unwrap();
            per_call(
                || {
                    std::hint::black_box(r_curve_identity(&path));
                },
                100_000_000 / n / 100,
            )
        })
        .collect();
    // Least-squares slope of log time against log n.
    let xs: Vec<f64> = sizes.iter().map(|&n| (n as f64).ln()).collect();
    let ys: Vec<f64> = times.iter().map(|t| t.ln()).collect();
    let (mx, my) = (xs.iter().sum::<f64>() / 3.0, ys.iter().sum::<f64>() / 3.0);
    let slope = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (x - mx) * (y - my))
        .sum::<f64>()
        / xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
    Outcome {
        pass: vc <= 1.0 && slope <= 1.25,
        detail: format!(
            "variance_coefficients n=1000 L=5 MST {:.1} ms (limit 1000 ms); r_curve times {:?} us, log-log slope {slope:.2} (limit 1.25)",
            vc * 1e3,
            times.iter().map(|t| (t * 1e6 * 10.0).round() / 10.0).collect::<Vec<_>>()
        ),
    }
}

fn main() {
    let mut failed = Vec::new();
    let mut record = |id: usize, name: &str, o: Outcome| {
        println!(
            "criterion {id:>2} {}: {name}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        if !o.pass {
            failed.push(id);
        }
    };
    record(1, "oracle equivalence", criterion_1());
    record(2, "L=1 reduction", criterion_2());
    record(3, "kernel consistency", criterion_3());
    let (c4, c5) = criteria_4_5();
    record(4, "type I error", c4);
    record(5, "plain permutation over-rejects", c5);
    record(6, "power", criterion_6());
    record(7, "critical values", criterion_7());
    record(8, "skewness direction", criterion_8());
    record(9, "zero-skew identity", criterion_9());
    record(10, "performance", criterion_10());
    if failed.is_empty() {
        println!("acceptance: all 10 criteria passed");
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
