// SPDX-License-Identifier: MIT OR Apache-2.0

use cbp_core::detector::{detect, prepare_graph, select_l, GraphSpec, PvalueSpec};
use cbp_core::moments::ScanWindow;
use cbp_core::parallel::stream_rng;
use cbp_core::pvalue::{skewness_curve, SkewnessCurve};
use cbp_core::seqdata::LoadedInput;
use cbp_core::simlab::{generate, inject_mean_shift, ModelName, SimModel};
use cbp_core::CbpError;

fn input(model: ModelName, d: usize, n: usize, seed: u64) -> LoadedInput {
    let m = SimModel::new(model, d, n).unwrap();
    LoadedInput {
        sequence: generate(&m, &mut stream_rng(seed, 0)).unwrap(),
        distances: None,
        edges: None,
    }
}

fn analytic_only() -> PvalueSpec {
    PvalueSpec {
        a2: false,
        ..PvalueSpec::default()
    }
}

#[test]
fn reversal_mirrors_the_scan() {
    let fwd = input(ModelName::Iid, 5, 120, 1);
    let rev = LoadedInput {
        sequence: fwd.sequence.reversed(),
        distances: None,
        edges: None,
    };
    let spec = GraphSpec::default();
    let a = detect(&fwd, &spec, 4, 0.05, &analytic_only()).unwrap();
    let b = detect(&rev, &spec, 4, 0.05, &analytic_only()).unwrap();
    for t in a.window.iter() {
        let (x, y) = (a.z.get(t).unwrap(), b.z.get(120 - t).unwrap());
        assert!((x - y).abs() < 1e-9, "t={t}: {x} vs {y}");
    }
    assert!((a.z_max - b.z_max).abs() < 1e-9);
    assert!((a.p_a1.unwrap() - b.p_a1.unwrap()).abs() < 1e-12);
}

#[test]
fn detect_is_pure_and_worker_independent() {
    let data = input(ModelName::M1, 4, 80, 2);
    let spec = GraphSpec::default();
    let pv = PvalueSpec {
        mc_samples: 600,
        skew_samples: 1000,
        seed: 9,
        ..PvalueSpec::default()
    };
    let a = detect(&data, &spec, 2, 0.05, &pv).unwrap();
    let b = detect(&data, &spec, 2, 0.05, &pv).unwrap();
    let c = detect(
        &data,
        &spec,
        2,
        0.05,
        &PvalueSpec {
            workers: 3,
            ..pv.clone()
        },
    )
    .unwrap();
    let ja = serde_json::to_string(&a).unwrap();
    assert_eq!(ja, serde_json::to_string(&b).unwrap());
    assert_eq!(ja, serde_json::to_string(&c).unwrap());
    assert_eq!(a.z, c.z);
}

#[test]
fn padding_is_reported_and_scan_stays_on_real_points() {
    let data = input(ModelName::Iid, 3, 100, 3);
    let r = detect(&data, &GraphSpec::default(), 3, 0.05, &analytic_only()).unwrap();
    assert_eq!(r.x_aug, 2);
    assert_eq!((r.window.n0, r.window.n1), (5, 95));
    assert!(r.t_hat >= 5 && r.t_hat <= 95);
}

#[test]
fn short_sequences_are_rejected() {
    let data = input(ModelName::Iid, 2, 19, 4);
    let err = detect(&data, &GraphSpec::default(), 1, 0.05, &analytic_only()).unwrap_err();
    assert!(
        matches!(
            err,
            CbpError::InvalidArgument(_) | CbpError::TooFewBlocks { .. }
        ),
        "{err:?}"
    );
}

#[test]
fn shift_is_located() {
    let data = input(ModelName::Iid, 10, 200, 5);
    let shifted = LoadedInput {
        sequence: inject_mean_shift(&data.sequence, 100, 4.0).unwrap(),
        distances: None,
        edges: None,
    };
    let r = detect(&shifted, &GraphSpec::default(), 5, 0.05, &analytic_only()).unwrap();
    assert!((90..=110).contains(&r.t_hat), "t_hat {}", r.t_hat);
    assert!(r.p_a1.unwrap() < 1e-3);
}

#[test]
fn skewness_is_stable_across_seeds() {
    let data = input(ModelName::Iid, 10, 200, 6);
    let g = prepare_graph(&data, &GraphSpec::default()).unwrap().graph;
    let w = ScanWindow::from_fraction(200, 0.05).unwrap();
    let gap = |a: &SkewnessCurve, b: &SkewnessCurve| {
        a.gamma
            .iter()
            .zip(&b.gamma)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    };
    // At 10k permutations the standard error is about 0.04 per position, so
    // only the standardized gap is bounded there.
    let a = skewness_curve(&g, w, 10_000, 1, 1).unwrap();
    let b = skewness_curve(&g, w, 10_000, 2, 1).unwrap();
    let worst = (0..w.len())
        .map(|k| {
            (a.gamma[k] - b.gamma[k]).abs()
                / (a.std_error[k].powi(2) + b.std_error[k].powi(2)).sqrt()
        })
        .fold(0.0, f64::max);
    assert!(worst < 4.5, "standardized gap {worst}");
    let a = skewness_curve(&g, w, 100_000, 1, 1).unwrap();
    let b = skewness_curve(&g, w, 100_000, 2, 1).unwrap();
    assert!(gap(&a, &b) < 0.1, "max gap {}", gap(&a, &b));
}

#[test]
fn quadrupling_samples_halves_the_standard_error() {
    let data = input(ModelName::Iid, 10, 100, 7);
    let g = prepare_graph(&data, &GraphSpec::default()).unwrap().graph;
    let w = ScanWindow::from_fraction(100, 0.05).unwrap();
    let a = skewness_curve(&g, w, 2000, 1, 1).unwrap();
    let b = skewness_curve(&g, w, 8000, 1, 1).unwrap();
    let ratio = a.std_error.iter().sum::<f64>() / b.std_error.iter().sum::<f64>();
    assert!((1.7..2.3).contains(&ratio), "ratio {ratio}");
}

#[test]
fn small_blocks_barely_move_the_curve_on_independent_data() {
    let mut total = 0.0;
    for k in 0..100 {
        let data = input(ModelName::Iid, 10, 1000, 100 + k);
        let g = prepare_graph(&data, &GraphSpec::default()).unwrap();
        let one = cbp_core::detector::detect_prepared(&g, 1, 0.05, &analytic_only()).unwrap();
        let two = cbp_core::detector::detect_prepared(&g, 2, 0.05, &analytic_only()).unwrap();
        let sup = one
            .z
            .values
            .iter()
            .zip(&two.z.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        total += sup;
    }
    let mean = total / 100.0;
    assert!(mean < 0.05, "mean sup |Z1 - Z2| = {mean}");
}

#[test]
fn select_l_follows_the_threshold() {
    let data = input(ModelName::M1, 5, 120, 8);
    let g = prepare_graph(&data, &GraphSpec::default()).unwrap();
    let cands = [1, 2, 3, 4];
    let easy = select_l(&g, &cands, 1e-9, 0.05, 1).unwrap();
    assert_eq!(easy.chosen_l, 2);
    assert!(!easy.fallback);
    assert_eq!(easy.ratios.len(), 3);
    let hard = select_l(&g, &cands, 1e9, 0.05, 1).unwrap();
    assert_eq!(hard.chosen_l, 4);
    assert!(hard.fallback);
    assert!(select_l(&g, &[3, 2], 0.99, 0.05, 1).is_err());
    assert!(select_l(&g, &[2], 0.99, 0.05, 1).is_err());
}
