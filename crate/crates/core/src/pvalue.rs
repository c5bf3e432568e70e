// SPDX-License-Identifier: MIT OR Apache-2.0

//! Tail probabilities of the scan maximum: analytic approximations with and
//! without a skewness correction, Monte Carlo estimates and critical values.

use serde::Serialize;
use statrs::function::erf::erf;

use crate::cbp::{cbp_group_size, r_curve, sample_cbp};
use crate::error::{CbpError, Result};
use crate::moments::{MomentCoefficients, MomentCurves, ScanWindow};
use crate::parallel::map_batches;
use crate::simgraph::{classify_edges, SimilarityGraph};

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

pub fn normal_pdf(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

/// `Phi(x) - 1/2`, computed without cancellation near zero.
fn normal_cdf_centered(x: f64) -> f64 {
    0.5 * erf(x / std::f64::consts::SQRT_2)
}

pub fn normal_cdf(x: f64) -> f64 {
    0.5 + normal_cdf_centered(x)
}

/// Overshoot correction `nu(x)` in its usual closed-form approximation.
pub fn nu(x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(CbpError::InvalidArgument(format!(
            "nu needs a positive finite argument, got {x}"
        )));
    }
    let h = x / 2.0;
    Ok((2.0 / x) * normal_cdf_centered(h) / (h * normal_cdf(h) + normal_pdf(h)))
}

/// Local correlation slope `C(t)` with `a = t / L` treated as real.
pub fn c_of_t(coef: &MomentCoefficients, n: usize, block: usize, t: usize) -> Result<f64> {
    let m = n / block;
    if m < 4 {
        return Err(CbpError::TooFewBlocks {
            block,
            blocks: m,
            required: 4,
        });
    }
    let (a, m, l) = (t as f64 / block as f64, m as f64, block as f64);
    let s = (m - 2.0 * a).powi(2);
    let h1 = 2.0 * m * (m - 2.0) * (m - 3.0);
    let h2 = (m - 3.0) * (s - 2.0 * m);
    let h3 = -4.0 * s + 4.0 * m;
    let h4 = m * (m - 1.0) * (m - 2.0) * (m - 3.0);
    let h5 = 4.0 * m * (m - 1.0) * (a - 1.0) * (m - a - 1.0);
    let h6 = -4.0 * a * (m - a) * (m - 2.0) * (m - 3.0);
    let num = m * (m - 1.0) * (h1 * coef.c1 + h2 * coef.c2 + h3 * coef.c3);
    let den = 2.0
        * l
        * a
        * (m - a)
        * (h4 * (2.0 * coef.c1 + coef.c2) + h5 * coef.c3 + h6 * coef.c0 * coef.c0);
    if !(den > 0.0) {
        return Err(CbpError::DegenerateConfiguration {
            t,
            message: format!("denominator of C(t) is {den}"),
        });
    }
    let c = num / den;
    if !(c > 0.0) {
        return Err(CbpError::DegenerateConfiguration {
            t,
            message: format!("C(t) = {c} is not positive"),
        });
    }
    Ok(c)
}

/// `C(t)` for every `t` in the window.
pub fn c_curve(
    coef: &MomentCoefficients,
    n: usize,
    block: usize,
    window: ScanWindow,
) -> Result<Vec<f64>> {
    window.iter().map(|t| c_of_t(coef, n, block, t)).collect()
}

fn term(b: f64, c: f64) -> f64 {
    c * nu((2.0 * b * b * c).sqrt()).unwrap_or(1.0)
}

/// Unclamped first-order tail sum for a precomputed `C` curve.
pub fn tail_sum_a1(b: f64, c: &[f64]) -> f64 {
    b * normal_pdf(b) * c.iter().map(|&ct| term(b, ct)).sum::<f64>()
}

/// Unclamped skewness-corrected tail sum; returns the window offsets whose
/// term was dropped.
pub fn tail_sum_a2(b: f64, c: &[f64], gamma: &[f64]) -> (f64, Vec<usize>) {
    let mut skipped = Vec::new();
    let mut sum = 0.0;
    for (k, (&ct, &g)) in c.iter().zip(gamma).enumerate() {
        let disc = 1.0 + 2.0 * b * g;
        if !(disc > 0.0) {
            skipped.push(k);
            continue;
        }
        // Same value as (-1 + sqrt(disc)) / g, stable as g -> 0.
        let theta = 2.0 * b / (1.0 + disc.sqrt());
        let root = 1.0 + g * theta;
        if !(root > 0.0) {
            skipped.push(k);
            continue;
        }
        let s = (0.5 * (b - theta).powi(2) + g * theta.powi(3) / 6.0).exp() / root.sqrt();
        sum += s * term(b, ct);
    }
    (b * normal_pdf(b) * sum, skipped)
}

fn clamp_p(b: f64, raw: f64) -> f64 {
    // A non-positive threshold is exceeded with certainty for our purposes.
    if b <= 0.0 {
        1.0
    } else {
        raw.clamp(0.0, 1.0)
    }
}

pub fn pvalue_a1(
    b: f64,
    coef: &MomentCoefficients,
    n: usize,
    block: usize,
    window: ScanWindow,
) -> Result<f64> {
    check_b(b)?;
    let c = c_curve(coef, n, block, window)?;
    Ok(clamp_p(b, tail_sum_a1(b, &c)))
}

/// Skewness-corrected p-value and the dropped `t` values. `gamma` is indexed
/// over the window.
pub fn pvalue_a2(
    b: f64,
    coef: &MomentCoefficients,
    gamma: &[f64],
    n: usize,
    block: usize,
    window: ScanWindow,
) -> Result<(f64, Vec<usize>)> {
    check_b(b)?;
    check_gamma(gamma, window)?;
    let c = c_curve(coef, n, block, window)?;
    let (raw, skipped) = tail_sum_a2(b, &c, gamma);
    Ok((
        clamp_p(b, raw),
        skipped.into_iter().map(|k| window.n0 + k).collect(),
    ))
}

fn check_b(b: f64) -> Result<()> {
    if b.is_nan() {
        return Err(CbpError::InvalidArgument("threshold is NaN".into()));
    }
    Ok(())
}

fn check_gamma(gamma: &[f64], window: ScanWindow) -> Result<()> {
    if gamma.len() != window.len() {
        return Err(CbpError::InvalidArgument(format!(
            "skewness curve has {} values, window has {}",
            gamma.len(),
            window.len()
        )));
    }
    Ok(())
}

/// Monte Carlo skewness `E(Z^3)` of the standardized statistic under plain
/// permutation, by window offset.
#[derive(Clone, Debug, Serialize)]
pub struct SkewnessCurve {
    pub window: ScanWindow,
    pub gamma: Vec<f64>,
    pub std_error: Vec<f64>,
    pub samples: usize,
}

pub const MIN_SKEW_SAMPLES: usize = 1000;

pub fn skewness_curve(
    g: &SimilarityGraph,
    window: ScanWindow,
    samples: usize,
    seed: u64,
    workers: usize,
) -> Result<SkewnessCurve> {
    if samples < MIN_SKEW_SAMPLES {
        return Err(CbpError::InvalidArgument(format!(
            "skewness needs at least {MIN_SKEW_SAMPLES} permutations, got {samples}"
        )));
    }
    let tax = classify_edges(g, 1)?;
    let curves = MomentCurves::compute(g, &tax)?;
    curves.z_curve(&vec![0; g.n() + 1], window)?;
    let n = g.n();
    let width = window.len();
    let parts = map_batches(samples, seed, workers, |rng, size| {
        let mut s3 = vec![0.0f64; width];
        let mut s6 = vec![0.0f64; width];
        for _ in 0..size {
            let a = sample_cbp(n, 1, rng).expect("n >= 4 was checked");
            let r = r_curve(g, &a.pi);
            for (k, t) in window.iter().enumerate() {
                let z = -(r[t] as f64 - curves.e[t]) / curves.sd[t];
                let z3 = z * z * z;
                s3[k] += z3;
                s6[k] += z3 * z3;
            }
        }
        (s3, s6)
    })?;
    let mut s3 = vec![0.0; width];
    let mut s6 = vec![0.0; width];
    for (p3, p6) in parts {
        for k in 0..width {
            s3[k] += p3[k];
            s6[k] += p6[k];
        }
    }
    let nb = samples as f64;
    let gamma: Vec<f64> = s3.iter().map(|s| s / nb).collect();
    let std_error = s6
        .iter()
        .zip(&gamma)
        .map(|(s, g)| ((s / nb - g * g).max(0.0) / nb).sqrt())
        .collect();
    Ok(SkewnessCurve {
        window,
        gamma,
        std_error,
        samples,
    })
}

/// Scan maxima of `samples` random circular block permutations, each
/// standardized with the same analytic curves as the observed statistic.
pub fn mc_maxima(
    g: &SimilarityGraph,
    curves: &MomentCurves,
    window: ScanWindow,
    samples: usize,
    seed: u64,
    workers: usize,
) -> Result<Vec<f64>> {
    curves.z_curve(&vec![0; g.n() + 1], window)?;
    let (n, block) = (g.n(), curves.block);
    cbp_group_size(n, block)?;
    let parts = map_batches(samples, seed, workers, |rng, size| {
        (0..size)
            .map(|_| {
                let a = sample_cbp(n, block, rng).expect("geometry was checked");
                curves.z_max(&r_curve(g, &a.pi), window)
            })
            .collect::<Vec<f64>>()
    })?;
    Ok(parts.into_iter().flatten().collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct McEstimate {
    pub p: f64,
    pub exceed: usize,
    pub samples: usize,
}

/// Add-one estimate `(1 + #{max >= b}) / (B + 1)`.
pub fn mc_pvalue_from_maxima(maxima: &[f64], b: f64) -> McEstimate {
    let exceed = maxima.iter().filter(|&&x| x >= b).count();
    McEstimate {
        p: (1 + exceed) as f64 / (maxima.len() + 1) as f64,
        exceed,
        samples: maxima.len(),
    }
}

pub fn pvalue_mc(
    g: &SimilarityGraph,
    curves: &MomentCurves,
    b: f64,
    samples: usize,
    window: ScanWindow,
    seed: u64,
    workers: usize,
) -> Result<McEstimate> {
    if samples == 0 {
        return Err(CbpError::InvalidArgument(
            "Monte Carlo needs at least one sample".into(),
        ));
    }
    check_b(b)?;
    Ok(mc_pvalue_from_maxima(
        &mc_maxima(g, curves, window, samples, seed, workers)?,
        b,
    ))
}

/// Smallest sampled maximum whose add-one p-value is at most `alpha`.
pub fn mc_critical_value(maxima: &[f64], alpha: f64) -> Result<f64> {
    let mut sorted = maxima.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    // With k samples at or above the threshold, p = (1 + k) / (B + 1).
    let k = ((alpha * (sorted.len() + 1) as f64).floor() as usize).saturating_sub(1);
    if k == 0 {
        return Err(CbpError::InvalidArgument(format!(
            "{} samples cannot resolve alpha={alpha}",
            sorted.len()
        )));
    }
    Ok(sorted[k - 1])
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum AnalyticMethod {
    A1,
    A2,
}

const BRACKET: (f64, f64) = (1.0, 8.0);
const P_TOLERANCE: f64 = 1e-5;

/// Threshold `b` in `[1, 8]` at which the analytic p-value equals `alpha`.
pub fn critical_value(
    alpha: f64,
    method: AnalyticMethod,
    coef: &MomentCoefficients,
    gamma: Option<&[f64]>,
    n: usize,
    block: usize,
    window: ScanWindow,
) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 0.5) {
        return Err(CbpError::InvalidArgument(format!(
            "alpha={alpha} outside (0, 0.5)"
        )));
    }
    let c = c_curve(coef, n, block, window)?;
    let gamma = match method {
        AnalyticMethod::A1 => None,
        AnalyticMethod::A2 => {
            let g = gamma
                .ok_or_else(|| CbpError::InvalidArgument("A2 needs a skewness curve".into()))?;
            check_gamma(g, window)?;
            Some(g)
        }
    };
    let p = |b: f64| {
        clamp_p(
            b,
            match gamma {
                None => tail_sum_a1(b, &c),
                Some(g) => tail_sum_a2(b, &c, g).0,
            },
        )
    };
    let (mut lo, mut hi) = BRACKET;
    if p(lo) < alpha || p(hi) > alpha {
        return Err(CbpError::NoBracket { lo, hi });
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let pm = p(mid);
        if (pm - alpha).abs() <= P_TOLERANCE {
            return Ok(mid);
        }
        if pm > alpha {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Tail probabilities for one observed scan maximum.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PvalueReport {
    pub b_obs: f64,
    pub p_a1: Option<f64>,
    pub p_a2: Option<f64>,
    pub p_mc: Option<f64>,
    #[serde(rename = "B")]
    pub mc_samples: usize,
    #[serde(rename = "skew_B")]
    pub skew_samples: usize,
    pub skipped_t: Vec<usize>,
    pub window: ScanWindow,
    #[serde(rename = "L")]
    pub block: usize,
}
