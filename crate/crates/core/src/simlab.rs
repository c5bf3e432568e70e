// SPDX-License-Identifier: MIT OR Apache-2.0

//! Simulated multivariate ARMA sequences and batch experiments.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, RngCore};
use rand_distr::{Distribution, Exp1, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, DiscreteCDF};

use crate::detector::{detect_prepared, GraphSpec, PreparedGraph, PvalueSpec};
use crate::error::{CbpError, Result};
use crate::parallel::{map_indexed, stream_rng};
use crate::pvalue::{critical_value, mc_critical_value, mc_maxima, skewness_curve, AnalyticMethod};
use crate::seqdata::{pairwise_distances, Metric, ObservationSequence};
use crate::simgraph::{build_knn, build_mst, GraphKind};

/// Named ARMA settings; `Custom` takes its coefficients from the config.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelName {
    M1,
    M2,
    M3,
    M4,
    M5,
    #[serde(rename = "iid")]
    Iid,
    #[serde(rename = "custom")]
    Custom,
}

/// `x_t = sum ar_i x_{t-i} + e_t + sum ma_j e_{t-j}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Arma {
    pub ar: Vec<f64>,
    pub ma: Vec<f64>,
}

impl Arma {
    pub fn named(name: ModelName) -> Option<Self> {
        let (ar, ma): (&[f64], &[f64]) = match name {
            ModelName::M1 => (&[0.1], &[]),
            ModelName::M2 => (&[0.1, 0.05], &[]),
            ModelName::M3 => (&[], &[0.1]),
            ModelName::M4 => (&[], &[0.1, 0.05]),
            ModelName::M5 => (&[0.1], &[0.1]),
            ModelName::Iid => (&[], &[]),
            ModelName::Custom => return None,
        };
        Some(Self {
            ar: ar.to_vec(),
            ma: ma.to_vec(),
        })
    }

    /// All roots of the AR polynomial lie outside the unit circle.
    pub fn is_stationary(&self) -> bool {
        let p = self.ar.len();
        if p == 0 {
            return true;
        }
        let mut companion = DMatrix::<f64>::zeros(p, p);
        for (i, &a) in self.ar.iter().enumerate() {
            companion[(0, i)] = a;
        }
        for i in 1..p {
            companion[(i, i - 1)] = 1.0;
        }
        companion
            .complex_eigenvalues()
            .iter()
            .all(|z| z.norm() < 1.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Noise {
    #[default]
    Gaussian,
    T5,
    Laplace,
}

impl Noise {
    /// One unit-variance innovation.
    pub fn sample<R: Rng + ?Sized>(self, rng: &mut R) -> f64 {
        match self {
            Noise::Gaussian => StandardNormal.sample(rng),
            Noise::T5 => {
                let t: f64 = StudentT::new(5.0)
                    .expect("valid degrees of freedom")
                    .sample(rng);
                t / (5.0f64 / 3.0).sqrt()
            }
            Noise::Laplace => {
                let a: f64 = Exp1.sample(rng);
                let b: f64 = Exp1.sample(rng);
                (a - b) / std::f64::consts::SQRT_2
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SimModel {
    pub arma: Arma,
    pub d: usize,
    pub n: usize,
    pub noise: Noise,
    /// Cross-sectional covariance `sigma_decay^|i-j|`; 0 leaves coordinates independent.
    pub sigma_decay: f64,
    pub burn_in: usize,
    /// Start a Gaussian AR(1) from its stationary law instead of burning in.
    pub stationary_init: bool,
}

impl SimModel {
    pub fn new(name: ModelName, d: usize, n: usize) -> Result<Self> {
        let arma = Arma::named(name).ok_or_else(|| {
            CbpError::InvalidArgument("custom models need explicit coefficients".into())
        })?;
        Ok(Self {
            arma,
            d,
            n,
            noise: Noise::Gaussian,
            sigma_decay: 0.6,
            burn_in: 1000,
            stationary_init: true,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.n == 0 {
            return Err(CbpError::InvalidArgument(
                "model needs d >= 1 and n >= 1".into(),
            ));
        }
        if self
            .arma
            .ar
            .iter()
            .chain(&self.arma.ma)
            .any(|c| !c.is_finite())
        {
            return Err(CbpError::InvalidArgument(
                "ARMA coefficients must be finite".into(),
            ));
        }
        if !self.arma.is_stationary() {
            return Err(CbpError::InvalidArgument(format!(
                "AR part {:?} is not stationary",
                self.arma.ar
            )));
        }
        if !(self.sigma_decay.abs() < 1.0) {
            return Err(CbpError::InvalidArgument(format!(
                "sigma_decay {} outside (-1, 1)",
                self.sigma_decay
            )));
        }
        Ok(())
    }

    /// Precomputes the covariance root; reuse it across replicates.
    pub fn generator(&self) -> Result<Generator> {
        self.validate()?;
        let root =
            (self.sigma_decay != 0.0 && self.d > 1).then(|| decay_root(self.d, self.sigma_decay));
        Ok(Generator {
            model: self.clone(),
            root,
        })
    }
}

/// Symmetric square root of `rho^|i-j|`.
pub fn decay_root(d: usize, rho: f64) -> DMatrix<f64> {
    let sigma = DMatrix::from_fn(d, d, |i, j| rho.powi(i.abs_diff(j) as i32));
    let eig = SymmetricEigen::new(sigma);
    let min = eig.eigenvalues.min();
    assert!(
        min > -1e-10,
        "decay matrix is not positive semidefinite (eigenvalue {min})"
    );
    let sqrt = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&sqrt) * eig.eigenvectors.transpose()
}

pub struct Generator {
    model: SimModel,
    root: Option<DMatrix<f64>>,
}

impl Generator {
    pub fn model(&self) -> &SimModel {
        &self.model
    }

    /// One `n x d` sequence.
    pub fn generate<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<ObservationSequence> {
        let m = &self.model;
        // Column t holds z_t.
        let mut z = DMatrix::<f64>::zeros(m.d, m.n);
        for c in 0..m.d {
            let series = arma_series(&m.arma, m.n, m.burn_in, m.stationary_init, m.noise, rng);
            for (t, v) in series.into_iter().enumerate() {
                z[(c, t)] = v;
            }
        }
        let y = match &self.root {
            Some(root) => root * z,
            None => z,
        };
        ObservationSequence::from_flat(m.n, m.d, y.as_slice().to_vec())
    }
}

/// One univariate series of length `n`, from a zero state after `burn_in`
/// steps, or from the stationary law for a Gaussian AR(1).
fn arma_series<R: Rng + ?Sized>(
    arma: &Arma,
    n: usize,
    burn_in: usize,
    stationary_init: bool,
    noise: Noise,
    rng: &mut R,
) -> Vec<f64> {
    if stationary_init && noise == Noise::Gaussian && arma.ar.len() == 1 && arma.ma.is_empty() {
        let phi = arma.ar[0];
        let mut out = Vec::with_capacity(n);
        let mut x = noise.sample(rng) / (1.0 - phi * phi).sqrt();
        out.push(x);
        for _ in 1..n {
            x = phi * x + noise.sample(rng);
            out.push(x);
        }
        return out;
    }
    let (p, q) = (arma.ar.len(), arma.ma.len());
    let total = burn_in + n;
    let mut x = vec![0.0; total];
    let mut e = vec![0.0; total];
    for t in 0..total {
        e[t] = noise.sample(rng);
        let mut v = e[t];
        for i in 1..=p.min(t) {
            v += arma.ar[i - 1] * x[t - i];
        }
        for j in 1..=q.min(t) {
            v += arma.ma[j - 1] * e[t - j];
        }
        x[t] = v;
    }
    x.split_off(burn_in)
}

pub fn generate<R: Rng + ?Sized>(model: &SimModel, rng: &mut R) -> Result<ObservationSequence> {
    model.generator()?.generate(rng)
}

/// Adds `delta_norm / sqrt(d)` to every coordinate of observations `tau+1..`
/// (1-based), a shift of Euclidean length `delta_norm`.
pub fn inject_mean_shift(
    seq: &ObservationSequence,
    tau: usize,
    delta_norm: f64,
) -> Result<ObservationSequence> {
    let (n, d) = (seq.n_raw(), seq.d());
    if d == 0 {
        return Err(CbpError::InvalidArgument(
            "cannot shift an opaque sequence".into(),
        ));
    }
    if tau == 0 || tau >= n {
        return Err(CbpError::InvalidArgument(format!(
            "shift point {tau} outside [1, {})",
            n
        )));
    }
    let step = delta_norm / (d as f64).sqrt();
    let mut data = Vec::with_capacity(n * d);
    for i in 0..n {
        let row = seq.row(i).expect("vector rows");
        data.extend(row.iter().map(|&v| if i >= tau { v + step } else { v }));
    }
    ObservationSequence::from_flat(n, d, data)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    /// Per-replicate p-values and rejection rates.
    #[default]
    Rejection,
    /// Per-replicate critical values from A1, A2 and Monte Carlo.
    CriticalValue,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PvalueMethod {
    A1,
    A2,
    Mc,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BlockChoice {
    One(usize),
    Grid(Vec<usize>),
}

impl BlockChoice {
    pub fn values(&self) -> Vec<usize> {
        match self {
            BlockChoice::One(l) => vec![*l],
            BlockChoice::Grid(v) => v.clone(),
        }
    }
}

fn default_model() -> ModelName {
    ModelName::M1
}
fn default_decay() -> f64 {
    0.6
}
fn default_burn_in() -> usize {
    1000
}
fn default_true() -> bool {
    true
}
fn default_graph() -> String {
    "mst".into()
}
fn default_window() -> f64 {
    crate::detector::DEFAULT_WINDOW_FRAC
}
fn default_alpha() -> f64 {
    0.05
}
fn default_pvalues() -> Vec<PvalueMethod> {
    vec![PvalueMethod::A2]
}
fn default_mc() -> usize {
    2000
}
fn default_skew() -> usize {
    crate::detector::DEFAULT_SKEW_SAMPLES
}

/// Flat experiment description, read from TOML.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub kind: ExperimentKind,
    #[serde(default = "default_model")]
    pub model: ModelName,
    #[serde(default)]
    pub ar: Option<Vec<f64>>,
    #[serde(default)]
    pub ma: Option<Vec<f64>>,
    pub n: usize,
    pub d: usize,
    #[serde(default)]
    pub noise: Noise,
    #[serde(default = "default_decay")]
    pub sigma_decay: f64,
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
    #[serde(default = "default_true")]
    pub stationary_init: bool,
    /// Euclidean length of the mean shift; 0 simulates the null.
    #[serde(default)]
    pub shift: f64,
    /// Last pre-change observation (1-based); defaults to `n / 2`.
    #[serde(default)]
    pub shift_at: Option<usize>,
    pub block: BlockChoice,
    #[serde(default = "default_graph")]
    pub graph: String,
    #[serde(default)]
    pub metric: Metric,
    #[serde(default = "default_window")]
    pub window_frac: f64,
    pub replicates: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_pvalues")]
    pub pvalues: Vec<PvalueMethod>,
    #[serde(default = "default_mc")]
    pub mc_samples: usize,
    #[serde(default = "default_skew")]
    pub skew_samples: usize,
    #[serde(default)]
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let (line, column) = e
                .span()
                .map(|s| {
                    let before = &text[..s.start];
                    let line = before.matches('\n').count() + 1;
                    (line, s.start - before.rfind('\n').map_or(0, |p| p + 1) + 1)
                })
                .unwrap_or((0, 0));
            CbpError::Parse {
                line,
                column,
                message: e.message().to_string(),
            }
        })
    }

    pub fn model(&self) -> Result<SimModel> {
        let arma = match (self.model, &self.ar, &self.ma) {
            (ModelName::Custom, ar, ma) => Arma {
                ar: ar.clone().unwrap_or_default(),
                ma: ma.clone().unwrap_or_default(),
            },
            (name, None, None) => Arma::named(name).expect("named model"),
            _ => {
                return Err(CbpError::InvalidArgument(
                    "ar/ma coefficients require model = \"custom\"".into(),
                ))
            }
        };
        let model = SimModel {
            arma,
            d: self.d,
            n: self.n,
            noise: self.noise,
            sigma_decay: self.sigma_decay,
            burn_in: self.burn_in,
            stationary_init: self.stationary_init,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn graph_spec(&self) -> Result<GraphSpec> {
        let kind: GraphKind = self.graph.parse()?;
        if kind == GraphKind::Edges {
            return Err(CbpError::InvalidArgument(
                "simulations need an mst or knn graph".into(),
            ));
        }
        Ok(GraphSpec {
            kind,
            metric: self.metric,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.model()?;
        self.graph_spec()?;
        if self.replicates == 0 {
            return Err(CbpError::InvalidArgument(
                "replicates must be at least 1".into(),
            ));
        }
        let blocks = self.block.values();
        if blocks.is_empty() || blocks.contains(&0) {
            return Err(CbpError::InvalidArgument(
                "block sizes must be positive".into(),
            ));
        }
        if !(self.alpha > 0.0 && self.alpha < 0.5) {
            return Err(CbpError::InvalidArgument(format!(
                "alpha={} outside (0, 0.5)",
                self.alpha
            )));
        }
        if let Some(tau) = self.shift_at {
            if tau == 0 || tau >= self.n {
                return Err(CbpError::InvalidArgument(format!(
                    "shift_at={tau} outside [1, n)"
                )));
            }
        }
        match self.kind {
            ExperimentKind::Rejection if self.pvalues.is_empty() => Err(CbpError::InvalidArgument(
                "no p-value method requested".into(),
            )),
            ExperimentKind::Rejection
                if self.pvalues.contains(&PvalueMethod::Mc) && self.mc_samples == 0 =>
            {
                Err(CbpError::InvalidArgument(
                    "mc p-values need mc_samples >= 1".into(),
                ))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct BlockOutcome {
    #[serde(rename = "L")]
    pub block: usize,
    pub t_hat: Option<usize>,
    pub z_max: Option<f64>,
    pub p_a1: Option<f64>,
    pub p_a2: Option<f64>,
    pub p_mc: Option<f64>,
    pub cv_a1: Option<f64>,
    pub cv_a2: Option<f64>,
    pub cv_mc: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReplicateOutcome {
    pub index: usize,
    pub data_seed: u64,
    pub pvalue_seed: u64,
    pub blocks: Vec<BlockOutcome>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MethodSummary {
    pub method: PvalueMethod,
    pub completed: usize,
    pub rejections: usize,
    pub rate: f64,
    pub std_error: f64,
    /// One-sided binomial `P(X >= rejections)` at rate `alpha`.
    pub binomial_p_above_alpha: f64,
    pub ks_statistic: f64,
    pub ks_pvalue: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MeanSe {
    pub mean: f64,
    pub std_error: f64,
    pub count: usize,
}

impl MeanSe {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let k = values.len() as f64;
        let mean = values.iter().sum::<f64>() / k;
        let var = if values.len() > 1 {
            values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0)
        } else {
            0.0
        };
        Some(Self {
            mean,
            std_error: (var / k).sqrt(),
            count: values.len(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BlockSummary {
    #[serde(rename = "L")]
    pub block: usize,
    pub failed: usize,
    pub methods: Vec<MethodSummary>,
    pub cv_a1: Option<MeanSe>,
    pub cv_a2: Option<MeanSe>,
    pub cv_mc: Option<MeanSe>,
    /// Mean per-replicate `cv_a2 - cv_mc`.
    pub a2_minus_mc: Option<MeanSe>,
    pub a1_minus_a2: Option<MeanSe>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub replicates: usize,
    pub summaries: Vec<BlockSummary>,
    pub outcomes: Vec<ReplicateOutcome>,
}

impl ExperimentReport {
    /// One row per replicate and block size.
    pub fn outcomes_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut out =
            String::from("replicate,L,t_hat,z_max,p_a1,p_a2,p_mc,cv_a1,cv_a2,cv_mc,error\n");
        for r in &self.outcomes {
            for b in &r.blocks {
                let err = b.error.as_deref().or(r.error.as_deref()).unwrap_or("");
                out.push_str(&format!(
                    "{},{},{},{},{},{},{},{},{},{},\"{}\"\n",
                    r.index + 1,
                    b.block,
                    b.t_hat.map(|t| t.to_string()).unwrap_or_default(),
                    opt(b.z_max),
                    opt(b.p_a1),
                    opt(b.p_a2),
                    opt(b.p_mc),
                    opt(b.cv_a1),
                    opt(b.cv_a2),
                    opt(b.cv_mc),
                    err.replace('"', "'"),
                ));
            }
        }
        out
    }

    /// Table-style summary, one row per block size and method.
    pub fn summary_csv(&self) -> String {
        let mut out = String::from("L,quantity,value,std_error,count\n");
        for s in &self.summaries {
            for m in &s.methods {
                let name = format!("{:?}", m.method).to_lowercase();
                out.push_str(&format!(
                    "{},rate_{name},{},{},{}\n",
                    s.block, m.rate, m.std_error, m.completed
                ));
            }
            for (name, v) in [
                ("cv_a1", &s.cv_a1),
                ("cv_a2", &s.cv_a2),
                ("cv_mc", &s.cv_mc),
            ] {
                if let Some(v) = v {
                    out.push_str(&format!(
                        "{},{name},{},{},{}\n",
                        s.block, v.mean, v.std_error, v.count
                    ));
                }
            }
        }
        out
    }
}

/// Kolmogorov-Smirnov distance of `values` from U(0, 1) and its asymptotic
/// p-value.
pub fn ks_uniform(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 1.0);
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let k = v.len() as f64;
    let mut d = 0.0f64;
    for (i, &x) in v.iter().enumerate() {
        let x = x.clamp(0.0, 1.0);
        d = d.max((i as f64 + 1.0) / k - x).max(x - i as f64 / k);
    }
    let sk = k.sqrt();
    (d, kolmogorov_q((sk + 0.12 + 0.11 / sk) * d))
}

/// `P(K > lambda)` for the Kolmogorov distribution.
pub fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for j in 1..=100 {
        let term = (-2.0 * (j * j) as f64 * lambda * lambda).exp();
        sum += if j % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// `P(X >= k)` for `X ~ Binomial(trials, p)`.
pub fn binomial_upper_tail(k: usize, trials: usize, p: f64) -> f64 {
    if k == 0 {
        return 1.0;
    }
    Binomial::new(p, trials as u64)
        .map(|b| b.sf(k as u64 - 1))
        .unwrap_or(f64::NAN)
}

fn build_graph(seq: &ObservationSequence, spec: &GraphSpec) -> Result<PreparedGraph> {
    let dist = pairwise_distances(seq, spec.metric)?;
    let graph = match spec.kind {
        GraphKind::Mst => build_mst(&dist)?,
        GraphKind::Knn { k } => build_knn(&dist, k)?,
        GraphKind::Edges => unreachable!("rejected by validation"),
    };
    Ok(PreparedGraph {
        graph,
        kind: spec.kind.clone(),
    })
}

fn replicate_seeds(seed: u64, index: usize) -> (u64, u64) {
    let mut rng = stream_rng(seed, index as u64);
    (rng.next_u64(), rng.next_u64())
}

fn run_block(
    cfg: &ExperimentConfig,
    g: &PreparedGraph,
    block: usize,
    pvalue_seed: u64,
) -> Result<BlockOutcome> {
    let wants = |m| cfg.pvalues.contains(&m);
    let mut out = BlockOutcome {
        block,
        ..BlockOutcome::default()
    };
    match cfg.kind {
        ExperimentKind::Rejection => {
            let pv = PvalueSpec {
                a1: wants(PvalueMethod::A1),
                a2: wants(PvalueMethod::A2),
                mc_samples: if wants(PvalueMethod::Mc) {
                    cfg.mc_samples
                } else {
                    0
                },
                skew_samples: cfg.skew_samples,
                seed: pvalue_seed,
                workers: 1,
            };
            let r = detect_prepared(g, block, cfg.window_frac, &pv)?;
            out.t_hat = Some(r.t_hat);
            out.z_max = Some(r.z_max);
            out.p_a1 = r.p_a1;
            out.p_a2 = r.p_a2;
            out.p_mc = r.p_mc;
        }
        ExperimentKind::CriticalValue => {
            let none = PvalueSpec {
                a1: false,
                a2: false,
                mc_samples: 0,
                ..PvalueSpec::default()
            };
            let r = detect_prepared(g, block, cfg.window_frac, &none)?;
            let graph = g.graph.with_len(r.curves.n)?;
            let (n, w, coef) = (r.curves.n, r.window, &r.curves.coefficients);
            out.t_hat = Some(r.t_hat);
            out.z_max = Some(r.z_max);
            out.cv_a1 = Some(critical_value(
                cfg.alpha,
                AnalyticMethod::A1,
                coef,
                None,
                n,
                block,
                w,
            )?);
            let gamma = skewness_curve(&graph, w, cfg.skew_samples, pvalue_seed, 1)?;
            out.cv_a2 = Some(critical_value(
                cfg.alpha,
                AnalyticMethod::A2,
                coef,
                Some(&gamma.gamma),
                n,
                block,
                w,
            )?);
            if cfg.mc_samples > 0 {
                let maxima = mc_maxima(
                    &graph,
                    &r.curves,
                    w,
                    cfg.mc_samples,
                    pvalue_seed ^ 0x9e37_79b9,
                    1,
                )?;
                out.cv_mc = Some(mc_critical_value(&maxima, cfg.alpha)?);
            }
        }
    }
    Ok(out)
}

fn run_replicate(
    cfg: &ExperimentConfig,
    generator: &Generator,
    spec: &GraphSpec,
    index: usize,
) -> ReplicateOutcome {
    let (data_seed, pvalue_seed) = replicate_seeds(cfg.seed, index);
    let mut outcome = ReplicateOutcome {
        index,
        data_seed,
        pvalue_seed,
        blocks: Vec::new(),
        error: None,
    };
    let prepared = (|| {
        let mut rng = stream_rng(data_seed, 0);
        let mut seq = generator.generate(&mut rng)?;
        if cfg.shift != 0.0 {
            seq = inject_mean_shift(&seq, cfg.shift_at.unwrap_or(cfg.n / 2), cfg.shift)?;
        }
        build_graph(&seq, spec)
    })();
    let g = match prepared {
        Ok(g) => g,
        Err(e) => {
            outcome.error = Some(e.to_string());
            return outcome;
        }
    };
    for block in cfg.block.values() {
        outcome
            .blocks
            .push(
                run_block(cfg, &g, block, pvalue_seed).unwrap_or_else(|e| BlockOutcome {
                    block,
                    error: Some(e.to_string()),
                    ..BlockOutcome::default()
                }),
            );
    }
    outcome
}

fn summarize(cfg: &ExperimentConfig, outcomes: &[ReplicateOutcome], block: usize) -> BlockSummary {
    let rows: Vec<&BlockOutcome> = outcomes
        .iter()
        .filter_map(|r| r.blocks.iter().find(|b| b.block == block))
        .collect();
    let failed = outcomes.len() - rows.iter().filter(|b| b.error.is_none()).count();
    let collect = |f: fn(&BlockOutcome) -> Option<f64>| {
        rows.iter().filter_map(|b| f(b)).collect::<Vec<f64>>()
    };
    let mut methods = Vec::new();
    if cfg.kind == ExperimentKind::Rejection {
        for &m in &cfg.pvalues {
            let ps = collect(match m {
                PvalueMethod::A1 => |b| b.p_a1,
                PvalueMethod::A2 => |b| b.p_a2,
                PvalueMethod::Mc => |b| b.p_mc,
            });
            let k = ps.len();
            let rejections = ps.iter().filter(|&&p| p <= cfg.alpha).count();
            let rate = if k > 0 {
                rejections as f64 / k as f64
            } else {
                f64::NAN
            };
            let (ks_statistic, ks_pvalue) = ks_uniform(&ps);
            methods.push(MethodSummary {
                method: m,
                completed: k,
                rejections,
                rate,
                std_error: (rate * (1.0 - rate) / k as f64).sqrt(),
                binomial_p_above_alpha: binomial_upper_tail(rejections, k, cfg.alpha),
                ks_statistic,
                ks_pvalue,
            });
        }
    }
    let paired = |f: fn(&BlockOutcome) -> Option<(f64, f64)>| {
        MeanSe::of(
            &rows
                .iter()
                .filter_map(|b| f(b).map(|(x, y)| x - y))
                .collect::<Vec<_>>(),
        )
    };
    BlockSummary {
        block,
        failed,
        methods,
        cv_a1: MeanSe::of(&collect(|b| b.cv_a1)),
        cv_a2: MeanSe::of(&collect(|b| b.cv_a2)),
        cv_mc: MeanSe::of(&collect(|b| b.cv_mc)),
        a2_minus_mc: paired(|b| Some((b.cv_a2?, b.cv_mc?))),
        a1_minus_a2: paired(|b| Some((b.cv_a1?, b.cv_a2?))),
    }
}

/// Runs every replicate; results depend on the config only, not on `workers`.
pub fn run_experiment(cfg: &ExperimentConfig, workers: usize) -> Result<ExperimentReport> {
    cfg.validate()?;
    let generator = cfg.model()?.generator()?;
    let spec = cfg.graph_spec()?;
    let outcomes = map_indexed(cfg.replicates, workers, |r| {
        run_replicate(cfg, &generator, &spec, r)
    })?;
    let summaries = cfg
        .block
        .values()
        .into_iter()
        .map(|l| summarize(cfg, &outcomes, l))
        .collect();
    Ok(ExperimentReport {
        config: cfg.clone(),
        replicates: cfg.replicates,
        summaries,
        outcomes,
    })
}
