// SPDX-License-Identifier: MIT OR Apache-2.0

//! `cbpscan`: change-point scans calibrated by circular block permutation.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use cbp_core::detector::{
    default_candidates, detect_prepared, prepare_graph, select_l, GraphSpec, LSelectionTrace,
    PvalueSpec, DEFAULT_RATIO_THRESHOLD, DEFAULT_SKEW_SAMPLES, DEFAULT_WINDOW_FRAC,
};
use cbp_core::oracle::{run_suite, OracleConfig};
use cbp_core::parallel::default_workers;
use cbp_core::pvalue::{
    critical_value, mc_critical_value, mc_maxima, skewness_curve, AnalyticMethod,
};
use cbp_core::seqdata::{load_sequence, InputFormat, Metric};
use cbp_core::simgraph::GraphKind;
use cbp_core::simlab::{run_experiment, ExperimentConfig};
use cbp_core::CbpError;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Parser, Debug)]
#[command(
    name = "cbpscan",
    version,
    about = "Graph-based change-point scans for locally dependent sequences"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Scan one sequence for a change-point.
    Detect(DetectArgs),
    /// Choose the block size by the ratio rule.
    SelectL(SelectArgs),
    /// Run a simulation experiment described by a TOML file.
    Simulate(SimulateArgs),
    /// Critical values of the scan maximum for one sequence.
    CriticalValue(CriticalArgs),
    /// Compare analytic moments with exhaustive enumeration.
    OracleCheck(OracleArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Format {
    /// One observation per row.
    Csv,
    /// Square distance matrix.
    Dist,
    /// 1-based `i,j` edge list; needs `--n`.
    Edges,
}

#[derive(Args, Debug, Clone)]
struct InputArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
    /// Sequence length for edge-list input.
    #[arg(long)]
    n: Option<usize>,
    /// mst, knn:K or edges.
    #[arg(long, default_value = "mst")]
    graph: String,
    #[arg(long, default_value = "euclidean")]
    metric: String,
    #[arg(long, default_value_t = DEFAULT_WINDOW_FRAC)]
    window_frac: f64,
    /// Worker threads; defaults to CBP_WORKERS or 1.
    #[arg(long)]
    workers: Option<usize>,
    /// Write the JSON report here instead of standard output.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
struct SelectionArgs {
    /// Candidate block sizes for `--L auto`, comma separated.
    #[arg(long, value_delimiter = ',')]
    candidates: Option<Vec<usize>>,
    #[arg(long, default_value_t = DEFAULT_RATIO_THRESHOLD)]
    threshold: f64,
}

#[derive(Args, Debug)]
struct DetectArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Block size, or `auto`.
    #[arg(long = "L", default_value = "auto")]
    block: String,
    #[command(flatten)]
    selection: SelectionArgs,
    /// a1, a2, mc:B or all; comma separated.
    #[arg(long, default_value = "a2")]
    pvalue: String,
    #[arg(long = "skew-B", default_value_t = DEFAULT_SKEW_SAMPLES)]
    skew_b: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Plot-ready `t,z` curve.
    #[arg(long)]
    z_csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SelectArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    selection: SelectionArgs,
    /// Plot-ready `L,z_max,ratio` table.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    output: Option<PathBuf>,
    /// Per-replicate table.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Summary table.
    #[arg(long)]
    summary_csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CriticalArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long = "L")]
    block: usize,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// a1, a2, mc:B or all; comma separated.
    #[arg(long, default_value = "all")]
    method: String,
    #[arg(long = "skew-B", default_value_t = DEFAULT_SKEW_SAMPLES)]
    skew_b: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct OracleArgs {
    #[arg(long, default_value_t = 8)]
    max_n: usize,
    #[arg(long = "L", value_delimiter = ',', default_value = "1,2,3")]
    blocks: Vec<usize>,
    #[arg(long, default_value_t = 200)]
    instances: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    output: Option<PathBuf>,
}

/// Failure with its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl From<CbpError> for Failure {
    fn from(e: CbpError) -> Self {
        let code = match e {
            CbpError::DegenerateGraph { .. }
            | CbpError::DegenerateConfiguration { .. }
            | CbpError::NoBracket { .. } => 3,
            _ => 2,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn invalid(message: impl Into<String>) -> Failure {
    Failure {
        code: 2,
        message: message.into(),
    }
}

fn runtime(message: impl Into<String>) -> Failure {
    Failure {
        code: 3,
        message: message.into(),
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
struct Methods {
    a1: bool,
    a2: bool,
    mc: usize,
}

fn parse_methods(text: &str) -> CliResult<Methods> {
    let mut m = Methods::default();
    for part in text.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        match part.to_ascii_lowercase().as_str() {
            "a1" => m.a1 = true,
            "a2" => m.a2 = true,
            "mc" => m.mc = 10_000,
            "all" => {
                m.a1 = true;
                m.a2 = true;
                m.mc = m.mc.max(10_000);
            }
            other => match other.strip_prefix("mc:").map(str::parse::<usize>) {
                Some(Ok(b)) if b > 0 => m.mc = b,
                _ => {
                    return Err(invalid(format!(
                        "unknown p-value method '{part}'; use a1, a2, mc:B or all"
                    )))
                }
            },
        }
    }
    if !m.a1 && !m.a2 && m.mc == 0 {
        return Err(invalid("no p-value method given"));
    }
    Ok(m)
}

struct Prepared {
    graph: cbp_core::detector::PreparedGraph,
    spec: GraphSpec,
    workers: usize,
}

fn validate_input(a: &InputArgs) -> CliResult<(GraphSpec, usize)> {
    let kind: GraphKind = a.graph.parse()?;
    let metric: Metric = a.metric.parse()?;
    if !(a.window_frac > 0.0 && a.window_frac < 0.5) {
        return Err(invalid(format!(
            "--window-frac {} outside (0, 0.5)",
            a.window_frac
        )));
    }
    match (a.format, &kind) {
        (Format::Edges, GraphKind::Edges)
        | (Format::Csv | Format::Dist, GraphKind::Mst | GraphKind::Knn { .. }) => {}
        (Format::Edges, _) => return Err(invalid("edge-list input needs --graph edges")),
        (_, GraphKind::Edges) => return Err(invalid("--graph edges needs --format edges")),
    }
    if matches!(a.format, Format::Edges) && a.n.is_none() {
        return Err(invalid("--format edges needs --n"));
    }
    let workers = a.workers.unwrap_or_else(default_workers);
    if workers == 0 {
        return Err(invalid("--workers must be at least 1"));
    }
    Ok((GraphSpec { kind, metric }, workers))
}

fn load(a: &InputArgs, spec: GraphSpec, workers: usize) -> CliResult<Prepared> {
    let format = match a.format {
        Format::Csv => InputFormat::CsvRows,
        Format::Dist => InputFormat::DistanceMatrix,
        Format::Edges => InputFormat::EdgeList,
    };
    let input = load_sequence(&a.input, format, a.n).map_err(|e| {
        let mut f = Failure::from(e);
        f.message = format!("{}: {}", a.input.display(), f.message);
        f
    })?;
    Ok(Prepared {
        graph: prepare_graph(&input, &spec)?,
        spec,
        workers,
    })
}

fn input_config(a: &InputArgs, spec: &GraphSpec, workers: usize) -> Value {
    json!({
        "input": a.input.display().to_string(),
        "format": a.format,
        "n": a.n,
        "graph": spec.kind,
        "metric": spec.metric,
        "window_frac": a.window_frac,
        "workers": workers,
    })
}

fn merge(base: &mut Value, extra: Value) {
    if let (Value::Object(b), Value::Object(e)) = (base, extra) {
        b.extend(e);
    }
}

fn emit(report: &Value, output: Option<&Path>) -> CliResult<()> {
    let text = serde_json::to_string_pretty(report).map_err(|e| runtime(e.to_string()))? + "\n";
    match output {
        Some(p) => write_file(p, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn write_file(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| runtime(format!("cannot write {}: {e}", path.display())))
}

fn candidates(sel: &SelectionArgs) -> Vec<usize> {
    sel.candidates.clone().unwrap_or_else(default_candidates)
}

fn run_selection(
    p: &Prepared,
    sel: &SelectionArgs,
    window_frac: f64,
) -> CliResult<LSelectionTrace> {
    let trace = select_l(
        &p.graph,
        &candidates(sel),
        sel.threshold,
        window_frac,
        p.workers,
    )?;
    if trace.fallback {
        eprintln!(
            "warning: no ratio reached {}; using the largest candidate L={}",
            sel.threshold, trace.chosen_l
        );
    }
    Ok(trace)
}

fn cmd_detect(a: DetectArgs) -> CliResult<()> {
    let (spec, workers) = validate_input(&a.input)?;
    let methods = parse_methods(&a.pvalue)?;
    let requested: Option<usize> = match a.block.as_str() {
        "auto" => None,
        s => Some(s.parse().ok().filter(|&l: &usize| l > 0).ok_or_else(|| {
            invalid(format!("--L must be a positive integer or auto, got '{s}'"))
        })?),
    };
    if methods.a2 && a.skew_b < 1000 {
        return Err(invalid("--skew-B must be at least 1000"));
    }
    let p = load(&a.input, spec, workers)?;
    let trace = match requested {
        Some(_) => None,
        None => Some(run_selection(&p, &a.selection, a.input.window_frac)?),
    };
    let block = requested.unwrap_or_else(|| trace.as_ref().expect("auto").chosen_l);
    let pv = PvalueSpec {
        a1: methods.a1,
        a2: methods.a2,
        mc_samples: methods.mc,
        skew_samples: a.skew_b,
        seed: a.seed,
        workers: p.workers,
    };
    let result = detect_prepared(&p.graph, block, a.input.window_frac, &pv)?;
    let mut config = input_config(&a.input, &p.spec, p.workers);
    merge(
        &mut config,
        json!({
            "command": "detect",
            "L": a.block,
            "L_resolved": block,
            "candidates": requested.is_none().then(|| candidates(&a.selection)),
            "threshold": a.selection.threshold,
            "pvalue": methods,
            "skew_B": a.skew_b,
            "seed": a.seed,
        }),
    );
    let mut report = serde_json::to_value(&result).map_err(|e| runtime(e.to_string()))?;
    merge(&mut report, json!({ "version": VERSION, "config": config }));
    if let Some(t) = &trace {
        merge(&mut report, json!({ "L_trace": t }));
    }
    emit(&report, a.input.output.as_deref())?;
    if let Some(path) = &a.z_csv {
        write_file(path, &result.z_csv())?;
    }
    let p_text = [
        ("p_a1", result.p_a1),
        ("p_a2", result.p_a2),
        ("p_mc", result.p_mc),
    ]
    .iter()
    .filter_map(|(k, v)| v.map(|v| format!("{k}={v:.4}")))
    .collect::<Vec<_>>()
    .join(" ");
    eprintln!(
        "t_hat={} z_max={:.4} L={} {p_text}",
        result.t_hat, result.z_max, block
    );
    Ok(())
}

fn cmd_select(a: SelectArgs) -> CliResult<()> {
    let (spec, workers) = validate_input(&a.input)?;
    let p = load(&a.input, spec, workers)?;
    let trace = run_selection(&p, &a.selection, a.input.window_frac)?;
    let mut config = input_config(&a.input, &p.spec, p.workers);
    merge(
        &mut config,
        json!({
            "command": "select-l",
            "candidates": candidates(&a.selection),
            "threshold": a.selection.threshold,
        }),
    );
    let report = json!({ "version": VERSION, "config": config, "L_trace": trace, "chosen_L": trace.chosen_l });
    emit(&report, a.input.output.as_deref())?;
    if let Some(path) = &a.csv {
        write_file(path, &trace.to_csv())?;
    }
    eprintln!(
        "chosen L={}{}",
        trace.chosen_l,
        if trace.fallback { " (fallback)" } else { "" }
    );
    Ok(())
}

fn cmd_simulate(a: SimulateArgs) -> CliResult<()> {
    let text = fs::read_to_string(&a.config)
        .map_err(|e| invalid(format!("{}: {e}", a.config.display())))?;
    let cfg = ExperimentConfig::from_toml_str(&text).map_err(|e| {
        let mut f = Failure::from(e);
        f.message = format!("{}: {}", a.config.display(), f.message);
        f
    })?;
    cfg.validate()?;
    let workers = a.workers.unwrap_or_else(default_workers);
    if workers == 0 {
        return Err(invalid("--workers must be at least 1"));
    }
    let report = run_experiment(&cfg, workers)?;
    let mut value = serde_json::to_value(&report).map_err(|e| runtime(e.to_string()))?;
    merge(
        &mut value,
        json!({ "version": VERSION, "run": { "command": "simulate", "config_path": a.config.display().to_string(), "workers": workers } }),
    );
    emit(&value, a.output.as_deref())?;
    if let Some(path) = &a.csv {
        write_file(path, &report.outcomes_csv())?;
    }
    if let Some(path) = &a.summary_csv {
        write_file(path, &report.summary_csv())?;
    }
    for s in &report.summaries {
        for m in &s.methods {
            eprintln!(
                "L={} {:?}: rate={:.4} (se {:.4}, n={})",
                s.block, m.method, m.rate, m.std_error, m.completed
            );
        }
        for (name, v) in [
            ("cv_a1", &s.cv_a1),
            ("cv_a2", &s.cv_a2),
            ("cv_mc", &s.cv_mc),
        ] {
            if let Some(v) = v {
                eprintln!(
                    "L={} {name}: {:.4} (se {:.4})",
                    s.block, v.mean, v.std_error
                );
            }
        }
        if s.failed > 0 {
            eprintln!("L={}: {} replicate(s) failed", s.block, s.failed);
        }
    }
    Ok(())
}

fn cmd_critical(a: CriticalArgs) -> CliResult<()> {
    let (spec, workers) = validate_input(&a.input)?;
    let methods = parse_methods(&a.method)?;
    if !(a.alpha > 0.0 && a.alpha < 0.5) {
        return Err(invalid(format!("--alpha {} outside (0, 0.5)", a.alpha)));
    }
    if a.block == 0 {
        return Err(invalid("--L must be positive"));
    }
    if methods.a2 && a.skew_b < 1000 {
        return Err(invalid("--skew-B must be at least 1000"));
    }
    let p = load(&a.input, spec, workers)?;
    let none = PvalueSpec {
        a1: false,
        a2: false,
        mc_samples: 0,
        ..PvalueSpec::default()
    };
    let scan = detect_prepared(&p.graph, a.block, a.input.window_frac, &none)?;
    let graph = p.graph.graph.with_len(scan.curves.n)?;
    let (n, w, coef) = (scan.curves.n, scan.window, &scan.curves.coefficients);
    let cv_a1 = methods
        .a1
        .then(|| critical_value(a.alpha, AnalyticMethod::A1, coef, None, n, a.block, w))
        .transpose()?;
    let cv_a2 = if methods.a2 {
        let gamma = skewness_curve(&graph, w, a.skew_b, a.seed, p.workers)?;
        Some(critical_value(
            a.alpha,
            AnalyticMethod::A2,
            coef,
            Some(&gamma.gamma),
            n,
            a.block,
            w,
        )?)
    } else {
        None
    };
    let cv_mc = if methods.mc > 0 {
        let maxima = mc_maxima(
            &graph,
            &scan.curves,
            w,
            methods.mc,
            a.seed ^ 0x9e37_79b9,
            p.workers,
        )?;
        Some(mc_critical_value(&maxima, a.alpha)?)
    } else {
        None
    };
    let mut config = input_config(&a.input, &p.spec, p.workers);
    merge(
        &mut config,
        json!({ "command": "critical-value", "L": a.block, "alpha": a.alpha, "method": methods, "skew_B": a.skew_b, "seed": a.seed }),
    );
    let report = json!({
        "version": VERSION,
        "config": config,
        "alpha": a.alpha,
        "L": a.block,
        "window": w,
        "x_aug": scan.x_aug,
        "cv_a1": cv_a1,
        "cv_a2": cv_a2,
        "cv_mc": cv_mc,
    });
    emit(&report, a.input.output.as_deref())?;
    let text = [("a1", cv_a1), ("a2", cv_a2), ("mc", cv_mc)]
        .iter()
        .filter_map(|(k, v)| v.map(|v| format!("{k}={v:.4}")))
        .collect::<Vec<_>>()
        .join(" ");
    eprintln!("critical values at alpha={}: {text}", a.alpha);
    Ok(())
}

fn cmd_oracle(a: OracleArgs) -> CliResult<u8> {
    let cfg = OracleConfig::grid(a.max_n, &a.blocks, a.instances, a.seed)?;
    let report = run_suite(&cfg, None).map_err(|e| match e {
        CbpError::BudgetExceeded { .. } => invalid(format!("{e}; reduce --max-n")),
        other => Failure::from(other),
    })?;
    let value = json!({
        "version": VERSION,
        "config": { "command": "oracle-check", "max_n": a.max_n, "L": a.blocks, "instances": a.instances, "seed": a.seed },
        "report": report,
    });
    emit(&value, a.output.as_deref())?;
    if report.passed {
        eprintln!(
            "PASS: {} instances, {} comparisons, worst |diff| = {:e}",
            report.instances, report.compared, report.worst_abs
        );
        Ok(0)
    } else {
        let m = &report.mismatches[0];
        eprintln!(
            "FAIL: {} mismatches; first at instance {} (n={}, L={}) {}: analytic {} vs exact {}; worst |diff| = {:e}",
            report.mismatches.len(),
            m.instance,
            m.n,
            m.block,
            m.quantity,
            m.analytic,
            m.exact,
            report.worst_abs
        );
        Ok(1)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Detect(a) => cmd_detect(a).map(|_| 0),
        Command::SelectL(a) => cmd_select(a).map(|_| 0),
        Command::Simulate(a) => cmd_simulate(a).map(|_| 0),
        Command::CriticalValue(a) => cmd_critical(a).map(|_| 0),
        Command::OracleCheck(a) => cmd_oracle(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
