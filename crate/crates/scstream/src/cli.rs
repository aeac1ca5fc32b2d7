//! Command-line surface: `generate` synthesizes drift streams, `fit` runs
//! the predict-then-update loop over a CSV stream, `report` aggregates
//! metrics files into summary and plot-ready series.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::datagen::{self, DriftKind, DriftSpec};
use crate::engine::{run_stream, Batch, EngineConfig, ModelState};
use crate::error::{Error, Result};
use crate::family::{Family, Point, PriorHyperparams};
use crate::metrics;

#[derive(Parser)]
#[command(name = "scstream", version, about = "Streaming DP-mixture clustering")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a drift stream as CSV plus a sidecar spec
    Generate(GenerateArgs),
    /// Fit a model over a CSV stream, predict-then-update per batch
    Fit(FitArgs),
    /// Summarize one or more metrics files
    Report(ReportArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FamilyArg {
    Gaussian,
    Multinomial,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum DriftArg {
    None,
    Incremental,
    Gradual,
    Recurring,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(value_enum)]
    family: FamilyArg,
    #[arg(long, default_value_t = 20)]
    k: usize,
    #[arg(long, default_value_t = 2)]
    d: usize,
    /// Trials per point (multinomial only)
    #[arg(long, default_value_t = 20)]
    trials: usize,
    #[arg(long, default_value_t = 100_000)]
    n: usize,
    #[arg(long, default_value_t = 1000)]
    batch: usize,
    #[arg(long, value_enum, default_value_t = DriftArg::None)]
    drift: DriftArg,
    #[arg(long, default_value_t = 0.05)]
    magnitude: f64,
    #[arg(long, default_value_t = 10)]
    period: usize,
    #[arg(long, default_value_t = 10)]
    ramp: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output CSV path; a .spec.json sidecar is written next to it
    #[arg(long)]
    out: PathBuf,
}

/// Validated run parameters, written verbatim into the run report.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunConfig {
    pub family: FamilyArg,
    pub kappa: f64,
    pub nu: Option<f64>,
    pub psi_scale: f64,
    pub dirichlet_d: f64,
    pub alpha: f64,
    pub lambda: f64,
    pub epsilon: f64,
    pub t_iterations: usize,
    pub seed: u64,
    pub batch_size: usize,
    pub timestamp_column: Option<String>,
    pub strict_determinism: bool,
    pub threads: Option<usize>,
    pub deterministic_pass: bool,
    pub input: PathBuf,
    pub out_dir: PathBuf,
}

#[derive(Args)]
struct FitArgs {
    /// JSON config file; explicit flags below override its fields
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long, value_enum)]
    family: Option<FamilyArg>,
    #[arg(long)]
    kappa: Option<f64>,
    #[arg(long)]
    nu: Option<f64>,
    #[arg(long)]
    psi_scale: Option<f64>,
    #[arg(long)]
    dirichlet_d: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long = "t")]
    t_iterations: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long = "batch")]
    batch_size: Option<usize>,
    /// Name of the timestamp column, if the stream has one
    #[arg(long)]
    t_col: Option<String>,
    #[arg(long)]
    strict: bool,
    #[arg(long)]
    threads: Option<usize>,
    /// Replace the deterministic final pass with an extra stochastic sweep
    #[arg(long)]
    no_deterministic_pass: bool,
}

#[derive(Args)]
struct ReportArgs {
    /// Metrics CSV files produced by `fit`
    #[arg(required = true)]
    metrics: Vec<PathBuf>,
    #[arg(long, default_value = "report")]
    out_dir: PathBuf,
}

pub fn run() -> i32 {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(args) => cmd_generate(&args),
        Command::Fit(args) => args.into_config().and_then(|cfg| cmd_fit(&cfg)),
        Command::Report(args) => cmd_report(&args.metrics, &args.out_dir),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn drift_spec(args: &GenerateArgs) -> DriftSpec {
    match args.drift {
        DriftArg::None => DriftSpec::none(),
        DriftArg::Incremental => DriftSpec::incremental(args.magnitude),
        DriftArg::Gradual => DriftSpec::gradual(args.magnitude, args.ramp),
        DriftArg::Recurring => DriftSpec::recurring(args.period),
    }
}

fn cmd_generate(args: &GenerateArgs) -> Result<()> {
    let drift = drift_spec(args);
    let batches: Vec<Batch> = match args.family {
        FamilyArg::Gaussian => {
            let base =
                datagen::gen_gaussian_stream(args.k, args.d, args.n, args.batch, drift, args.seed)?;
            if drift.kind == DriftKind::Recurring {
                datagen::gen_recurring_wrapper(base, args.period, args.seed)?.collect()
            } else {
                base.collect()
            }
        }
        FamilyArg::Multinomial => {
            let base = datagen::gen_multinomial_stream(
                args.k,
                args.d,
                args.trials,
                args.n,
                args.batch,
                drift,
                args.seed,
            )?;
            if drift.kind == DriftKind::Recurring {
                datagen::gen_recurring_wrapper(base, args.period, args.seed)?.collect()
            } else {
                base.collect()
            }
        }
    };

    let mut w = csv::Writer::from_path(&args.out).map_err(io_err)?;
    let mut header: Vec<String> = (0..args.d).map(|j| format!("f{j}")).collect();
    header.push("label".into());
    header.push("batch_id".into());
    w.write_record(&header).map_err(io_err)?;
    for (bi, b) in batches.iter().enumerate() {
        let truth = b.truth.as_ref().expect("generated streams carry truth");
        for (p, &label) in b.points.iter().zip(truth) {
            let mut row: Vec<String> = p.iter().map(|v| format!("{v}")).collect();
            row.push(label.to_string());
            row.push(bi.to_string());
            w.write_record(&row).map_err(io_err)?;
        }
    }
    w.flush().map_err(|e| Error::Io(e.to_string()))?;

    let sidecar = args.out.with_extension("spec.json");
    let spec = serde_json::json!({
        "family": args.family,
        "k": args.k,
        "d": args.d,
        "trials": args.trials,
        "n": args.n,
        "batch": args.batch,
        "drift": drift,
        "seed": args.seed,
        "version": env!("CARGO_PKG_VERSION"),
    });
    fs::write(&sidecar, serde_json::to_vec_pretty(&spec).unwrap())
        .map_err(|e| Error::Io(e.to_string()))?;
    Ok(())
}

fn io_err(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

impl FitArgs {
    fn into_config(self) -> Result<RunConfig> {
        let base: Option<RunConfig> = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| Error::Io(e.to_string()))?;
                Some(
                    serde_json::from_str(&text)
                        .map_err(|e| Error::Config(format!("config file: {e}")))?,
                )
            }
            None => None,
        };
        let input = self
            .input
            .or_else(|| base.as_ref().map(|b| b.input.clone()))
            .ok_or_else(|| Error::Config("missing --input".into()))?;
        let out_dir = self
            .out_dir
            .or_else(|| base.as_ref().map(|b| b.out_dir.clone()))
            .unwrap_or_else(|| PathBuf::from("run"));
        let family = self
            .family
            .or(base.as_ref().map(|b| b.family))
            .ok_or_else(|| Error::Config("missing --family".into()))?;
        let pick_f = |flag: Option<f64>, from_base: Option<f64>, default: f64| {
            flag.or(from_base).unwrap_or(default)
        };
        let b = base.as_ref();
        Ok(RunConfig {
            family,
            kappa: pick_f(self.kappa, b.map(|b| b.kappa), 1.0),
            nu: self.nu.or(b.and_then(|b| b.nu)),
            psi_scale: pick_f(self.psi_scale, b.map(|b| b.psi_scale), 1.02),
            dirichlet_d: pick_f(self.dirichlet_d, b.map(|b| b.dirichlet_d), 1.0),
            alpha: pick_f(self.alpha, b.map(|b| b.alpha), 1.0),
            lambda: pick_f(self.lambda, b.map(|b| b.lambda), 1.0),
            epsilon: pick_f(self.epsilon, b.map(|b| b.epsilon), 1e-8),
            t_iterations: self
                .t_iterations
                .or(b.map(|b| b.t_iterations))
                .unwrap_or(1),
            seed: self.seed.or(b.map(|b| b.seed)).unwrap_or(0),
            batch_size: self.batch_size.or(b.map(|b| b.batch_size)).unwrap_or(1000),
            timestamp_column: self.t_col.or(b.and_then(|b| b.timestamp_column.clone())),
            strict_determinism: self.strict || b.map(|b| b.strict_determinism).unwrap_or(false),
            threads: self.threads.or(b.and_then(|b| b.threads)),
            deterministic_pass: if self.no_deterministic_pass {
                false
            } else {
                b.map(|b| b.deterministic_pass).unwrap_or(true)
            },
            input,
            out_dir,
        })
    }
}

pub fn config_hash(config: &RunConfig) -> String {
    let json = serde_json::to_vec(config).expect("config serializes");
    let digest = Sha256::digest(&json);
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// Parsed stream: batches plus which optional columns were present.
pub struct StreamData {
    pub batches: Vec<Batch>,
    pub has_truth: bool,
}

pub fn read_stream(
    path: &Path,
    batch_size: usize,
    timestamp_column: Option<&str>,
) -> Result<StreamData> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Io(e.to_string()))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Input(format!("reading header: {e}")))?
        .clone();
    let mut feature_cols = Vec::new();
    for j in 0.. {
        match headers.iter().position(|h| h == format!("f{j}")) {
            Some(idx) => feature_cols.push(idx),
            None => break,
        }
    }
    if feature_cols.is_empty() {
        return Err(Error::Input("no feature columns f0..f{D-1} found".into()));
    }
    let label_col = headers.iter().position(|h| h == "label");
    let batch_col = headers.iter().position(|h| h == "batch_id");
    let t_col = match timestamp_column {
        Some(name) => Some(
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::Input(format!("timestamp column {name} not found")))?,
        ),
        None => None,
    };

    let parse = |field: &str, what: &str| -> Result<f64> {
        field
            .trim()
            .parse::<f64>()
            .map_err(|_| Error::Input(format!("bad {what} value {field:?}")))
    };

    let mut batches: Vec<Batch> = Vec::new();
    let mut cur_points: Vec<Point> = Vec::new();
    let mut cur_truth: Vec<u64> = Vec::new();
    let mut cur_t: Option<f64> = None;
    let mut cur_batch_id: Option<String> = None;
    let has_truth = label_col.is_some();

    let mut flush = |points: &mut Vec<Point>, truth: &mut Vec<u64>, t: &mut Option<f64>| {
        if !points.is_empty() {
            batches.push(Batch {
                timestamp: t.take(),
                points: std::mem::take(points),
                truth: if has_truth {
                    Some(std::mem::take(truth))
                } else {
                    None
                },
            });
        }
    };

    for record in reader.records() {
        let record = record.map_err(|e| Error::Input(format!("reading row: {e}")))?;
        if let Some(bc) = batch_col {
            let id = record.get(bc).unwrap_or("").to_string();
            if cur_batch_id.as_deref() != Some(id.as_str()) {
                flush(&mut cur_points, &mut cur_truth, &mut cur_t);
                cur_batch_id = Some(id);
            }
        }
        let mut p = DVector::zeros(feature_cols.len());
        for (j, &col) in feature_cols.iter().enumerate() {
            p[j] = parse(record.get(col).unwrap_or(""), "feature")?;
        }
        cur_points.push(p);
        if let Some(lc) = label_col {
            let v = parse(record.get(lc).unwrap_or(""), "label")?;
            if v < 0.0 {
                return Err(Error::Input(format!("negative label {v}")));
            }
            cur_truth.push(v as u64);
        }
        if let Some(tc) = t_col {
            if cur_t.is_none() {
                cur_t = Some(parse(record.get(tc).unwrap_or(""), "timestamp")?);
            }
        }
        if batch_col.is_none() && cur_points.len() == batch_size {
            flush(&mut cur_points, &mut cur_truth, &mut cur_t);
        }
    }
    flush(&mut cur_points, &mut cur_truth, &mut cur_t);
    Ok(StreamData { batches, has_truth })
}

pub fn build_engine_config(config: &RunConfig, dim: usize) -> Result<EngineConfig> {
    let prior = match config.family {
        FamilyArg::Gaussian => PriorHyperparams::Niw {
            kappa: config.kappa,
            mean: DVector::zeros(dim),
            nu: config.nu.unwrap_or(dim as f64 + 2.0),
            psi: DMatrix::identity(dim, dim) * config.psi_scale,
        },
        FamilyArg::Multinomial => PriorHyperparams::Dirichlet {
            d: DVector::from_element(dim, config.dirichlet_d),
        },
    };
    let mut ec = EngineConfig::new(prior, config.alpha, config.lambda, config.epsilon, config.seed);
    ec.t_iterations = config.t_iterations;
    ec.deterministic_pass = config.deterministic_pass;
    Ok(ec)
}

fn run_header_line(config: &RunConfig) -> String {
    format!(
        "# scstream v{} config_hash={} seed={}",
        env!("CARGO_PKG_VERSION"),
        config_hash(config),
        config.seed
    )
}

pub fn cmd_fit(config: &RunConfig) -> Result<()> {
    if let Some(n) = config.threads {
        // ignore failure: the global pool can only be set once per process
        let threads = if config.strict_determinism { 1 } else { n };
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
    let stream = read_stream(
        &config.input,
        config.batch_size,
        config.timestamp_column.as_deref(),
    )?;
    if stream.batches.is_empty() {
        return Err(Error::Input("stream is empty".into()));
    }
    let dim = stream.batches[0].points[0].len();
    if config.family == FamilyArg::Multinomial {
        let ok = stream
            .batches
            .iter()
            .flat_map(|b| b.points.iter())
            .all(|p| p.iter().all(|v| *v >= 0.0 && v.fract() == 0.0));
        if !ok {
            return Err(Error::Input(
                "multinomial family requires nonnegative integer counts".into(),
            ));
        }
    }
    let engine_config = build_engine_config(config, dim)?;
    let mut state = ModelState::new(engine_config)?;

    fs::create_dir_all(&config.out_dir).map_err(|e| Error::Io(e.to_string()))?;
    let open = |name: &str| -> Result<fs::File> {
        fs::File::create(config.out_dir.join(name)).map_err(|e| Error::Io(e.to_string()))
    };
    let mut labels_file = open("labels.csv")?;
    let mut diag_file = open("diagnostics.jsonl")?;
    let mut metrics_file = if stream.has_truth {
        Some(open("metrics.csv")?)
    } else {
        None
    };
    let header = run_header_line(config);
    writeln!(labels_file, "{header}").map_err(|e| Error::Io(e.to_string()))?;
    writeln!(labels_file, "batch_index,point_index,predicted_id")
        .map_err(|e| Error::Io(e.to_string()))?;
    if let Some(f) = metrics_file.as_mut() {
        writeln!(f, "{header}").map_err(|e| Error::Io(e.to_string()))?;
        writeln!(f, "batch_index,ari,nmi,purity,pairwise_f,k")
            .map_err(|e| Error::Io(e.to_string()))?;
    }

    let mut truth_batches: Vec<Vec<u64>> = Vec::new();
    let mut pred_batches: Vec<Vec<u64>> = Vec::new();
    let mut nmi_sum = 0.0;
    let mut nmi_n = 0usize;

    let truths: Vec<Option<Vec<u64>>> = stream.batches.iter().map(|b| b.truth.clone()).collect();
    let run = run_stream(&mut state, stream.batches, |result| {
        let bi = result.batch_index;
        if let Some(pred) = &result.predicted {
            for (i, id) in pred.iter().enumerate() {
                writeln!(labels_file, "{bi},{i},{id}").map_err(|e| Error::Io(e.to_string()))?;
            }
            if let (Some(f), Some(Some(truth))) =
                (metrics_file.as_mut(), truths.get(bi as usize))
            {
                let scores = metrics::score(truth, pred)?;
                writeln!(
                    f,
                    "{bi},{:.6},{:.6},{:.6},{:.6},{}",
                    scores.ari, scores.nmi, scores.purity, scores.pairwise_f, result.k
                )
                .map_err(|e| Error::Io(e.to_string()))?;
                nmi_sum += scores.nmi;
                nmi_n += 1;
                truth_batches.push(truth.clone());
                pred_batches.push(pred.clone());
            }
        }
        let diag = serde_json::json!({
            "batch_index": result.batch_index,
            "timestamp": result.timestamp,
            "k": result.k,
            "moves": result.moves,
            "lineage": result.lineage,
            "wall_ms": result.wall_ms,
        });
        writeln!(diag_file, "{diag}").map_err(|e| Error::Io(e.to_string()))?;
        Ok(())
    });

    // snapshot whatever state exists, even on mid-stream failure
    let snapshot = state.snapshot()?;
    fs::write(config.out_dir.join("model.snapshot"), &snapshot)
        .map_err(|e| Error::Io(e.to_string()))?;
    run?;

    let mut report = serde_json::json!({
        "version": env!("CARGO_PKG_VERSION"),
        "config_hash": config_hash(config),
        "config": config,
        "batches": state.batch_index,
        "final_k": state.k(),
    });
    if nmi_n > 0 {
        let full = metrics::full_nmi(&truth_batches, &pred_batches)?;
        report["mean_nmi"] = serde_json::json!(nmi_sum / nmi_n as f64);
        report["full_nmi"] = serde_json::json!(full);
    }
    fs::write(
        config.out_dir.join("run_report.json"),
        serde_json::to_vec_pretty(&report).unwrap(),
    )
    .map_err(|e| Error::Io(e.to_string()))?;
    Ok(())
}

struct MetricsRun {
    path: PathBuf,
    rows: Vec<[f64; 6]>,
}

fn read_metrics(path: &Path) -> Result<MetricsRun> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io(e.to_string()))?;
    let mut rows = Vec::new();
    for line in text.lines() {
        if line.starts_with('#') || line.starts_with("batch_index") || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(Error::Input(format!(
                "malformed metrics row in {}: {line:?}",
                path.display()
            )));
        }
        let mut row = [0.0; 6];
        for (j, f) in fields.iter().enumerate() {
            row[j] = f
                .trim()
                .parse()
                .map_err(|_| Error::Input(format!("bad metrics value {f:?}")))?;
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Input(format!(
            "no metrics rows in {}",
            path.display()
        )));
    }
    Ok(MetricsRun {
        path: path.to_path_buf(),
        rows,
    })
}

pub fn cmd_report(paths: &[PathBuf], out_dir: &Path) -> Result<()> {
    let mut runs: Vec<MetricsRun> = paths.iter().map(|p| read_metrics(p)).collect::<Result<_>>()?;
    runs.sort_by(|a, b| a.path.cmp(&b.path));
    fs::create_dir_all(out_dir).map_err(|e| Error::Io(e.to_string()))?;

    let mut summary = fs::File::create(out_dir.join("summary.csv"))
        .map_err(|e| Error::Io(e.to_string()))?;
    writeln!(
        summary,
        "run,ari_mean,ari_std,nmi_mean,nmi_std,purity_mean,purity_std,pairwise_f_mean,pairwise_f_std,k_mean,k_std"
    )
    .map_err(|e| Error::Io(e.to_string()))?;
    let mean_std = |vals: Vec<f64>| -> (f64, f64) {
        let n = vals.len() as f64;
        let m = vals.iter().sum::<f64>() / n;
        let v = vals.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
        (m, v.sqrt())
    };
    for run in &runs {
        let mut cells = Vec::new();
        for col in 1..6 {
            let (m, s) = mean_std(run.rows.iter().map(|r| r[col]).collect());
            cells.push(format!("{m:.6},{s:.6}"));
        }
        writeln!(summary, "{},{}", run.path.display(), cells.join(","))
            .map_err(|e| Error::Io(e.to_string()))?;
    }

    let mut series = fs::File::create(out_dir.join("timeseries.csv"))
        .map_err(|e| Error::Io(e.to_string()))?;
    writeln!(series, "run,batch_index,ari,nmi,purity,pairwise_f,k")
        .map_err(|e| Error::Io(e.to_string()))?;
    for run in &runs {
        for r in &run.rows {
            writeln!(
                series,
                "{},{},{},{},{},{},{}",
                run.path.display(),
                r[0] as u64,
                r[1],
                r[2],
                r[3],
                r[4],
                r[5] as u64
            )
            .map_err(|e| Error::Io(e.to_string()))?;
        }
    }
    Ok(())
}

/// Keep the family enum in sync with the core one.
impl From<FamilyArg> for Family {
    fn from(f: FamilyArg) -> Family {
        match f {
            FamilyArg::Gaussian => Family::Gaussian,
            FamilyArg::Multinomial => Family::Multinomial,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn stream_round_trip_through_csv() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("s.csv");
        let args = GenerateArgs {
            family: FamilyArg::Gaussian,
            k: 3,
            d: 2,
            trials: 1,
            n: 2500,
            batch: 500,
            drift: DriftArg::None,
            magnitude: 0.0,
            period: 10,
            ramp: 10,
            seed: 4,
            out: path.clone(),
        };
        cmd_generate(&args).unwrap();
        assert!(path.with_extension("spec.json").exists());
        let stream = read_stream(&path, 500, None).unwrap();
        assert!(stream.has_truth);
        assert_eq!(stream.batches.len(), 5);
        assert_eq!(stream.batches[0].points.len(), 500);
        assert_eq!(stream.batches[0].points[0].len(), 2);
    }

    #[test]
    fn generate_is_deterministic() {
        let dir = tempdir().unwrap();
        let mk = |name: &str| {
            let path = dir.path().join(name);
            let args = GenerateArgs {
                family: FamilyArg::Multinomial,
                k: 2,
                d: 5,
                trials: 10,
                n: 1000,
                batch: 250,
                drift: DriftArg::Gradual,
                magnitude: 0.5,
                period: 10,
                ramp: 4,
                seed: 8,
                out: path.clone(),
            };
            cmd_generate(&args).unwrap();
            fs::read(&path).unwrap()
        };
        assert_eq!(mk("a.csv"), mk("b.csv"));
    }

    #[test]
    fn fit_emits_artifacts() {
        let dir = tempdir().unwrap();
        let stream_path = dir.path().join("s.csv");
        cmd_generate(&GenerateArgs {
            family: FamilyArg::Gaussian,
            k: 2,
            d: 2,
            trials: 1,
            n: 3000,
            batch: 300,
            drift: DriftArg::None,
            magnitude: 0.0,
            period: 10,
            ramp: 10,
            seed: 12,
            out: stream_path.clone(),
        })
        .unwrap();
        let out_dir = dir.path().join("run");
        let config = RunConfig {
            family: FamilyArg::Gaussian,
            kappa: 1.0,
            nu: Some(4.0),
            psi_scale: 1.02,
            dirichlet_d: 1.0,
            alpha: 1.0,
            lambda: 1.0,
            epsilon: 1e-8,
            t_iterations: 1,
            seed: 0,
            batch_size: 300,
            timestamp_column: None,
            strict_determinism: true,
            threads: None,
            deterministic_pass: true,
            input: stream_path,
            out_dir: out_dir.clone(),
        };
        cmd_fit(&config).unwrap();
        for f in [
            "labels.csv",
            "metrics.csv",
            "diagnostics.jsonl",
            "model.snapshot",
            "run_report.json",
        ] {
            assert!(out_dir.join(f).exists(), "{f}");
        }
        let metrics_text = fs::read_to_string(out_dir.join("metrics.csv")).unwrap();
        assert!(metrics_text.starts_with("# scstream"));
        assert!(metrics_text.contains("batch_index,ari,nmi,purity,pairwise_f,k"));
        // first batch is cold: 9 metric rows for 10 batches
        assert_eq!(
            metrics_text
                .lines()
                .filter(|l| !l.starts_with('#') && !l.starts_with("batch_index"))
                .count(),
            9
        );

        let report_dir = dir.path().join("rep");
        cmd_report(&[out_dir.join("metrics.csv")], &report_dir).unwrap();
        let summary = fs::read_to_string(report_dir.join("summary.csv")).unwrap();
        assert_eq!(summary.lines().count(), 2);
        assert!(report_dir.join("timeseries.csv").exists());
    }

    #[test]
    fn report_rejects_empty_file() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("empty.csv");
        fs::write(&p, "").unwrap();
        assert!(matches!(
            cmd_report(&[p], dir.path()),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn stream_without_labels_skips_metrics() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("s.csv");
        fs::write(&p, "f0,f1\n1.0,2.0\n1.1,2.1\n0.9,1.9\n1.0,2.2\n").unwrap();
        let stream = read_stream(&p, 2, None).unwrap();
        assert!(!stream.has_truth);
        assert_eq!(stream.batches.len(), 2);
    }
}
