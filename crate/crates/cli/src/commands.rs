use std::fmt::Write as _;
use std::fs;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::Path;

use tempbal_core::config::{parse_policy, ConfigError, RunConfig};
use tempbal_core::esd::layer_esd;
use tempbal_core::htsr::log10_histogram;
use tempbal_core::rmt_lab::{mean_rel_err, verify_s_alpha, write_s_alpha_csv, RmtError, SAlphaRow};
use tempbal_core::scheduler::{analyze_snapshot, LayerAnalysisError, ScheduleError};
use tempbal_core::train::{run_training, TrainError};
use tempbal_core::weight_store::{read_snapshot, write_snapshot, SnapshotError};

pub const METRICS_HEADER: &str =
    "layer,n,m,k,lambda_min,alpha_hill,spectral_norm,alpha_weighted,status";

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Numerical(m) => f.write_str(m),
        }
    }
}

impl From<SnapshotError> for CliError {
    fn from(e: SnapshotError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        let msg = e.to_string();
        match e {
            TrainError::Config(_)
            | TrainError::Model(_)
            | TrainError::Schedule(
                ScheduleError::ZeroEpochs
                | ScheduleError::EpochOutOfRange { .. }
                | ScheduleError::InvalidConfig(_),
            ) => CliError::Usage(msg),
            // the remaining schedule errors come from the metric values themselves
            TrainError::Schedule(_) => CliError::Numerical(msg),
            TrainError::Data(_) => CliError::Data(msg),
            TrainError::Shape(_)
            | TrainError::Spectral(_)
            | TrainError::Esd(_)
            | TrainError::Diverged { .. } => CliError::Numerical(msg),
        }
    }
}

impl From<RmtError> for CliError {
    fn from(e: RmtError) -> Self {
        match e {
            RmtError::TooSmall(_)
            | RmtError::BadExponent(_)
            | RmtError::BadLambda1(_)
            | RmtError::BadSpikeScale(_) => CliError::Usage(e.to_string()),
            RmtError::Esd(_) | RmtError::Htsr(_) => CliError::Numerical(e.to_string()),
        }
    }
}

fn io_err(path: &Path, e: io::Error) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

/// Replaces anything outside `[A-Za-z0-9._-]` so layer names are safe file names.
fn file_stem(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || "._-".contains(c) { c } else { '_' })
        .collect()
}

/// Metrics CSV for every layer; degenerate layers get empty metric cells and a status.
pub fn metrics_csv(
    analysed: &[(String, Result<tempbal_core::LayerMetrics, LayerAnalysisError>)],
    snapshot: &tempbal_core::WeightSnapshot,
) -> String {
    let mut out = String::new();
    writeln!(out, "{METRICS_HEADER}").unwrap();
    for ((name, result), layer) in analysed.iter().zip(&snapshot.layers) {
        match result {
            Ok(m) => writeln!(
                out,
                "{name},{},{},{},{},{},{},{},ok",
                m.n,
                m.m,
                m.k,
                m.lambda_min,
                m.alpha_hill,
                m.spectral_norm,
                m.alpha_weighted
            )
            .unwrap(),
            Err(e) => {
                let (r, c) = oriented_dims(&layer.dims);
                let reason = e.to_string().replace([',', '\n'], ";");
                writeln!(out, "{name},{r},{c},,,,,,degenerate: {reason}").unwrap();
            }
        }
    }
    out
}

fn oriented_dims(dims: &[usize]) -> (usize, usize) {
    let rows = dims.first().copied().unwrap_or(0);
    let cols: usize = dims.iter().skip(1).product();
    (rows.min(cols), rows.max(cols))
}

pub fn analyze(
    path: &Path,
    policy: &str,
    bins: usize,
    out_dir: Option<&Path>,
) -> Result<(), CliError> {
    let policy = parse_policy(policy, bins)
        .ok_or_else(|| CliError::Usage(format!("unknown policy {policy:?}")))?;
    if bins < 2 {
        return Err(CliError::Usage(format!("--bins must be at least 2, got {bins}")));
    }
    let file = fs::File::open(path).map_err(|e| io_err(path, e))?;
    let snapshot = read_snapshot(BufReader::new(file))?;
    let analysed = analyze_snapshot(&snapshot, policy);
    let csv = metrics_csv(&analysed, &snapshot);

    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        let metrics_path = dir.join("metrics.csv");
        fs::write(&metrics_path, &csv).map_err(|e| io_err(&metrics_path, e))?;
        for (i, layer) in snapshot.layers.iter().enumerate() {
            let mut tsv = String::from("log10_lo\tlog10_hi\tcount\n");
            if let Ok(esd) = layer_esd(layer) {
                let (edges, counts) = log10_histogram(esd.eigenvalues(), bins);
                for (j, c) in counts.iter().enumerate() {
                    writeln!(tsv, "{}\t{}\t{c}", edges[j], edges[j + 1]).unwrap();
                }
            }
            let hist_path = dir.join(format!("hist_{i:03}_{}.tsv", file_stem(&layer.name)));
            fs::write(&hist_path, tsv).map_err(|e| io_err(&hist_path, e))?;
        }
    }

    io::stdout()
        .write_all(csv.as_bytes())
        .map_err(|e| CliError::Data(format!("stdout: {e}")))
}

pub fn train(config_path: &Path, seed: Option<u64>, out_dir: &Path) -> Result<(), CliError> {
    let text = fs::read_to_string(config_path)
        .map_err(|e| CliError::Usage(format!("{}: {e}", config_path.display())))?;
    let mut cfg = RunConfig::parse(&text)?;
    if let Some(seed) = seed {
        cfg.run.seed = seed;
    }
    let outcome = run_training(&cfg.run)?;

    fs::create_dir_all(out_dir).map_err(|e| io_err(out_dir, e))?;
    let telemetry_path = out_dir.join("telemetry.csv");
    fs::write(&telemetry_path, outcome.telemetry.to_csv_string(cfg.telemetry_timing))
        .map_err(|e| io_err(&telemetry_path, e))?;
    let snap_path = out_dir.join("final.wsnp");
    let file = fs::File::create(&snap_path).map_err(|e| io_err(&snap_path, e))?;
    let mut w = BufWriter::new(file);
    write_snapshot(&outcome.final_snapshot, &mut w)?;
    w.flush().map_err(|e| io_err(&snap_path, e))?;

    if let Some(acc) = outcome.final_eval_acc() {
        println!("final eval accuracy: {acc:.4}");
    }
    println!(
        "analysis overhead: {:.2}% of epoch time",
        outcome.telemetry.analysis_overhead_pct()
    );
    Ok(())
}

pub fn parse_q_list(text: &str) -> Result<Vec<usize>, CliError> {
    let qs: Vec<usize> = text
        .split(',')
        .map(|t| {
            t.trim()
                .parse::<usize>()
                .map_err(|_| CliError::Usage(format!("--q: {t:?} is not a positive integer")))
        })
        .collect::<Result<_, _>>()?;
    if qs.is_empty() {
        return Err(CliError::Usage("--q is empty".into()));
    }
    Ok(qs)
}

/// `a,b,c` or `start:stop:step` (inclusive of `stop` up to rounding).
pub fn parse_s_grid(text: &str) -> Result<Vec<f64>, CliError> {
    let num = |t: &str| {
        t.trim()
            .parse::<f64>()
            .ok()
            .filter(|x| x.is_finite())
            .ok_or_else(|| CliError::Usage(format!("--s: {t:?} is not a number")))
    };
    let parts: Vec<&str> = text.split(':').collect();
    match parts.as_slice() {
        [single] => single.split(',').map(num).collect(),
        [start, stop, step] => {
            let (a, b, h) = (num(start)?, num(stop)?, num(step)?);
            if h <= 0.0 || b < a {
                return Err(CliError::Usage(format!("--s: empty range {text:?}")));
            }
            let steps = ((b - a) / h + 1e-9).floor() as usize;
            Ok((0..=steps).map(|i| a + i as f64 * h).collect())
        }
        _ => Err(CliError::Usage(format!("--s: expected a list or start:stop:step, got {text:?}"))),
    }
}

pub fn rmt(q_text: &str, s_text: &str, out: Option<&Path>, seed: u64) -> Result<(), CliError> {
    let qs = parse_q_list(q_text)?;
    let grid = parse_s_grid(s_text)?;
    let mut rows: Vec<SAlphaRow> = Vec::new();
    for &q in &qs {
        let table = verify_s_alpha(q, &grid, seed)?;
        eprintln!("Q={q}: mean rel_err {:.4}", mean_rel_err(&table));
        rows.extend(table);
    }

    let mut buf = Vec::new();
    write_s_alpha_csv(&rows, &mut buf).map_err(|e| CliError::Data(e.to_string()))?;
    match out {
        Some(path) => fs::write(path, &buf).map_err(|e| io_err(path, e))?,
        None => io::stdout()
            .write_all(&buf)
            .map_err(|e| CliError::Data(format!("stdout: {e}")))?,
    }

    let failures: Vec<&SAlphaRow> = rows.iter().filter(|r| r.gated() && !r.passes()).collect();
    if let Some(first) = failures.first() {
        return Err(CliError::Numerical(format!(
            "{} gated cell(s) outside tolerance; first Q={} s={} rel_err={:.4}",
            failures.len(),
            first.q,
            first.s,
            first.rel_err
        )));
    }
    Ok(())
}
