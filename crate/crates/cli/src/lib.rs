//! Command implementations behind the `fbp` binary.
//!
//! Every command returns a process exit code: 0 on success, 1 when the input
//! is invalid (bad config, failed chain verification), 2 when a run aborts or
//! a file cannot be read or parsed.

use fbp_core::config::{from_value, ConfigError, SimulationConfig};
use fbp_core::engine::{prepare, run_with, RunError, RunOptions, RunResult};
use fbp_core::ledger::{chain_from_json, verify_chain_json};
use fbp_core::metrics::{save_metrics_csv, summarize, write_outputs, OutputError};
use fbp_core::strategies::Registries;
use serde_json::Value;
use std::path::{Path, PathBuf};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

/// Largest cartesian product `sweep` will run.
pub const MAX_SWEEP_CELLS: usize = 10_000;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: malformed JSON: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("no output directory: pass --out or set output_dir")]
    NoOutputDir,
    #[error("bad axis `{spec}`: {reason}")]
    Axis { spec: String, reason: String },
    #[error("sweep has {0} cells, more than {MAX_SWEEP_CELLS}")]
    TooManyCells(usize),
    #[error("cannot set {path}: {reason}")]
    SetPath { path: String, reason: String },
    #[error(transparent)]
    Run(#[from] RunError),
    #[error(transparent)]
    Output(#[from] OutputError),
    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot write {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(ConfigError::Invalid(_))
            | CliError::NoOutputDir
            | CliError::Axis { .. }
            | CliError::TooManyCells(_)
            | CliError::SetPath { .. } => EXIT_INVALID,
            _ => EXIT_RUNTIME,
        }
    }
}

/// Flags shared by `run`, `sweep` and `partition-report`.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
}

/// One sweep axis: a dotted path into the config and the values it takes.
#[derive(Debug, Clone, PartialEq)]
pub struct Axis {
    pub path: String,
    pub values: Vec<Value>,
}

impl Axis {
    /// Parses `PATH=JSON_ARRAY`, e.g. `aggregation.kind=["mean","median"]`.
    pub fn parse(spec: &str) -> Result<Axis, CliError> {
        let bad = |reason: &str| CliError::Axis {
            spec: spec.to_string(),
            reason: reason.to_string(),
        };
        let (path, values) = spec
            .split_once('=')
            .ok_or_else(|| bad("expected PATH=JSON_ARRAY"))?;
        let path = path.trim().trim_start_matches("$.").to_string();
        if path.is_empty() {
            return Err(bad("empty path"));
        }
        let values: Value = serde_json::from_str(values).map_err(|e| bad(&e.to_string()))?;
        match values {
            Value::Array(values) if !values.is_empty() => Ok(Axis { path, values }),
            Value::Array(_) => Err(bad("value list is empty")),
            _ => Err(bad("values must be a JSON array")),
        }
    }
}

fn read_json(path: &Path) -> Result<Value, CliError> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| CliError::Json {
        path: path.to_path_buf(),
        source,
    })
}

/// Sets `path` (dot separated, numeric segments index arrays) inside `root`,
/// creating missing object keys.
pub fn set_path(root: &mut Value, path: &str, new: Value) -> Result<(), CliError> {
    let err = |reason: String| CliError::SetPath {
        path: path.to_string(),
        reason,
    };
    let mut cur = root;
    for seg in path.split('.') {
        cur = match cur {
            Value::Object(map) => map.entry(seg.to_string()).or_insert(Value::Null),
            Value::Array(items) => {
                let i: usize = seg
                    .parse()
                    .map_err(|_| err(format!("`{seg}` is not an array index")))?;
                let len = items.len();
                items
                    .get_mut(i)
                    .ok_or_else(|| err(format!("index {i} out of range for {len} items")))?
            }
            Value::Null => {
                *cur = Value::Object(Default::default());
                let Value::Object(map) = cur else {
                    unreachable!()
                };
                map.entry(seg.to_string()).or_insert(Value::Null)
            }
            _ => return Err(err(format!("cannot descend into a scalar at `{seg}`"))),
        };
    }
    *cur = new;
    Ok(())
}

/// Makes relative dataset paths absolute, reading them as relative to `base`
/// (the config file's directory) rather than the working directory.
fn resolve_paths(config: &mut SimulationConfig, base: &Path) {
    for p in [
        &mut config.dataset.images_path,
        &mut config.dataset.labels_path,
    ]
    .into_iter()
    .flatten()
    {
        if p.is_relative() {
            let joined = base.join(&*p);
            *p = std::path::absolute(&joined).unwrap_or(joined);
        }
    }
}

fn config_dir(config_path: &Path) -> PathBuf {
    match config_path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

/// Applies the seed override and validates. Dataset paths are resolved
/// against `base`.
fn build_config(
    mut value: Value,
    seed: Option<u64>,
    base: &Path,
) -> Result<SimulationConfig, CliError> {
    if let Some(seed) = seed {
        set_path(&mut value, "master_seed", Value::from(seed))?;
    }
    let mut config = from_value(value, &Registries::default())?;
    resolve_paths(&mut config, base);
    Ok(config)
}

fn run_options(workers: Option<usize>) -> RunOptions {
    match workers {
        Some(w) if w > 0 => RunOptions { workers: w },
        _ => RunOptions::default(),
    }
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|source| CliError::Write {
        path: path.to_path_buf(),
        source,
    })
}

/// Runs one validated config into `out`. On abort, the metrics of the
/// completed rounds are still written to `out/metrics.csv`.
pub fn execute(
    config: &SimulationConfig,
    out: &Path,
    workers: Option<usize>,
) -> Result<RunResult, CliError> {
    let registries = Registries::default();
    match run_with(config, &run_options(workers), &registries) {
        Ok(run) => {
            write_outputs(&run, summarize(&run, config).as_ref(), out)?;
            write_text(
                &out.join("config.resolved.json"),
                &(config.to_json_pretty() + "\n"),
            )?;
            Ok(run)
        }
        Err(e) => {
            if std::fs::create_dir_all(out).is_ok() {
                let classes = config.expected_classes().unwrap_or_else(|| {
                    e.partial_metrics
                        .first()
                        .map_or(0, |m| m.per_class_accuracy.len())
                });
                // Best effort: the run error is what gets reported.
                let _ = save_metrics_csv(&e.partial_metrics, classes, &out.join("metrics.csv"));
            }
            Err(e.into())
        }
    }
}

fn report(result: Result<(), CliError>) -> i32 {
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn cmd_run(config_path: &Path, flags: &Overrides) -> i32 {
    report(run_inner(config_path, flags))
}

fn run_inner(config_path: &Path, flags: &Overrides) -> Result<(), CliError> {
    let value = read_json(config_path)?;
    let config = build_config(value, flags.seed, &config_dir(config_path))?;
    let out = flags
        .out
        .clone()
        .or_else(|| config.output_dir.clone())
        .ok_or(CliError::NoOutputDir)?;
    let run = execute(&config, &out, flags.workers)?;
    let acc = run.metrics.last().map(|m| m.global_accuracy);
    match acc {
        Some(a) => println!(
            "final_accuracy={a:.6} final_model_digest={}",
            run.final_model_digest
        ),
        None => println!("final_model_digest={}", run.final_model_digest),
    }
    Ok(())
}

/// Every combination of axis values, last axis varying fastest.
pub fn cartesian(axes: &[Axis]) -> Result<Vec<Vec<Value>>, CliError> {
    let total = axes
        .iter()
        .try_fold(1usize, |acc, a| acc.checked_mul(a.values.len()))
        .unwrap_or(usize::MAX);
    if total > MAX_SWEEP_CELLS {
        return Err(CliError::TooManyCells(total));
    }
    let mut cells: Vec<Vec<Value>> = vec![vec![]];
    for axis in axes {
        cells = cells
            .into_iter()
            .flat_map(|prefix| {
                axis.values.iter().map(move |v| {
                    let mut c = prefix.clone();
                    c.push(v.clone());
                    c
                })
            })
            .collect();
    }
    Ok(cells)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellOutcome {
    pub status: &'static str,
    pub final_accuracy: Option<f64>,
    pub final_model_digest: Option<String>,
    pub message: String,
}

/// Runs a sweep. Each cell's outputs go to `out/cell_<k>/`; cells that fail
/// are recorded in `sweep_index.csv` and the sweep moves on. The exit code is
/// the worst across cells.
pub fn cmd_sweep(config_path: &Path, axes: &[Axis], flags: &Overrides) -> i32 {
    match sweep_inner(config_path, axes, flags) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn sweep_inner(config_path: &Path, axes: &[Axis], flags: &Overrides) -> Result<i32, CliError> {
    let base = read_json(config_path)?;
    let cells = cartesian(axes)?;
    let out = match &flags.out {
        Some(o) => o.clone(),
        None => base
            .get("output_dir")
            .and_then(Value::as_str)
            .map(PathBuf::from)
            .ok_or(CliError::NoOutputDir)?,
    };
    std::fs::create_dir_all(&out).map_err(|source| CliError::Write {
        path: out.clone(),
        source,
    })?;
    let dir = config_dir(config_path);
    let index_path = out.join("sweep_index.csv");
    let csv_err = |source| CliError::Csv {
        path: index_path.clone(),
        source,
    };
    let mut index = csv::Writer::from_path(&index_path).map_err(csv_err)?;
    let mut header = vec!["cell".to_string()];
    header.extend(axes.iter().map(|a| a.path.clone()));
    header.extend(["status", "final_accuracy", "final_model_digest", "message"].map(String::from));
    index.write_record(&header).map_err(csv_err)?;

    let mut worst = EXIT_OK;
    for (k, values) in cells.iter().enumerate() {
        let outcome = run_cell(
            &base,
            axes,
            values,
            &dir,
            &out.join(format!("cell_{k}")),
            flags,
        );
        let code = match outcome.status {
            "ok" => EXIT_OK,
            "invalid" => EXIT_INVALID,
            _ => EXIT_RUNTIME,
        };
        if code != EXIT_OK {
            eprintln!("cell_{k}: {}: {}", outcome.status, outcome.message);
        }
        worst = worst.max(code);
        let mut row = vec![k.to_string()];
        row.extend(values.iter().map(|v| v.to_string()));
        row.push(outcome.status.to_string());
        row.push(
            outcome
                .final_accuracy
                .map(|a| format!("{a:.6}"))
                .unwrap_or_default(),
        );
        row.push(outcome.final_model_digest.unwrap_or_default());
        row.push(outcome.message);
        index.write_record(&row).map_err(csv_err)?;
        index.flush().map_err(|e| csv_err(e.into()))?;
    }
    println!("{} cells written to {}", cells.len(), out.display());
    Ok(worst)
}

fn run_cell(
    base: &Value,
    axes: &[Axis],
    values: &[Value],
    dir: &Path,
    out: &Path,
    flags: &Overrides,
) -> CellOutcome {
    let failed = |status, e: CliError| CellOutcome {
        status,
        final_accuracy: None,
        final_model_digest: None,
        message: e.to_string().replace('\n', " "),
    };
    let mut value = base.clone();
    for (axis, v) in axes.iter().zip(values) {
        if let Err(e) = set_path(&mut value, &axis.path, v.clone()) {
            return failed("invalid", e);
        }
    }
    let config = match build_config(value, flags.seed, dir) {
        Ok(c) => c,
        Err(e) => return failed("invalid", e),
    };
    match execute(&config, out, flags.workers) {
        Ok(run) => CellOutcome {
            status: "ok",
            final_accuracy: run.metrics.last().map(|m| m.global_accuracy),
            final_model_digest: Some(run.final_model_digest.to_string()),
            message: String::new(),
        },
        Err(e) => failed("failed", e),
    }
}

/// Verifies an exported chain. 0 when valid, 1 naming the first failure, 2
/// when the file cannot be read or parsed.
pub fn cmd_verify(chain_path: &Path) -> i32 {
    let text = match std::fs::read_to_string(chain_path) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: cannot read {}: {e}", chain_path.display());
            return EXIT_RUNTIME;
        }
    };
    if let Err(e) = chain_from_json(&text) {
        eprintln!("error: {}: {e}", chain_path.display());
        return EXIT_RUNTIME;
    }
    match verify_chain_json(&text) {
        Ok(chain) => {
            println!("ok: {} blocks, tip {}", chain.len(), chain.tip().block_hash);
            EXIT_OK
        }
        Err(f) => {
            eprintln!("invalid: {f}");
            EXIT_INVALID
        }
    }
}

/// Prints one CSV row per partition: owners, train and holdout sizes, and the
/// label histogram of the partition's training rows.
pub fn cmd_partition_report(config_path: &Path, flags: &Overrides) -> i32 {
    report(partition_report_inner(
        config_path,
        flags,
        &mut std::io::stdout(),
    ))
}

pub fn partition_report_inner<W: std::io::Write>(
    config_path: &Path,
    flags: &Overrides,
    out: W,
) -> Result<(), CliError> {
    let value = read_json(config_path)?;
    let config = build_config(value, flags.seed, &config_dir(config_path))?;
    let setup = prepare(&config).map_err(|source| RunError {
        round: 0,
        stage: fbp_core::engine::Stage::Setup,
        source,
        partial_metrics: vec![],
    })?;
    let classes = setup.train.num_classes;
    let path = PathBuf::from("<stdout>");
    let csv_err = |source| CliError::Csv {
        path: path.clone(),
        source,
    };
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = ["partition", "nodes", "train", "holdout"]
        .map(String::from)
        .to_vec();
    header.extend((0..classes).map(|c| format!("class_{c}")));
    w.write_record(&header).map_err(csv_err)?;
    for (pi, part) in setup.partitions.iter().enumerate() {
        let owners: Vec<String> = setup
            .assignment
            .iter()
            .filter(|(_, &p)| p == pi)
            .map(|(n, _)| n.to_string())
            .collect();
        let labels: Vec<usize> = part
            .indices
            .iter()
            .map(|&i| setup.train.labels[i])
            .collect();
        let hist = fbp_core::dataset::label_histogram(&labels, classes);
        let mut row = vec![
            pi.to_string(),
            owners.join(" "),
            part.indices.len().to_string(),
            part.holdout_indices.len().to_string(),
        ];
        row.extend(hist.iter().map(|h| h.to_string()));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| csv_err(e.into()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn axis_parsing() {
        let a = Axis::parse(r#"aggregation.kind=["mean","median"]"#).unwrap();
        assert_eq!(a.path, "aggregation.kind");
        assert_eq!(a.values, vec![json!("mean"), json!("median")]);
        assert_eq!(Axis::parse("$.rounds=[1,2]").unwrap().path, "rounds");
        assert!(Axis::parse("rounds").is_err());
        assert!(Axis::parse("rounds=[]").is_err());
        assert!(Axis::parse("rounds=3").is_err());
    }

    #[test]
    fn set_path_creates_and_indexes() {
        let mut v = json!({"validation": {"kind": "pass_weights"}, "attackers": [{"node_id": 0}]});
        set_path(&mut v, "validation.accept_count", json!(3)).unwrap();
        set_path(&mut v, "attackers.0.sigma", json!(0.5)).unwrap();
        assert_eq!(v["validation"]["accept_count"], json!(3));
        assert_eq!(v["attackers"][0]["sigma"], json!(0.5));
        assert!(set_path(&mut v, "attackers.4.sigma", json!(1)).is_err());
        assert!(set_path(&mut v, "validation.kind.x", json!(1)).is_err());
    }

    #[test]
    fn product_order_and_size() {
        let axes = [
            Axis::parse("a=[1,2]").unwrap(),
            Axis::parse("b=[10,20,30]").unwrap(),
        ];
        let cells = cartesian(&axes).unwrap();
        assert_eq!(cells.len(), 6);
        assert_eq!(cells[0], vec![json!(1), json!(10)]);
        assert_eq!(cells[1], vec![json!(1), json!(20)]);
        assert_eq!(cells[5], vec![json!(2), json!(30)]);
        assert_eq!(cartesian(&[]).unwrap(), vec![Vec::<Value>::new()]);
        let big = Axis {
            path: "x".into(),
            values: vec![json!(0); 101],
        };
        assert!(matches!(
            cartesian(&[big.clone(), big]),
            Err(CliError::TooManyCells(10201))
        ));
    }
}
