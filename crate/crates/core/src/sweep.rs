//! Ablation sweeps: the Cartesian product of config axes, each cell repeated
//! with offset seeds and run as an isolated experiment.
//!
//! ```toml
//! repeats = 3
//! base_config = "desk.toml"   # or an inline [base] table
//!
//! [axes]
//! "aggregation.beta" = [0.0, 0.3, 1.0]
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::Deserialize;

use crate::config::{locate_key, parse_config, ExperimentConfig};
use crate::error::{Error, Result};
use crate::rng::rng_from_seed;
use crate::simulator::{export_report, run_experiment};

/// Environment variable overriding the sweep worker count.
pub const WORKERS_ENV: &str = "FEDNS_WORKERS";

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSweep {
    #[serde(default = "one")]
    repeats: usize,
    #[serde(default)]
    workers: Option<usize>,
    #[serde(default)]
    base_config: Option<PathBuf>,
    #[serde(default)]
    base: Option<toml::Table>,
    #[serde(default)]
    axes: toml::Table,
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepSpec {
    pub base: ExperimentConfig,
    /// In file order.
    pub axes: Vec<(String, Vec<toml::Value>)>,
    pub repeats: usize,
    pub workers: Option<usize>,
}

/// One point of the axis grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Cell {
    pub index: usize,
    pub assignments: Vec<(String, toml::Value)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    pub cell: usize,
    pub repeat: usize,
    pub seed: u64,
    pub dir: PathBuf,
    pub outcome: std::result::Result<RunSummary, String>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RunSummary {
    pub final_accuracy: f64,
    pub detection_accuracy: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CellSummary {
    pub cell: Cell,
    pub completed: usize,
    pub failed: usize,
    pub mean_accuracy: Option<f64>,
    pub std_accuracy: Option<f64>,
    pub mean_detection_accuracy: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepOutcome {
    pub runs: Vec<RunRecord>,
    pub cells: Vec<CellSummary>,
}

fn sweep_error(key: &str, line: Option<usize>, message: impl Into<String>) -> Error {
    Error::Config {
        key: key.to_string(),
        line,
        message: message.into(),
    }
}

/// Parses a sweep file. Relative `base_config` paths resolve against the
/// sweep file's directory.
pub fn parse_sweep(path: &Path) -> Result<SweepSpec> {
    let source = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_sweep_str(&source, path.parent().unwrap_or(Path::new(".")))
}

pub fn parse_sweep_str(source: &str, base_dir: &Path) -> Result<SweepSpec> {
    let raw: RawSweep = toml::from_str(source).map_err(|e| {
        let message = e.message().to_string();
        let line = e.span().map(|s| source[..s.start.min(source.len())].matches('\n').count() + 1);
        let key = message.split('`').nth(1).unwrap_or("<document>").to_string();
        sweep_error(&key, line, message)
    })?;
    if raw.repeats == 0 {
        return Err(sweep_error("repeats", locate_key(source, "repeats"), "must be at least 1"));
    }
    if raw.workers == Some(0) {
        return Err(sweep_error("workers", locate_key(source, "workers"), "must be at least 1"));
    }
    let base = match (raw.base_config, raw.base) {
        (Some(_), Some(_)) => {
            return Err(sweep_error("base_config", locate_key(source, "base_config"), "give either base_config or [base], not both"))
        }
        (Some(p), None) => parse_config(&if p.is_relative() { base_dir.join(p) } else { p })?,
        (None, Some(t)) => {
            let mut cfg: ExperimentConfig = toml::Value::Table(t)
                .try_into()
                .map_err(|e: toml::de::Error| sweep_error("base", None, e.message().to_string()))?;
            cfg.resolve_paths(base_dir);
            cfg.validate()?;
            cfg
        }
        (None, None) => ExperimentConfig::default(),
    };
    let mut axes = Vec::new();
    for (key, values) in raw.axes {
        let line = locate_key(source, &format!("axes.{key}"));
        let values = match values {
            toml::Value::Array(v) if !v.is_empty() => v,
            _ => return Err(sweep_error(&key, line, "axis values must be a non-empty array")),
        };
        for v in &values {
            apply(&base, &[(key.clone(), v.clone())]).map_err(|e| match e {
                Error::Config { message, .. } => sweep_error(&key, line, message),
                other => other,
            })?;
        }
        axes.push((key, values));
    }
    Ok(SweepSpec {
        base,
        axes,
        repeats: raw.repeats,
        workers: raw.workers,
    })
}

/// `base` with dotted-key overrides applied and revalidated.
pub fn apply(base: &ExperimentConfig, assignments: &[(String, toml::Value)]) -> Result<ExperimentConfig> {
    let mut root = toml::Table::try_from(base).map_err(|e| Error::Serde(e.to_string()))?;
    for (key, value) in assignments {
        let (section, field) = key
            .split_once('.')
            .ok_or_else(|| sweep_error(key, None, "axis keys take the form section.key"))?;
        let table = root
            .get_mut(section)
            .and_then(toml::Value::as_table_mut)
            .ok_or_else(|| sweep_error(key, None, format!("unknown config section `{section}`")))?;
        let value = match (table.get(field), value) {
            (Some(toml::Value::Float(_)), toml::Value::Integer(i)) => toml::Value::Float(*i as f64),
            _ => value.clone(),
        };
        table.insert(field.to_string(), value);
    }
    let cfg: ExperimentConfig = toml::Value::Table(root).try_into().map_err(|e: toml::de::Error| {
        let key = assignments.first().map_or("<axes>", |a| a.0.as_str());
        sweep_error(key, None, e.message().to_string())
    })?;
    cfg.validate()?;
    Ok(cfg)
}

impl SweepSpec {
    /// Grid cells, last axis varying fastest.
    pub fn cells(&self) -> Vec<Cell> {
        let mut grid: Vec<Vec<(String, toml::Value)>> = vec![Vec::new()];
        for (key, values) in &self.axes {
            grid = grid
                .into_iter()
                .flat_map(|prefix| {
                    values.iter().map(move |v| {
                        let mut next = prefix.clone();
                        next.push((key.clone(), v.clone()));
                        next
                    })
                })
                .collect();
        }
        grid.into_iter()
            .enumerate()
            .map(|(index, assignments)| Cell { index, assignments })
            .collect()
    }

    /// Config of one cell and repeat: the cell's seed plus `repeat`.
    pub fn run_config(&self, cell: &Cell, repeat: usize) -> Result<ExperimentConfig> {
        let mut cfg = apply(&self.base, &cell.assignments)?;
        cfg.experiment.seed = cfg.experiment.seed.wrapping_add(repeat as u64);
        Ok(cfg)
    }
}

/// Worker count: an explicit request wins, then the environment variable,
/// then the spec, then the machine's parallelism.
pub fn resolve_workers(explicit: Option<usize>, spec: &SweepSpec) -> Result<usize> {
    if let Some(n) = explicit {
        return if n == 0 { Err(Error::arg("worker count must be at least 1")) } else { Ok(n) };
    }
    if let Ok(v) = std::env::var(WORKERS_ENV) {
        return match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(Error::arg(format!("{WORKERS_ENV}={v:?} is not a positive integer"))),
        };
    }
    Ok(spec
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get())))
}

#[derive(Clone, Copy, Debug, Default)]
pub struct SweepOptions {
    pub workers: Option<usize>,
    /// Runs the cells in a seeded random order; outputs are unaffected.
    pub shuffle_seed: Option<u64>,
}

fn cell_dir(out: &Path, cell: usize, repeat: usize) -> PathBuf {
    out.join(format!("cell_{cell:03}")).join(format!("rep_{repeat}"))
}

fn run_one(spec: &SweepSpec, cell: &Cell, repeat: usize, dir: &Path) -> (u64, std::result::Result<RunSummary, String>) {
    let cfg = match spec.run_config(cell, repeat) {
        Ok(c) => c,
        Err(e) => return (0, Err(e.to_string())),
    };
    let seed = cfg.experiment.seed;
    let result = run_experiment::<f64>(&cfg).and_then(|out| {
        export_report(&out.report, dir)?;
        Ok(RunSummary {
            final_accuracy: out.report.final_accuracy(),
            detection_accuracy: out.report.detection_accuracy,
        })
    });
    let result = result.map_err(|e| e.to_string());
    if let Err(msg) = &result {
        let _ = fs::create_dir_all(dir).and_then(|_| fs::write(dir.join("error.txt"), format!("{msg}\n")));
    }
    (seed, result)
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

fn std_dev(xs: &[f64]) -> Option<f64> {
    let m = mean(xs)?;
    Some((xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64).sqrt())
}

fn value_text(v: &toml::Value) -> String {
    match v {
        toml::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.6}")).unwrap_or_default()
}

/// Runs every cell × repeat under `out`, then writes `aggregate.csv`
/// (one row per cell) and `runs.csv` (one row per run). Failed runs are
/// recorded and leave the rest of the sweep running.
pub fn run_sweep(spec: &SweepSpec, out: &Path, options: SweepOptions) -> Result<SweepOutcome> {
    let workers = resolve_workers(options.workers, spec)?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let cells = spec.cells();
    let mut jobs: Vec<(usize, usize)> = cells
        .iter()
        .flat_map(|c| (0..spec.repeats).map(move |r| (c.index, r)))
        .collect();
    if let Some(s) = options.shuffle_seed {
        jobs.shuffle(&mut rng_from_seed(s));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::arg(format!("cannot start {workers} workers: {e}")))?;
    let mut runs: Vec<RunRecord> = pool.install(|| {
        jobs.par_iter()
            .map(|&(c, r)| {
                let dir = cell_dir(out, c, r);
                let (seed, outcome) = run_one(spec, &cells[c], r, &dir);
                RunRecord { cell: c, repeat: r, seed, dir, outcome }
            })
            .collect()
    });
    runs.sort_by_key(|r| (r.cell, r.repeat));

    let mut by_cell: BTreeMap<usize, Vec<&RunRecord>> = BTreeMap::new();
    for r in &runs {
        by_cell.entry(r.cell).or_default().push(r);
    }
    let summaries: Vec<CellSummary> = cells
        .iter()
        .map(|cell| {
            let rs = by_cell.get(&cell.index).map(Vec::as_slice).unwrap_or(&[]);
            let ok: Vec<RunSummary> = rs.iter().filter_map(|r| r.outcome.as_ref().ok().copied()).collect();
            let acc: Vec<f64> = ok.iter().map(|s| s.final_accuracy).collect();
            let det: Vec<f64> = ok.iter().filter_map(|s| s.detection_accuracy).collect();
            CellSummary {
                cell: cell.clone(),
                completed: ok.len(),
                failed: rs.len() - ok.len(),
                mean_accuracy: mean(&acc),
                std_accuracy: std_dev(&acc),
                mean_detection_accuracy: mean(&det),
            }
        })
        .collect();

    let keys: Vec<&str> = spec.axes.iter().map(|(k, _)| k.as_str()).collect();
    let mut agg = String::from("cell");
    for k in &keys {
        let _ = write!(agg, ",{}", csv_field(k));
    }
    agg.push_str(",completed,failed,mean_final_accuracy,std_final_accuracy,mean_detection_accuracy\n");
    for s in &summaries {
        let _ = write!(agg, "{}", s.cell.index);
        for (_, v) in &s.cell.assignments {
            let _ = write!(agg, ",{}", csv_field(&value_text(v)));
        }
        let _ = writeln!(
            agg,
            ",{},{},{},{},{}",
            s.completed,
            s.failed,
            opt(s.mean_accuracy),
            opt(s.std_accuracy),
            opt(s.mean_detection_accuracy)
        );
    }
    let path = out.join("aggregate.csv");
    fs::write(&path, agg).map_err(|e| Error::io(&path, e))?;

    let mut log = String::from("cell,repeat,seed,status,final_accuracy,detection_accuracy,error\n");
    for r in &runs {
        let (status, acc, det, err) = match &r.outcome {
            Ok(s) => ("ok", format!("{:.6}", s.final_accuracy), opt(s.detection_accuracy), String::new()),
            Err(e) => ("failed", String::new(), String::new(), csv_field(e)),
        };
        let _ = writeln!(log, "{},{},{},{status},{acc},{det},{err}", r.cell, r.repeat, r.seed);
    }
    let path = out.join("runs.csv");
    fs::write(&path, log).map_err(|e| Error::io(&path, e))?;

    Ok(SweepOutcome { runs, cells: summaries })
}
