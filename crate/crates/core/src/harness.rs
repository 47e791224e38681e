//! Repeated seeded experiments and report tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constructor::{splitmix, train, TrainConfig, TrainOutcome, TrainStatus, Variant};
use crate::data::{self, Dataset, GrindingSurrogateConfig, Sampling};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Root mean squared error over all entries.
pub fn rmse(y: &Matrix, yhat: &Matrix) -> Result<f64> {
    if y.rows() != yhat.rows() || y.cols() != yhat.cols() {
        return Err(Error::dim(format!(
            "rmse of {}x{} against {}x{}",
            y.rows(),
            y.cols(),
            yhat.rows(),
            yhat.cols()
        )));
    }
    if y.as_slice().is_empty() {
        return Err(Error::Empty("rmse input"));
    }
    let sse: f64 = y
        .as_slice()
        .iter()
        .zip(yhat.as_slice())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok((sse / y.as_slice().len() as f64).sqrt())
}

pub fn node_utilization(l_final: usize, l_max: usize) -> Result<f64> {
    if l_max == 0 || l_final > l_max {
        return Err(Error::InvalidParameter(format!(
            "node utilization needs 0 <= {l_final} <= l_max = {l_max} and l_max >= 1"
        )));
    }
    Ok(l_final as f64 / l_max as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    /// The bump function on [0, 1], regenerated per repeat.
    Function {
        n: usize,
        #[serde(default)]
        sampling: Sampling,
    },
    /// Synthetic grinding particle-size data, regenerated per repeat.
    Grinding {
        n: usize,
        #[serde(default)]
        noise_sd: f64,
    },
    /// A CSV file whose last `targets` columns are outputs.
    Csv { path: PathBuf, targets: usize },
}

impl DatasetSource {
    fn load(&self, seed: u64) -> Result<Dataset> {
        match self {
            DatasetSource::Function { n, sampling } => data::gen_function(*n, seed, *sampling),
            DatasetSource::Grinding { n, noise_sd } => {
                data::gen_grinding_surrogate(&GrindingSurrogateConfig {
                    n: *n,
                    seed,
                    noise_sd: *noise_sd,
                })
            }
            DatasetSource::Csv { path, targets } => data::load_csv(path, *targets),
        }
    }

    fn is_generated(&self) -> bool {
        !matches!(self, DatasetSource::Csv { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantSpec {
    /// Row label in reports; defaults to the variant name.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    /// The `seed` field is replaced by the per-repeat seed.
    #[serde(flatten)]
    pub config: TrainConfig,
}

impl VariantSpec {
    pub fn label(&self) -> String {
        self.label
            .clone()
            .unwrap_or_else(|| self.config.variant.name().to_string())
    }
}

impl From<TrainConfig> for VariantSpec {
    fn from(config: TrainConfig) -> Self {
        VariantSpec {
            label: None,
            config,
        }
    }
}

/// A repeated experiment. Each repeat derives its seed from `base_seed`,
/// draws (or reuses) the dataset, splits it, and trains every variant on the
/// same split with the same seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub dataset: DatasetSource,
    pub train_fraction: f64,
    #[serde(default)]
    pub base_seed: u64,
    pub repeats: usize,
    pub variants: Vec<VariantSpec>,
    /// When false all wall times are reported as 0.
    #[serde(default = "yes")]
    pub record_timing: bool,
}

fn yes() -> bool {
    true
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.repeats < 1 {
            return Err(Error::InvalidParameter("repeats must be >= 1".into()));
        }
        if self.variants.is_empty() {
            return Err(Error::InvalidParameter("no variants to run".into()));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "train_fraction must lie in (0, 1), got {}",
                self.train_fraction
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for v in &self.variants {
            v.config.validate()?;
            let label = v.label();
            if label.is_empty() || label.contains([',', '\n', '\r']) {
                return Err(Error::InvalidParameter(format!(
                    "variant label {label:?} must be non-empty without commas or line breaks"
                )));
            }
            if !seen.insert(v.label()) {
                return Err(Error::InvalidParameter(format!(
                    "duplicate variant label {:?}",
                    v.label()
                )));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<ExperimentSpec> {
        let spec: ExperimentSpec = serde_json::from_str(text).map_err(|e| {
            Error::Malformed(format!(
                "experiment spec, line {} column {}: {e}",
                e.line(),
                e.column()
            ))
        })?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<ExperimentSpec> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        ExperimentSpec::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serializes")
    }
}

/// Seed of repeat `r`.
pub fn repeat_seed(base_seed: u64, r: usize) -> u64 {
    splitmix(splitmix(base_seed) ^ r as u64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RunStatus {
    ReachedTol,
    NodeBudget,
    Stalled,
    Failed,
}

impl From<TrainStatus> for RunStatus {
    fn from(s: TrainStatus) -> Self {
        match s {
            TrainStatus::ReachedTol => RunStatus::ReachedTol,
            TrainStatus::NodeBudget => RunStatus::NodeBudget,
            TrainStatus::Stalled => RunStatus::Stalled,
        }
    }
}

impl RunStatus {
    const ALL: [RunStatus; 4] = [
        RunStatus::ReachedTol,
        RunStatus::NodeBudget,
        RunStatus::Stalled,
        RunStatus::Failed,
    ];

    fn name(self) -> &'static str {
        match self {
            RunStatus::ReachedTol => "ReachedTol",
            RunStatus::NodeBudget => "NodeBudget",
            RunStatus::Stalled => "Stalled",
            RunStatus::Failed => "Failed",
        }
    }

    fn parse(s: &str) -> Result<RunStatus> {
        RunStatus::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Malformed(format!("unknown run status {s:?}")))
    }
}

/// One (repeat, variant) training run. RMSE values are on normalized targets.
/// Failed runs carry zeros and are left out of the aggregates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRow {
    pub repeat: usize,
    pub seed: u64,
    pub label: String,
    pub variant: Variant,
    pub status: RunStatus,
    pub nodes: usize,
    pub utilization: f64,
    pub train_rmse: f64,
    pub test_rmse: f64,
    pub time_ms: f64,
    pub n_train: usize,
    pub n_test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub label: String,
    pub variant: Variant,
    /// Runs that produced a model.
    pub runs: usize,
    pub mean_time_ms: f64,
    pub std_time_ms: f64,
    pub mean_train_rmse: f64,
    pub std_train_rmse: f64,
    pub mean_test_rmse: f64,
    pub std_test_rmse: f64,
    pub mean_nodes: f64,
    pub mean_utilization: f64,
    pub status: BTreeMap<RunStatus, usize>,
    /// False when no run produced a model.
    pub valid: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub repeats: usize,
    pub base_seed: u64,
    pub rows: Vec<RawRow>,
    pub aggregates: Vec<Aggregate>,
}

/// Raw rows plus the trained models and traces, parallel to `rows`.
#[derive(Debug, Clone)]
pub struct ExperimentRun {
    pub rows: Vec<RawRow>,
    pub outcomes: Vec<Option<TrainOutcome>>,
}

fn run_one(
    spec: &ExperimentSpec,
    shared: Option<&Dataset>,
    r: usize,
) -> Result<Vec<(RawRow, Option<TrainOutcome>)>> {
    let seed = repeat_seed(spec.base_seed, r);
    let owned;
    let ds = match shared {
        Some(ds) => ds,
        None => {
            owned = spec.dataset.load(seed)?;
            &owned
        }
    };
    let (tr, te) = data::split(ds, spec.train_fraction, seed)?;
    let mut out = Vec::with_capacity(spec.variants.len());
    for v in &spec.variants {
        let mut config = v.config.clone();
        config.seed = seed;
        let mut row = RawRow {
            repeat: r,
            seed,
            label: v.label(),
            variant: config.variant,
            status: RunStatus::Failed,
            nodes: 0,
            utilization: 0.0,
            train_rmse: 0.0,
            test_rmse: 0.0,
            time_ms: 0.0,
            n_train: tr.len(),
            n_test: te.len(),
        };
        let outcome = match train(&config, &tr, Some(&te)) {
            Ok(o) => o,
            Err(_) => {
                out.push((row, None));
                continue;
            }
        };
        let stats = &outcome.net.norm_stats;
        let te_n = stats.apply(&te)?;
        row.status = outcome.status().into();
        row.nodes = outcome.net.len();
        row.utilization = if config.l_max == 0 {
            0.0
        } else {
            node_utilization(row.nodes, config.l_max)?
        };
        row.train_rmse = outcome.trace.final_rmse();
        row.test_rmse = rmse(te_n.y(), &outcome.net.predict_normalized(te_n.x())?)?;
        if spec.record_timing {
            row.time_ms = outcome.trace.records.last().map_or(0.0, |t| t.elapsed_ms);
        }
        out.push((row, Some(outcome)));
    }
    Ok(out)
}

/// Runs every repeat. `jobs <= 1` runs sequentially; otherwise repeats run
/// on a pool of `jobs` threads and are reassembled in repeat order.
pub fn run_repeats(spec: &ExperimentSpec, jobs: usize) -> Result<ExperimentRun> {
    spec.validate()?;
    let shared = if spec.dataset.is_generated() {
        None
    } else {
        Some(spec.dataset.load(spec.base_seed)?)
    };
    let per_repeat: Vec<_> = if jobs <= 1 {
        (0..spec.repeats)
            .map(|r| run_one(spec, shared.as_ref(), r))
            .collect::<Result<_>>()?
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
        pool.install(|| {
            (0..spec.repeats)
                .into_par_iter()
                .map(|r| run_one(spec, shared.as_ref(), r))
                .collect::<Result<_>>()
        })?
    };
    let (rows, outcomes) = per_repeat.into_iter().flatten().unzip();
    Ok(ExperimentRun { rows, outcomes })
}

pub fn run_experiment(spec: &ExperimentSpec, jobs: usize) -> Result<BenchReport> {
    let run = run_repeats(spec, jobs)?;
    Ok(summarize(spec, run))
}

/// Builds the report for a finished run of `spec`.
pub fn summarize(spec: &ExperimentSpec, run: ExperimentRun) -> BenchReport {
    let labels: Vec<(String, Variant)> = spec
        .variants
        .iter()
        .map(|v| (v.label(), v.config.variant))
        .collect();
    BenchReport {
        repeats: spec.repeats,
        base_seed: spec.base_seed,
        aggregates: aggregate(&run.rows, &labels),
        rows: run.rows,
    }
}

/// Mean and population standard deviation; zeros for an empty slice.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Per-label statistics over `rows`, in the order of `labels`.
pub fn aggregate(rows: &[RawRow], labels: &[(String, Variant)]) -> Vec<Aggregate> {
    labels
        .iter()
        .map(|(label, variant)| {
            let mine: Vec<&RawRow> = rows.iter().filter(|r| &r.label == label).collect();
            let ok: Vec<&RawRow> = mine
                .iter()
                .copied()
                .filter(|r| r.status != RunStatus::Failed)
                .collect();
            let col = |f: fn(&RawRow) -> f64| ok.iter().map(|r| f(r)).collect::<Vec<_>>();
            let (mean_time_ms, std_time_ms) = mean_std(&col(|r| r.time_ms));
            let (mean_train_rmse, std_train_rmse) = mean_std(&col(|r| r.train_rmse));
            let (mean_test_rmse, std_test_rmse) = mean_std(&col(|r| r.test_rmse));
            let mut status: BTreeMap<RunStatus, usize> =
                RunStatus::ALL.iter().map(|s| (*s, 0)).collect();
            for r in &mine {
                *status.entry(r.status).or_default() += 1;
            }
            Aggregate {
                label: label.clone(),
                variant: *variant,
                runs: ok.len(),
                mean_time_ms,
                std_time_ms,
                mean_train_rmse,
                std_train_rmse,
                mean_test_rmse,
                std_test_rmse,
                mean_nodes: mean_std(&col(|r| r.nodes as f64)).0,
                mean_utilization: mean_std(&col(|r| r.utilization)).0,
                status,
                valid: !ok.is_empty(),
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

impl ReportFormat {
    /// `.json` means JSON, anything else CSV.
    pub fn from_path(path: &Path) -> ReportFormat {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("json") => ReportFormat::Json,
            _ => ReportFormat::Csv,
        }
    }
}

pub const RAW_HEADER: &str =
    "repeat,seed,label,variant,status,nodes,utilization,train_rmse,test_rmse,time_ms,n_train,n_test";
pub const AGGREGATE_HEADER: &str = "label,variant,repeats,base_seed,runs,mean_time_ms,std_time_ms,mean_train_rmse,std_train_rmse,mean_test_rmse,std_test_rmse,mean_nodes,mean_utilization,n_reached_tol,n_node_budget,n_stalled,n_failed,valid";

impl BenchReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        if !self.rows.is_empty() {
            out.push_str(RAW_HEADER);
            out.push('\n');
            for r in &self.rows {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{},{},{},{},{},{}",
                    r.repeat,
                    r.seed,
                    r.label,
                    r.variant,
                    r.status.name(),
                    r.nodes,
                    r.utilization,
                    r.train_rmse,
                    r.test_rmse,
                    r.time_ms,
                    r.n_train,
                    r.n_test
                );
            }
            out.push('\n');
        }
        out.push_str(AGGREGATE_HEADER);
        out.push('\n');
        for a in &self.aggregates {
            let n = |s: RunStatus| a.status.get(&s).copied().unwrap_or(0);
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                a.label,
                a.variant,
                self.repeats,
                self.base_seed,
                a.runs,
                a.mean_time_ms,
                a.std_time_ms,
                a.mean_train_rmse,
                a.std_train_rmse,
                a.mean_test_rmse,
                a.std_test_rmse,
                a.mean_nodes,
                a.mean_utilization,
                n(RunStatus::ReachedTol),
                n(RunStatus::NodeBudget),
                n(RunStatus::Stalled),
                n(RunStatus::Failed),
                a.valid
            );
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<BenchReport> {
        serde_json::from_str(text).map_err(|e| Error::Malformed(format!("report json: {e}")))
    }

    /// Parses [`BenchReport::to_csv`] output.
    pub fn parse_csv(text: &str) -> Result<BenchReport> {
        let lines: Vec<&str> = text.lines().collect();
        let agg_at = lines
            .iter()
            .position(|l| *l == AGGREGATE_HEADER)
            .ok_or_else(|| Error::Malformed("report has no aggregate table".into()))?;
        let mut rows = Vec::new();
        if agg_at > 0 {
            if lines[0] != RAW_HEADER {
                return Err(Error::Malformed("raw table header mismatch".into()));
            }
            for (i, line) in lines[1..agg_at].iter().enumerate() {
                if line.is_empty() {
                    continue;
                }
                let c = Cells::new(line, 12, i + 2)?;
                rows.push(RawRow {
                    repeat: c.parse(0)?,
                    seed: c.parse(1)?,
                    label: c.cells[2].to_string(),
                    variant: c.parse(3)?,
                    status: RunStatus::parse(c.cells[4])?,
                    nodes: c.parse(5)?,
                    utilization: c.parse(6)?,
                    train_rmse: c.parse(7)?,
                    test_rmse: c.parse(8)?,
                    time_ms: c.parse(9)?,
                    n_train: c.parse(10)?,
                    n_test: c.parse(11)?,
                });
            }
        }
        let mut aggregates = Vec::new();
        let mut repeats = 0;
        let mut base_seed = 0;
        for (i, line) in lines[agg_at + 1..].iter().enumerate() {
            if line.is_empty() {
                continue;
            }
            let c = Cells::new(line, 18, agg_at + i + 2)?;
            repeats = c.parse(2)?;
            base_seed = c.parse(3)?;
            let status = RunStatus::ALL
                .into_iter()
                .zip(13..17)
                .map(|(s, k)| Ok((s, c.parse(k)?)))
                .collect::<Result<_>>()?;
            aggregates.push(Aggregate {
                label: c.cells[0].to_string(),
                variant: c.parse(1)?,
                runs: c.parse(4)?,
                mean_time_ms: c.parse(5)?,
                std_time_ms: c.parse(6)?,
                mean_train_rmse: c.parse(7)?,
                std_train_rmse: c.parse(8)?,
                mean_test_rmse: c.parse(9)?,
                std_test_rmse: c.parse(10)?,
                mean_nodes: c.parse(11)?,
                mean_utilization: c.parse(12)?,
                status,
                valid: c.parse(17)?,
            });
        }
        Ok(BenchReport {
            repeats,
            base_seed,
            rows,
            aggregates,
        })
    }

    pub fn emit(&self, format: ReportFormat, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = match format {
            ReportFormat::Csv => self.to_csv(),
            ReportFormat::Json => self.to_json(),
        };
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Human-readable table: time, train RMSE, test RMSE, nodes, utilization.
    pub fn summary_table(&self) -> String {
        let mut out = format!(
            "{:<16} {:>14} {:>22} {:>22} {:>8} {:>11}\n",
            "variant", "time_ms", "train_rmse", "test_rmse", "nodes", "utilization"
        );
        for a in &self.aggregates {
            let _ = writeln!(
                out,
                "{:<16} {:>14} {:>22} {:>22} {:>8.2} {:>11.4}",
                a.label,
                format!("{:.2}", a.mean_time_ms),
                format!("{:.3e}±{:.1e}", a.mean_train_rmse, a.std_train_rmse),
                format!("{:.3e}±{:.1e}", a.mean_test_rmse, a.std_test_rmse),
                a.mean_nodes,
                a.mean_utilization
            );
        }
        out
    }
}

/// Writes `report` to `path` in `format`.
pub fn emit_report(
    report: &BenchReport,
    format: ReportFormat,
    path: impl AsRef<Path>,
) -> Result<()> {
    report.emit(format, path)
}

struct Cells<'a> {
    cells: Vec<&'a str>,
    row: usize,
}

impl<'a> Cells<'a> {
    fn new(line: &'a str, expected: usize, row: usize) -> Result<Self> {
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != expected {
            return Err(Error::Malformed(format!(
                "report row {row} has {} fields, expected {expected}",
                cells.len()
            )));
        }
        Ok(Cells { cells, row })
    }

    fn parse<T: std::str::FromStr>(&self, k: usize) -> Result<T> {
        self.cells[k]
            .parse()
            .map_err(|_| Error::Malformed(format!("report row {}, column {}", self.row, k + 1)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec(repeats: usize) -> ExperimentSpec {
        let mut variants = Vec::new();
        for v in Variant::ALL {
            let scopes = if v == Variant::CfnRw {
                "150"
            } else {
                "150:10:200"
            };
            let mut c = TrainConfig::new(v, scopes.parse().unwrap());
            c.l_max = 12;
            c.tol = 1e-6;
            variants.push(c.into());
        }
        ExperimentSpec {
            dataset: DatasetSource::Function {
                n: 120,
                sampling: Sampling::Uniform,
            },
            train_fraction: 0.75,
            base_seed: 5,
            repeats,
            variants,
            record_timing: false,
        }
    }

    #[test]
    fn rmse_examples() {
        let m = |v: &[f64]| Matrix::new(v.len(), 1, v.to_vec()).unwrap();
        assert_eq!(rmse(&m(&[1.0, 2.0]), &m(&[1.0, 2.0])).unwrap(), 0.0);
        assert_eq!(rmse(&m(&[1.0, 1.0]), &m(&[0.0, 0.0])).unwrap(), 1.0);
        let r = rmse(&m(&[3.0, 0.0]), &m(&[0.0, 4.0])).unwrap();
        assert!((r - 3.5355339059327378).abs() < 1e-15);
        assert!(rmse(&m(&[1.0]), &m(&[1.0, 2.0])).is_err());
    }

    #[test]
    fn utilization_examples() {
        assert_eq!(node_utilization(200, 200).unwrap(), 1.0);
        assert_eq!(node_utilization(0, 100).unwrap(), 0.0);
        assert_eq!(node_utilization(41, 200).unwrap(), 0.205);
        assert!(node_utilization(5, 4).is_err());
        assert!(node_utilization(0, 0).is_err());
    }

    #[test]
    fn single_repeat_has_zero_spread() {
        let report = run_experiment(&small_spec(1), 1).unwrap();
        assert_eq!(report.rows.len(), 3);
        for (a, r) in report.aggregates.iter().zip(&report.rows) {
            assert_eq!(a.mean_train_rmse, r.train_rmse);
            assert_eq!(a.mean_test_rmse, r.test_rmse);
            assert_eq!(a.mean_nodes, r.nodes as f64);
            assert_eq!(
                (a.std_train_rmse, a.std_test_rmse, a.std_time_ms),
                (0.0, 0.0, 0.0)
            );
        }
    }

    #[test]
    fn aggregates_match_recomputation() {
        let report = run_experiment(&small_spec(4), 1).unwrap();
        for a in &report.aggregates {
            let rows: Vec<&RawRow> = report.rows.iter().filter(|r| r.label == a.label).collect();
            assert_eq!(rows.len(), 4);
            let n = rows.len() as f64;
            let mean = rows.iter().map(|r| r.test_rmse).sum::<f64>() / n;
            let var = rows
                .iter()
                .map(|r| (r.test_rmse - mean).powi(2))
                .sum::<f64>()
                / n;
            assert!((a.mean_test_rmse - mean).abs() <= 1e-12);
            assert!((a.std_test_rmse - var.sqrt()).abs() <= 1e-12);
            assert_eq!(a.status.values().sum::<usize>(), 4);
        }
    }

    #[test]
    fn parallel_matches_sequential() {
        let spec = small_spec(4);
        assert_eq!(
            run_experiment(&spec, 1).unwrap(),
            run_experiment(&spec, 3).unwrap()
        );
    }

    #[test]
    fn timing_recorded_when_asked() {
        let mut spec = small_spec(1);
        spec.record_timing = true;
        let report = run_experiment(&spec, 1).unwrap();
        for a in &report.aggregates {
            assert!(a.mean_time_ms > 0.0);
        }
    }

    #[test]
    fn report_round_trips() {
        let report = run_experiment(&small_spec(2), 1).unwrap();
        let csv = report.to_csv();
        assert_eq!(BenchReport::parse_csv(&csv).unwrap(), report);
        assert_eq!(BenchReport::from_json(&report.to_json()).unwrap(), report);
        let lines: Vec<&str> = csv.lines().collect();
        let blank = lines.iter().position(|l| l.is_empty()).unwrap();
        let raw_cols = lines[0].split(',').count();
        assert!(lines[..blank]
            .iter()
            .all(|l| l.split(',').count() == raw_cols));
        let agg_cols = lines[blank + 1].split(',').count();
        assert!(lines[blank + 1..]
            .iter()
            .all(|l| l.split(',').count() == agg_cols));
    }

    #[test]
    fn empty_report_has_only_aggregates() {
        let report = BenchReport {
            repeats: 0,
            base_seed: 0,
            rows: Vec::new(),
            aggregates: aggregate(&[], &[("x".into(), Variant::LightGcnetI)]),
        };
        let csv = report.to_csv();
        assert!(csv.starts_with(AGGREGATE_HEADER));
        assert!(csv.trim_end().ends_with(",false"));
        assert_eq!(BenchReport::parse_csv(&csv).unwrap(), report);
    }

    #[test]
    fn spec_json() {
        let spec = small_spec(3);
        assert_eq!(ExperimentSpec::from_json(&spec.to_json()).unwrap(), spec);
        let text = r#"{
            "dataset": {"kind": "grinding", "n": 50},
            "train_fraction": 0.8,
            "repeats": 2,
            "variants": [
                {"label": "II", "variant": "lightgcnet2", "t_max": 5, "l_max": 10,
                 "tol": 0.01, "scopes": "0.5:0.5:5"}
            ]
        }"#;
        let s = ExperimentSpec::from_json(text).unwrap();
        assert_eq!(s.variants[0].label(), "II");
        assert!(s.record_timing);
        assert_eq!(s.variants[0].config.scopes.len(), 10);
        let typo = text.replace("\"t_max\"", "\"tmax\"");
        assert!(ExperimentSpec::from_json(&typo).is_err());
        let zero = text.replace("\"repeats\": 2", "\"repeats\": 0");
        assert!(ExperimentSpec::from_json(&zero).is_err());
        match ExperimentSpec::from_json("{\n \"dataset\": ,}") {
            Err(Error::Malformed(m)) => assert!(m.contains("line 2"), "{m}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn repeat_seeds_differ() {
        let seeds: std::collections::HashSet<u64> = (0..100).map(|r| repeat_seed(7, r)).collect();
        assert_eq!(seeds.len(), 100);
        assert_eq!(repeat_seed(7, 3), repeat_seed(7, 3));
    }
}
