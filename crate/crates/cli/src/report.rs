//! Report types and their JSON, CSV and plot-script writers.
//!
//! All JSON reports serialize struct fields in declaration order, so the key
//! order is fixed, and floats use the shortest representation that parses
//! back to the same bits.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use ced_core::engine::RunStats;
use ced_core::observables::{BatchEstimate, GrowthReport, MassHistogram, RecordingPlan, TailFit};
use ced_core::oracle::SingleSiteLaw;
use ced_core::phase::bounds::BoundsEvaluation;
use ced_core::phase::{ClassifyBudget, CriticalEstimate, ScanTable, SearchConfig, Thresholds, Verdict};

pub const TOOL_NAME: &str = "ced";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("json error on {path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("csv error on {path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("malformed table {path}: {message}")]
    Malformed { path: PathBuf, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> ReportError + '_ {
    move |source| ReportError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> ReportError + '_ {
    move |source| ReportError::Csv {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolInfo {
    pub name: String,
    pub version: String,
}

impl ToolInfo {
    pub fn current() -> Self {
        ToolInfo {
            name: TOOL_NAME.into(),
            version: TOOL_VERSION.into(),
        }
    }
}

/// A value, or the reason it could not be computed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome<T> {
    Ok(T),
    Error(String),
}

impl<T> Outcome<T> {
    pub fn from_result<E: std::fmt::Display>(r: Result<T, E>) -> Self {
        match r {
            Ok(v) => Outcome::Ok(v),
            Err(e) => Outcome::Error(e.to_string()),
        }
    }

    pub fn ok(&self) -> Option<&T> {
        match self {
            Outcome::Ok(v) => Some(v),
            Outcome::Error(_) => None,
        }
    }
}

/// Everything needed to reproduce a run report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfigEcho {
    pub d: u32,
    #[serde(rename = "L")]
    pub l: u32,
    pub p: f64,
    pub q: f64,
    pub t_end: f64,
    pub seed: u64,
    pub replicas: usize,
    pub hop_convention: String,
    pub hop_rate: f64,
    pub plan: RecordingPlan,
    pub n_batches: usize,
    pub growth_threshold: f64,
    pub fit_lo: usize,
    pub fit_hi: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTotals {
    pub events: u64,
    pub hops: u64,
    pub evaporations: u64,
    pub deposits: u64,
    pub replicas: Vec<RunStats>,
}

impl RunTotals {
    pub fn from_runs(runs: &[RunStats]) -> Self {
        RunTotals {
            events: runs.iter().map(RunStats::events).sum(),
            hops: runs.iter().map(|r| r.hops).sum(),
            evaporations: runs.iter().map(|r| r.evaporations).sum(),
            deposits: runs.iter().map(|r| r.deposits).sum(),
            replicas: runs.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunObservables {
    /// Total post-burn-in time summed over replicas.
    pub sampled_time: f64,
    pub mean_site_mass: Outcome<f64>,
    pub mean_site_mass_ci: Outcome<BatchEstimate>,
    pub density: Outcome<f64>,
    pub density_ci: Outcome<BatchEstimate>,
    pub histogram: Outcome<MassHistogram>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub tool: ToolInfo,
    pub config: RunConfigEcho,
    pub stats: RunTotals,
    pub observables: RunObservables,
    pub tail_fit: Outcome<TailFit>,
    pub growth: Outcome<GrowthReport>,
}

/// Settings shared by classification outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifyEcho {
    pub d: u32,
    pub sizes: Vec<u32>,
    pub seed: u64,
    pub hop_convention: String,
    pub budget: ClassifyBudget,
    pub thresholds: Thresholds,
    pub plan: RecordingPlan,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanReport {
    pub tool: ToolInfo,
    pub hop_convention: String,
    pub table: ScanTable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalReport {
    pub tool: ToolInfo,
    pub config: ClassifyEcho,
    pub search: SearchConfig,
    pub estimates: Vec<CriticalEstimate>,
    /// Registry evaluation at each `q`, in the order of `estimates`.
    pub bounds: Vec<BoundsEvaluation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub tool: ToolInfo,
    pub d: u32,
    #[serde(rename = "L")]
    pub l: u32,
    pub p: f64,
    pub q: f64,
    pub m_max: u64,
    pub hop_convention: String,
    pub states: usize,
    /// Site-mass law `P(m)` for `m = 0..=m_max`.
    pub marginal: Vec<f64>,
    pub mean_site_mass: f64,
    pub cap_mass: f64,
    pub cap_mass_tolerance: f64,
    pub residual: f64,
    pub reliable: bool,
    /// Closed-form law for a single site, when it applies.
    pub closed_form: Option<SingleSiteLaw>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsReport {
    pub tool: ToolInfo,
    pub registry: Option<PathBuf>,
    pub entries: usize,
    pub evaluations: Vec<BoundsEvaluation>,
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report types serialize");
    s.push('\n');
    s
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<(), ReportError> {
    fs::write(path, to_json(value)).map_err(io_err(path))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, ReportError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|source| ReportError::Json {
        path: path.to_path_buf(),
        source,
    })
}

/// `<prefix><suffix>`, e.g. `out/run` + `.report.json`.
pub fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn file_name(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Shortest text that parses back to the same float.
fn num(x: f64) -> String {
    format!("{x:?}")
}

/// Writes `m,weight,prob` rows for `m = 0..=high_water`; header only when the
/// histogram is absent.
pub fn write_histogram_csv(hist: Option<&MassHistogram>, path: &Path) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(["m", "weight", "prob"]).map_err(csv_err(path))?;
    if let Some(h) = hist {
        for (m, (wt, pr)) in h.weights.iter().zip(&h.probs).enumerate() {
            w.write_record([m.to_string(), num(*wt), num(*pr)])
                .map_err(csv_err(path))?;
        }
    }
    w.flush().map_err(io_err(path))
}

pub fn read_histogram_csv(path: &Path) -> Result<MassHistogram, ReportError> {
    #[derive(Deserialize)]
    struct Row {
        m: usize,
        weight: f64,
        prob: f64,
    }
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let mut weights = Vec::new();
    let mut probs = Vec::new();
    for (i, row) in r.deserialize::<Row>().enumerate() {
        let row = row.map_err(csv_err(path))?;
        if row.m != i {
            return Err(ReportError::Malformed {
                path: path.to_path_buf(),
                message: format!("row {i} has m = {}", row.m),
            });
        }
        weights.push(row.weight);
        probs.push(row.prob);
    }
    Ok(MassHistogram { weights, probs })
}

/// One line of a scan-style table.
#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    pub p: f64,
    pub q: f64,
    pub verdict: Verdict,
    pub mean_masses: Vec<Option<f64>>,
    pub interval: Option<(f64, Option<f64>)>,
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

fn parse_opt(field: &str) -> Result<Option<f64>, String> {
    if field.is_empty() {
        Ok(None)
    } else {
        field
            .parse()
            .map(Some)
            .map_err(|e| format!("bad number `{field}`: {e}"))
    }
}

/// Writes `p,q,verdict,mbar_L<side>...,interval_lo,interval_hi`.
pub fn write_table_csv(sizes: &[u32], rows: &[TableRow], path: &Path) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    let mut header = vec!["p".to_string(), "q".into(), "verdict".into()];
    header.extend(sizes.iter().map(|l| format!("mbar_L{l}")));
    header.extend(["interval_lo".into(), "interval_hi".into()]);
    w.write_record(&header).map_err(csv_err(path))?;
    for row in rows {
        let mut rec = vec![num(row.p), num(row.q), row.verdict.as_str().to_string()];
        for i in 0..sizes.len() {
            rec.push(opt(row.mean_masses.get(i).copied().flatten()));
        }
        rec.push(opt(row.interval.map(|i| i.0)));
        rec.push(opt(row.interval.and_then(|i| i.1)));
        w.write_record(&rec).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Reads a table written by [`write_table_csv`]; returns the sizes and rows.
pub fn read_table_csv(path: &Path) -> Result<(Vec<u32>, Vec<TableRow>), ReportError> {
    let malformed = |message: String| ReportError::Malformed {
        path: path.to_path_buf(),
        message,
    };
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let header = r.headers().map_err(csv_err(path))?.clone();
    let n = header.len();
    if n < 5 || &header[0] != "p" || &header[1] != "q" || &header[2] != "verdict" {
        return Err(malformed("unexpected header".into()));
    }
    let sizes = (3..n - 2)
        .map(|i| {
            header[i]
                .strip_prefix("mbar_L")
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| malformed(format!("bad column `{}`", &header[i])))
        })
        .collect::<Result<Vec<u32>, _>>()?;
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err(path))?;
        let num = |i: usize| parse_opt(&rec[i]).map_err(&malformed);
        let p = num(0)?.ok_or_else(|| malformed("missing p".into()))?;
        let q = num(1)?.ok_or_else(|| malformed("missing q".into()))?;
        let verdict = rec[2].parse().map_err(&malformed)?;
        let mean_masses = (3..n - 2).map(num).collect::<Result<_, _>>()?;
        let interval = num(n - 2)?.map(|lo| num(n - 1).map(|hi| (lo, hi))).transpose()?;
        rows.push(TableRow {
            p,
            q,
            verdict,
            mean_masses,
            interval,
        });
    }
    Ok((sizes, rows))
}

pub fn histogram_plot(csv_path: &Path) -> String {
    format!(
        "# Stationary site-mass law, log scale.\n\
         set datafile separator \",\"\n\
         set logscale y\n\
         set xlabel \"m\"\n\
         set ylabel \"P(m)\"\n\
         plot \"{}\" using 1:3 skip 1 with linespoints title \"P(m)\"\n",
        file_name(csv_path)
    )
}

pub fn table_plot(csv_path: &Path) -> String {
    let name = file_name(csv_path);
    format!(
        "# Classified points in the (q, p) plane.\n\
         set datafile separator \",\"\n\
         set xlabel \"q\"\n\
         set ylabel \"p\"\n\
         plot \"{name}\" using 2:(strcol(3) eq \"Growing\" ? $1 : NaN) skip 1 with points pt 7 title \"Growing\", \\\n\
         \x20    \"{name}\" using 2:(strcol(3) eq \"Exponential\" ? $1 : NaN) skip 1 with points pt 5 title \"Exponential\", \\\n\
         \x20    \"{name}\" using 2:(strcol(3) eq \"Undecided\" ? $1 : NaN) skip 1 with points pt 6 title \"Undecided\"\n"
    )
}

pub fn write_text(text: &str, path: &Path) -> Result<(), ReportError> {
    fs::write(path, text).map_err(io_err(path))
}

/// Writes `<prefix>.report.json`, `<prefix>.hist.csv` and `<prefix>.plot`.
pub fn write_report(report: &RunReport, prefix: &Path) -> Result<Vec<PathBuf>, ReportError> {
    let json = with_suffix(prefix, ".report.json");
    let csv = with_suffix(prefix, ".hist.csv");
    let plot = with_suffix(prefix, ".plot");
    write_json(report, &json)?;
    write_histogram_csv(report.observables.histogram.ok(), &csv)?;
    write_text(&histogram_plot(&csv), &plot)?;
    Ok(vec![json, csv, plot])
}

pub fn scan_rows(table: &ScanTable) -> Vec<TableRow> {
    table
        .rows
        .iter()
        .map(|r| TableRow {
            p: r.p,
            q: r.q,
            verdict: r.verdict,
            mean_masses: r.mean_masses.clone(),
            interval: r.interval,
        })
        .collect()
}

/// Writes `<prefix>.scan.json`, `<prefix>.scan.csv` and `<prefix>.plot`.
pub fn write_scan(report: &ScanReport, prefix: &Path) -> Result<Vec<PathBuf>, ReportError> {
    let json = with_suffix(prefix, ".scan.json");
    let csv = with_suffix(prefix, ".scan.csv");
    let plot = with_suffix(prefix, ".plot");
    write_json(report, &json)?;
    write_table_csv(&report.table.sizes, &scan_rows(&report.table), &csv)?;
    write_text(&table_plot(&csv), &plot)?;
    Ok(vec![json, csv, plot])
}

/// Every probe of every search, tagged with its search's final bracket.
pub fn critical_rows(report: &CriticalReport) -> Vec<TableRow> {
    report
        .estimates
        .iter()
        .flat_map(|est| {
            est.probes.iter().map(move |probe| TableRow {
                p: probe.p,
                q: est.q,
                verdict: probe.verdict,
                mean_masses: probe.mean_masses.clone(),
                interval: Some((est.p_lo, est.p_hi)),
            })
        })
        .collect()
}

/// Writes `<prefix>.critical.json`, `<prefix>.scan.csv` and `<prefix>.plot`.
pub fn write_critical(report: &CriticalReport, prefix: &Path) -> Result<Vec<PathBuf>, ReportError> {
    let json = with_suffix(prefix, ".critical.json");
    let csv = with_suffix(prefix, ".scan.csv");
    let plot = with_suffix(prefix, ".plot");
    write_json(report, &json)?;
    write_table_csv(&report.config.sizes, &critical_rows(report), &csv)?;
    write_text(&table_plot(&csv), &plot)?;
    Ok(vec![json, csv, plot])
}

pub fn write_oracle(report: &OracleReport, prefix: &Path) -> Result<Vec<PathBuf>, ReportError> {
    let json = with_suffix(prefix, ".oracle.json");
    write_json(report, &json)?;
    Ok(vec![json])
}

pub fn write_bounds(report: &BoundsReport, prefix: &Path) -> Result<Vec<PathBuf>, ReportError> {
    let json = with_suffix(prefix, ".bounds.json");
    write_json(report, &json)?;
    Ok(vec![json])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn histogram_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("h.csv");
        let hist = MassHistogram::from_weights(vec![3.5, 1.25, 0.1 + 0.2, 0.0, 1e-300]);
        write_histogram_csv(Some(&hist), &path).unwrap();
        let back = read_histogram_csv(&path).unwrap();
        assert_eq!(back, hist);
        let lines = fs::read_to_string(&path).unwrap().lines().count();
        assert_eq!(lines, hist.high_water() + 2);
    }

    #[test]
    fn table_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let rows = vec![
            TableRow {
                p: 0.1,
                q: 0.2,
                verdict: Verdict::Growing,
                mean_masses: vec![None, None],
                interval: None,
            },
            TableRow {
                p: 1.0 / 3.0,
                q: 0.2,
                verdict: Verdict::Undecided,
                mean_masses: vec![Some(0.5), Some(2.0 / 3.0)],
                interval: Some((0.2, None)),
            },
            TableRow {
                p: 5.0,
                q: 0.5,
                verdict: Verdict::Exponential,
                mean_masses: vec![Some(0.11), Some(0.12)],
                interval: Some((0.4, Some(0.45))),
            },
        ];
        write_table_csv(&[16, 32], &rows, &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("p,q,verdict,mbar_L16,mbar_L32,interval_lo,interval_hi\n"));
        let (sizes, back) = read_table_csv(&path).unwrap();
        assert_eq!(sizes, vec![16, 32]);
        assert_eq!(back, rows);
    }

    #[test]
    fn plot_uses_relative_name() {
        let script = histogram_plot(Path::new("/tmp/some/dir/run.hist.csv"));
        assert!(script.contains("\"run.hist.csv\""));
        assert!(!script.contains("/tmp"));
    }

    #[test]
    fn outcome_serializes_as_tagged_value() {
        let ok: Outcome<f64> = Outcome::Ok(1.5);
        let err: Outcome<f64> = Outcome::Error("nope".into());
        assert_eq!(serde_json::to_string(&ok).unwrap(), r#"{"ok":1.5}"#);
        assert_eq!(serde_json::to_string(&err).unwrap(), r#"{"error":"nope"}"#);
    }
}
