//! CSV output for evaluations, comparisons and training logs.

use std::fmt;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::harness::{EvalResult, TraceQoe, TrainReport};
use crate::qoe::QoeBreakdown;
use crate::{Error, Result};

pub const EVAL_HEADER: [&str; 6] = [
    "trace_id",
    "total",
    "quality_sum",
    "rebuffer_penalty_sum",
    "smoothness_penalty_sum",
    "chunks",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    /// Per-trace QoE breakdown.
    Csv,
    /// Empirical CDF of per-trace QoE.
    Cdf,
    /// Mean QoE components per algorithm.
    Components,
}

impl ReportFormat {
    pub const ALL: [ReportFormat; 3] = [
        ReportFormat::Csv,
        ReportFormat::Cdf,
        ReportFormat::Components,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ReportFormat::Csv => "csv",
            ReportFormat::Cdf => "cdf",
            ReportFormat::Components => "components",
        }
    }
}

impl fmt::Display for ReportFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ReportFormat::ALL
            .into_iter()
            .find(|f| f.as_str() == s.trim())
            .ok_or_else(|| Error::InvalidArgument(format!("unknown report format {s:?}")))
    }
}

fn num(x: f64) -> String {
    format!("{x:?}")
}

pub fn write_eval_csv<W: Write>(result: &EvalResult, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(EVAL_HEADER)?;
    for t in &result.per_trace {
        let b = &t.breakdown;
        w.write_record([
            t.trace_id.clone(),
            num(b.total),
            num(b.quality_sum),
            num(b.rebuffer_penalty_sum),
            num(b.smoothness_penalty_sum),
            b.chunks.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

/// Parses a file written by [`write_eval_csv`].
pub fn read_eval_csv<R: Read>(label: &str, input: R) -> Result<EvalResult> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.clone();
    if header.iter().ne(EVAL_HEADER) {
        return Err(Error::Parse {
            path: label.into(),
            line: 1,
            msg: format!("unexpected header {:?}", header.iter().collect::<Vec<_>>()),
        });
    }
    let mut per_trace = Vec::new();
    for (i, record) in r.records().enumerate() {
        let record = record?;
        let line = i + 2;
        let field = |k: usize| -> Result<f64> {
            record[k].parse().map_err(|_| Error::Parse {
                path: label.into(),
                line,
                msg: format!("bad {} value {:?}", EVAL_HEADER[k], &record[k]),
            })
        };
        per_trace.push(TraceQoe {
            trace_id: record[0].to_string(),
            breakdown: QoeBreakdown {
                total: field(1)?,
                quality_sum: field(2)?,
                rebuffer_penalty_sum: field(3)?,
                smoothness_penalty_sum: field(4)?,
                chunks: record[5].parse().map_err(|_| Error::Parse {
                    path: label.into(),
                    line,
                    msg: format!("bad chunks value {:?}", &record[5]),
                })?,
            },
        });
    }
    EvalResult::from_traces(label, per_trace)
}

/// `(value, cumulative fraction)` pairs of the empirical CDF.
pub fn cdf_points(values: &[f64]) -> Vec<(f64, f64)> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    sorted
        .into_iter()
        .enumerate()
        .map(|(i, v)| (v, (i + 1) as f64 / n))
        .collect()
}

pub fn write_cdf_csv<W: Write>(results: &[EvalResult], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["algorithm", "qoe", "cumulative_fraction"])?;
    for result in results {
        for (v, f) in cdf_points(&result.totals()) {
            w.write_record([result.label.clone(), num(v), num(f)])?;
        }
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

/// Mean of each QoE term over the traces of one result.
pub fn mean_components(result: &EvalResult) -> QoeBreakdown {
    let n = result.per_trace.len().max(1) as f64;
    let sum = result
        .per_trace
        .iter()
        .fold(QoeBreakdown::default(), |acc, t| acc.merge(&t.breakdown));
    QoeBreakdown {
        total: sum.total / n,
        quality_sum: sum.quality_sum / n,
        rebuffer_penalty_sum: sum.rebuffer_penalty_sum / n,
        smoothness_penalty_sum: sum.smoothness_penalty_sum / n,
        chunks: sum.chunks,
    }
}

pub fn write_components_csv<W: Write>(results: &[EvalResult], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "algorithm",
        "mean_total",
        "mean_quality",
        "mean_rebuffer_penalty",
        "mean_smoothness_penalty",
    ])?;
    for result in results {
        let m = mean_components(result);
        w.write_record([
            result.label.clone(),
            num(m.total),
            num(m.quality_sum),
            num(m.rebuffer_penalty_sum),
            num(m.smoothness_penalty_sum),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

fn create(path: &Path) -> Result<fs::File> {
    fs::File::create(path).map_err(|e| Error::io(path, e))
}

/// Writes `format` for `results` under `out_dir`, returning the files made.
/// The per-trace format yields one `<label>.csv` per result.
pub fn emit_report(
    results: &[EvalResult],
    format: ReportFormat,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    match format {
        ReportFormat::Csv => results
            .iter()
            .map(|r| {
                let path = out_dir.join(format!("{}.csv", r.label));
                write_eval_csv(r, create(&path)?)?;
                Ok(path)
            })
            .collect(),
        ReportFormat::Cdf => {
            let path = out_dir.join("cdf.csv");
            write_cdf_csv(results, create(&path)?)?;
            Ok(vec![path])
        }
        ReportFormat::Components => {
            let path = out_dir.join("components.csv");
            write_components_csv(results, create(&path)?)?;
            Ok(vec![path])
        }
    }
}

/// One cell of an algorithm × QoE variant × loss sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct CompareCell {
    pub algorithm: String,
    pub variant: String,
    pub loss: f64,
    pub result: EvalResult,
}

/// Mean-QoE grid with one row per algorithm and one column per distinct
/// `column(cell)` label, both in first-seen order. Missing cells are empty.
fn write_grid<W: Write>(
    cells: &[&CompareCell],
    column: impl Fn(&CompareCell) -> String,
    out: W,
) -> Result<()> {
    let mut columns: Vec<String> = Vec::new();
    let mut rows: Vec<&str> = Vec::new();
    for c in cells {
        let label = column(c);
        if !columns.contains(&label) {
            columns.push(label);
        }
        if !rows.contains(&c.algorithm.as_str()) {
            rows.push(&c.algorithm);
        }
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(std::iter::once("algorithm").chain(columns.iter().map(String::as_str)))?;
    for algo in rows {
        let mut record = vec![algo.to_string()];
        for label in &columns {
            let cell = cells
                .iter()
                .find(|c| c.algorithm == algo && column(c) == *label);
            record.push(cell.map_or_else(String::new, |c| num(c.result.summary.mean)));
        }
        w.write_record(&record)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

/// One row per algorithm, one mean-QoE column per `variant@loss`.
pub fn write_compare_summary<W: Write>(cells: &[CompareCell], out: W) -> Result<()> {
    let cells: Vec<&CompareCell> = cells.iter().collect();
    write_grid(&cells, |c| format!("{}@{}", c.variant, c.loss), out)
}

/// Rows = algorithms, columns = loss levels, for a single QoE variant.
pub fn write_variant_grid<W: Write>(cells: &[CompareCell], variant: &str, out: W) -> Result<()> {
    let cells: Vec<&CompareCell> = cells.iter().filter(|c| c.variant == variant).collect();
    write_grid(&cells, |c| c.loss.to_string(), out)
}

/// Writes `summary.csv` plus a `<variant>.csv` grid per QoE variant.
pub fn emit_compare(cells: &[CompareCell], out_dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let summary = out_dir.join("summary.csv");
    write_compare_summary(cells, create(&summary)?)?;
    let mut paths = vec![summary];
    let mut variants: Vec<&str> = Vec::new();
    for c in cells {
        if !variants.contains(&c.variant.as_str()) {
            variants.push(&c.variant);
        }
    }
    for variant in variants {
        let path = out_dir.join(format!("{variant}.csv"));
        write_variant_grid(cells, variant, create(&path)?)?;
        paths.push(path);
    }
    Ok(paths)
}

pub fn write_train_epochs<W: Write>(report: &TrainReport, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "epoch",
        "episode_reward",
        "max_reward_so_far",
        "beta",
        "policy_lag",
        "actor",
    ])?;
    for e in &report.epochs {
        w.write_record([
            e.epoch.to_string(),
            num(e.episode_reward),
            num(e.max_reward_so_far),
            num(e.beta),
            e.policy_lag.to_string(),
            e.actor.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

pub fn write_train_validations<W: Write>(report: &TrainReport, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["epoch", "mean_qoe", "best_so_far"])?;
    for v in &report.validations {
        w.write_record([v.epoch.to_string(), num(v.mean_qoe), num(v.best_so_far)])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}
