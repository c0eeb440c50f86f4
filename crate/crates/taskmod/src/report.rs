//! CSV and plain-text outputs. Every file starts with a
//! `# config_hash=<hex>` comment line.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::ops::Range;
use std::path::Path;

use taskmod_core::eval::RetrievalReport;
use taskmod_core::train::EpochMetrics;
use taskmod_core::UcrLedger;

use crate::error::{AppError, AppResult};

fn open(path: &Path, hash: &str) -> AppResult<csv::Writer<BufWriter<File>>> {
    let file = File::create(path).map_err(|e| AppError::io(path, e))?;
    let mut w = BufWriter::new(file);
    writeln!(w, "# config_hash={hash}").map_err(|e| AppError::io(path, e))?;
    Ok(csv::Writer::from_writer(w))
}

fn finish(path: &Path, w: csv::Writer<BufWriter<File>>) -> AppResult<()> {
    let mut inner = w.into_inner().map_err(|e| AppError::io(path, e.into_error()))?;
    inner.flush().map_err(|e| AppError::io(path, e))
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

pub fn write_metrics(path: &Path, hash: &str, variant: &str, rows: &[EpochMetrics]) -> AppResult<()> {
    let mut w = open(path, hash)?;
    w.write_record(["epoch", "step", "variant", "task", "loss", "accuracy"])?;
    for m in rows {
        w.write_record([
            m.epoch.to_string(),
            m.step.to_string(),
            variant.to_string(),
            m.task.to_string(),
            m.loss.to_string(),
            opt(m.accuracy),
        ])?;
    }
    finish(path, w)
}

/// One row per unordered task pair per epoch; undefined ratios are empty.
pub fn write_ucr(path: &Path, hash: &str, ledger: &UcrLedger, epochs: &[Range<usize>]) -> AppResult<()> {
    let mut w = open(path, hash)?;
    w.write_record(["task_i", "task_j", "epoch", "ucr"])?;
    for (e, range) in epochs.iter().enumerate() {
        let m = ledger.report(range.clone())?;
        for (i, j, v) in m.pairs() {
            w.write_record([i.to_string(), j.to_string(), (e + 1).to_string(), opt(v)])?;
        }
    }
    finish(path, w)
}

pub fn write_report(path: &Path, hash: &str, report: &RetrievalReport) -> AppResult<()> {
    let mut w = open(path, hash)?;
    w.write_record(["variant", "task", "accuracy", "shared_params", "task_params"])?;
    for v in &report.variants {
        for t in 0..v.task_count() {
            w.write_record([
                v.label.clone(),
                t.to_string(),
                v.task_accuracy(t).0.to_string(),
                v.params.shared.to_string(),
                v.params.task_specific.to_string(),
            ])?;
        }
    }
    finish(path, w)
}

/// Final-epoch UCR of every variant and seed.
pub fn write_compare_ucr(path: &Path, hash: &str, report: &RetrievalReport, epoch: usize) -> AppResult<()> {
    let mut w = open(path, hash)?;
    w.write_record(["variant", "seed", "task_i", "task_j", "epoch", "ucr"])?;
    for v in &report.variants {
        for (seed, m) in v.seeds.iter().zip(&v.ucr) {
            for (i, j, u) in m.pairs() {
                w.write_record([
                    v.label.clone(),
                    seed.to_string(),
                    i.to_string(),
                    j.to_string(),
                    epoch.to_string(),
                    opt(u),
                ])?;
            }
        }
    }
    finish(path, w)
}

/// Accuracy and extra-parameter table followed by per-pair UCR.
pub fn summary_text(hash: &str, report: &RetrievalReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# config_hash={hash}");
    let tasks = report.variants.first().map_or(0, |v| v.task_count());
    let _ = write!(s, "{:<28}", "variant");
    for t in 0..tasks {
        let _ = write!(s, " {:>15}", format!("task{t}"));
    }
    let _ = writeln!(s, " {:>15} {:>12} {:>12} {:>9}", "mean", "shared", "extra", "mean UCR");
    for v in &report.variants {
        let _ = write!(s, "{:<28}", v.label);
        for t in 0..tasks {
            let (m, sd) = v.task_accuracy(t);
            let _ = write!(s, " {:>15}", format!("{:.2}±{:.2}", 100.0 * m, 100.0 * sd));
        }
        let (m, sd) = v.mean_accuracy();
        let ucr = v
            .mean_pair_ucr()
            .map_or("-".to_string(), |u| format!("{:.1}%", 100.0 * u));
        let _ = writeln!(
            s,
            " {:>15} {:>12} {:>12} {:>9}",
            format!("{:.2}±{:.2}", 100.0 * m, 100.0 * sd),
            v.params.shared,
            v.params.task_specific,
            ucr
        );
    }
    if tasks > 1 {
        let _ = writeln!(s, "\nfinal-epoch UCR by task pair");
        for v in &report.variants {
            if v.ucr.is_empty() {
                continue;
            }
            let _ = write!(s, "{:<28}", v.label);
            for i in 0..tasks {
                for j in i + 1..tasks {
                    let u = v
                        .pair_ucr(i, j)
                        .map_or("-".to_string(), |u| format!("{:.1}%", 100.0 * u));
                    let _ = write!(s, " ({i},{j}) {u}");
                }
            }
            let _ = writeln!(s);
        }
    }
    s
}
