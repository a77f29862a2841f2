//! Metrics CSV, summary table and JSON report files.

use std::path::Path;

use nnsam_core::metrics::{comparison_table, format_mean_std, MetricReport, SampleMetrics};

use crate::error::{io_err, Result};

pub const METRICS_CSV: &str = "metrics.csv";
pub const SUMMARY_TXT: &str = "summary.txt";
pub const REPORT_JSON: &str = "report.json";

pub fn write_metrics_csv(path: &Path, rows: &[SampleMetrics]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<SampleMetrics>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

/// Overall table plus one line per class.
pub fn summary_text(report: &MetricReport, method: &str) -> String {
    let mut out = comparison_table(&[(method, &report.overall)]);
    out.push('\n');
    for (class, s) in &report.per_class {
        out.push_str(&format!(
            "class {class}: DICE {} %, ASD {} mm ({} rows, {} undefined ASD)\n",
            format_mean_std(Some(s.mean_dice), Some(s.std_dice)),
            format_mean_std(s.mean_asd, s.std_asd),
            s.rows,
            s.undefined_asd
        ));
    }
    out
}

/// Writes `metrics.csv`, `summary.txt` and `report.json` into `dir`.
pub fn write_report(report: &MetricReport, dir: &Path, method: &str) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    write_metrics_csv(&dir.join(METRICS_CSV), &report.per_sample)?;
    let summary = dir.join(SUMMARY_TXT);
    std::fs::write(&summary, summary_text(report, method)).map_err(io_err(&summary))?;
    let json = dir.join(REPORT_JSON);
    std::fs::write(&json, serde_json::to_string_pretty(report)? + "\n").map_err(io_err(&json))?;
    Ok(())
}
