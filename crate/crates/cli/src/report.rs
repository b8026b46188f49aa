//! On-disk layout of one experiment run:
//!
//! ```text
//! <out>/report.txt            human-readable report with the resolved config
//! <out>/report.json           structured report: kind, seed, config, results
//! <out>/metrics.txt, .json    accuracy and AUC summaries per detector
//! <out>/config.resolved.toml  the config with every default filled in
//! <out>/series/<name>.csv     plot-ready tables
//! <out>/timing.json           wall-clock seconds (the only nondeterministic file)
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde_json::json;

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};
use crate::experiments::{Artifacts, Series};
use crate::metrics::MetricsReport;

/// The config as it is embedded in reports: output location stripped, so a
/// rerun from the emitted file into another directory writes identical bytes.
pub fn provenance_config(cfg: &ExperimentConfig) -> ExperimentConfig {
    let mut c = cfg.clone();
    c.out_dir = None;
    c
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| CliError::io(format!("{}: {e}", path.display())))
}

pub fn write_series(s: &Series, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
    let io = |e: csv::Error| CliError::io(format!("{}: {e}", path.display()));
    w.write_record(&s.header).map_err(io)?;
    for row in &s.rows {
        w.write_record(row).map_err(io)?;
    }
    w.flush().map_err(|e| CliError::io(e.to_string()))
}

pub fn metrics_table(metrics: &[MetricsReport]) -> String {
    let mut out = format!(
        "{:<24} {:>16} {:>16} {:>16} {:>14} {:>6}\n",
        "method", "regime-on", "regime-off", "total", "auc", "runs"
    );
    for m in metrics {
        out.push_str(&format!(
            "{:<24} {:>16} {:>16} {:>16} {:>14} {:>6}\n",
            m.method,
            m.regime_on.display(true),
            m.regime_off.display(true),
            m.total.display(true),
            m.auc.display(false),
            m.runs.len()
        ));
    }
    out
}

fn pretty(v: &serde_json::Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("JSON values serialize");
    s.push('\n');
    s
}

/// Write every artifact under `dir` and return the files written.
pub fn write_artifacts(cfg: &ExperimentConfig, art: &Artifacts, dir: &Path) -> Result<Vec<PathBuf>> {
    let series_dir = dir.join("series");
    fs::create_dir_all(&series_dir).map_err(|e| CliError::io(format!("{}: {e}", series_dir.display())))?;
    let cfg = provenance_config(cfg);
    let toml = cfg.to_toml();
    let mut written = Vec::new();
    let mut put = |name: &str, contents: String| -> Result<()> {
        let p = dir.join(name);
        write(&p, &contents)?;
        written.push(p);
        Ok(())
    };

    put("config.resolved.toml", toml.clone())?;

    let mut text = art.text.join("\n");
    text.push_str("\n\n--- resolved config ---\n");
    text.push_str(&toml);
    put("report.txt", text)?;

    put(
        "report.json",
        pretty(&json!({
            "kind": art.kind,
            "seed": cfg.seed,
            "config": cfg,
            "results": art.results,
            "series": art.series.iter().map(|s| format!("series/{}.csv", s.name)).collect::<Vec<_>>(),
        })),
    )?;

    if !art.metrics.is_empty() {
        put("metrics.txt", metrics_table(&art.metrics))?;
        put("metrics.json", pretty(&json!({ "seed": cfg.seed, "metrics": art.metrics })))?;
    }
    put("timing.json", pretty(&json!(art.timing)))?;

    for s in &art.series {
        let p = series_dir.join(format!("{}.csv", s.name));
        write_series(s, &p)?;
        written.push(p);
    }
    Ok(written)
}
