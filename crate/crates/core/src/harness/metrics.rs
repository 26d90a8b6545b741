//! Trace CSVs and the run manifest.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::harness::experiment::ExperimentOutput;
use crate::trainer::{TraceRecord, TrainingTrace};

pub const MANIFEST_FILE: &str = "manifest.toml";

/// Header `scheme,iteration,sim_clock_s,test_accuracy`, one row per update.
pub fn write_trace_csv(trace: &TrainingTrace, path: &Path) -> Result<()> {
    let csv_err = |e: csv::Error| Error::io(path, e.into());
    // header written by hand so an empty trace still gets one
    let mut writer = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(csv_err)?;
    writer
        .write_record(["scheme", "iteration", "sim_clock_s", "test_accuracy"])
        .map_err(csv_err)?;
    for record in &trace.records {
        writer.serialize(record).map_err(csv_err)?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

pub fn read_trace_csv(path: &Path) -> Result<TrainingTrace> {
    let csv_err = |e: csv::Error| Error::io(path, e.into());
    let mut reader = csv::Reader::from_path(path).map_err(csv_err)?;
    let records = reader
        .deserialize()
        .collect::<std::result::Result<Vec<TraceRecord>, _>>()
        .map_err(csv_err)?;
    let scheme = records.first().map(|r| r.scheme.clone()).unwrap_or_default();
    Ok(TrainingTrace { scheme, records })
}

fn write_json<T: serde::Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::io(path, e.into()))?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes `trace_<scheme>.csv` per trace, the manifest (the resolved
/// config, loadable as a config file), and allocation and privacy JSON
/// when present. Returns the written paths.
pub fn write_metrics(output: &ExperimentOutput, out_dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::new();
    for trace in &output.traces {
        let path = out_dir.join(format!("trace_{}.csv", trace.scheme));
        write_trace_csv(trace, &path)?;
        written.push(path);
    }

    let mut config = output.config.clone();
    if let Ok(abs) = std::fs::canonicalize(&config.dataset_dir) {
        config.dataset_dir = abs;
    }
    let path = out_dir.join(MANIFEST_FILE);
    std::fs::write(&path, config.to_toml_string()?).map_err(|e| Error::io(&path, e))?;
    written.push(path);

    if let Some(allocation) = &output.allocation {
        let path = out_dir.join("allocation.json");
        write_json(allocation, &path)?;
        written.push(path);
    }
    if !output.privacy.is_empty() {
        let path = out_dir.join("privacy.json");
        write_json(&output.privacy, &path)?;
        written.push(path);
    }
    Ok(written)
}
