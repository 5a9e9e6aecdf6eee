//! Writing results to disk: CSV tables, SVG charts and a JSON summary.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use lspsim_core::metrics::Table;
use serde::Serialize;

use crate::result::ExperimentResult;

#[derive(Debug, thiserror::Error)]
pub enum OutputError {
    #[error("output directory {path}: {source}")]
    Dir { path: PathBuf, source: io::Error },
    #[error("writing {path}: {source}")]
    Write { path: PathBuf, source: io::Error },
    #[error("csv {path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
}

/// Creates `dir` and proves it writable. Called before any simulation.
pub fn prepare_dir(dir: &Path) -> Result<(), OutputError> {
    let err = |source| OutputError::Dir {
        path: dir.to_path_buf(),
        source,
    };
    fs::create_dir_all(dir).map_err(err)?;
    let probe = dir.join(".write-probe");
    fs::write(&probe, b"").map_err(err)?;
    fs::remove_file(&probe).map_err(err)
}

pub fn table_to_csv(t: &Table) -> Result<String, csv::Error> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::CRLF)
        .from_writer(Vec::new());
    w.write_record(&t.header)?;
    for row in &t.rows {
        w.write_record(row)?;
    }
    let bytes = w.into_inner().map_err(|e| csv::Error::from(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("cells are utf-8"))
}

pub fn csv_to_table(name: &str, text: &str) -> Result<Table, csv::Error> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        rows.push(rec?.iter().map(str::to_string).collect());
    }
    Ok(Table {
        name: name.to_string(),
        header,
        rows,
    })
}

pub fn write_table(dir: &Path, t: &Table) -> Result<PathBuf, OutputError> {
    let path = dir.join(format!("{}.csv", t.name));
    let text = table_to_csv(t).map_err(|source| OutputError::Csv {
        path: path.clone(),
        source,
    })?;
    fs::write(&path, text).map_err(|source| OutputError::Write {
        path: path.clone(),
        source,
    })?;
    Ok(path)
}

#[derive(Serialize)]
struct Summary<'a> {
    #[serde(flatten)]
    result: &'a ExperimentResult,
    passed: bool,
    files: Vec<String>,
}

/// Writes every table, the ratio and check tables, every chart and
/// `<id>_summary.json`. Returns the paths written, in order.
pub fn emit_outputs(result: &ExperimentResult, dir: &Path) -> Result<Vec<PathBuf>, OutputError> {
    prepare_dir(dir)?;
    let mut written = Vec::new();
    let extra = [result.ratio_table(), result.check_table()];
    for t in result.tables.iter().chain(extra.iter()) {
        written.push(write_table(dir, t)?);
    }
    for c in &result.charts {
        let path = dir.join(format!("{}.svg", c.name));
        fs::write(&path, c.to_svg()).map_err(|source| OutputError::Write {
            path: path.clone(),
            source,
        })?;
        written.push(path);
    }
    let path = dir.join(format!("{}_summary.json", result.id));
    let files = written
        .iter()
        .filter_map(|p| p.file_name().map(|f| f.to_string_lossy().into_owned()))
        .collect();
    let summary = Summary {
        result,
        passed: result.passed(),
        files,
    };
    let mut json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    json.push('\n');
    fs::write(&path, json).map_err(|source| OutputError::Write {
        path: path.clone(),
        source,
    })?;
    written.push(path);
    Ok(written)
}
