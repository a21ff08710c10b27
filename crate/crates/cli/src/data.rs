use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rwbench::inference::Dataset;
use rwbench::io::sha256_hex;
use rwbench::model::{CountsBlock, WalkDistribution};

use crate::manifest::{read_input, CliError, CliResult, EXIT_DATA};

/// Loads every `*.json` counts block in `dir` (sorted by file name) and
/// rebins to `bins` cells unless `bins` is 0. Records input digests.
pub fn load_dataset(dir: &Path, bins: usize, inputs: &mut BTreeMap<String, String>) -> CliResult<Dataset> {
    let entries = fs::read_dir(dir).map_err(|e| CliError::data(format!("{}: {e}", dir.display())))?;
    let mut paths: Vec<_> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(CliError::data(format!("{}: no counts files", dir.display())));
    }
    let mut blocks = Vec::with_capacity(paths.len());
    for p in &paths {
        let bytes = read_input(p, EXIT_DATA)?;
        inputs.insert(p.display().to_string(), sha256_hex(&bytes));
        let block: CountsBlock =
            serde_json::from_slice(&bytes).map_err(|e| CliError::data(format!("{}: {e}", p.display())))?;
        blocks.push(if bins == 0 { block } else { block.rebin(bins)? });
    }
    Ok(Dataset::new(blocks)?)
}

/// An endpoint law read from disk: either a walk distribution or raw counts
/// (used through their empirical law).
pub struct Law {
    pub dist: WalkDistribution,
    pub counts: Option<CountsBlock>,
}

pub fn load_law(path: &Path, inputs: &mut BTreeMap<String, String>) -> CliResult<Law> {
    let bytes = read_input(path, EXIT_DATA)?;
    inputs.insert(path.display().to_string(), sha256_hex(&bytes));
    let bad = |e: serde_json::Error| CliError::data(format!("{}: {e}", path.display()));
    let value: serde_json::Value = serde_json::from_slice(&bytes).map_err(bad)?;
    if value.get("counts").is_some() {
        let block: CountsBlock = serde_json::from_value(value).map_err(bad)?;
        Ok(Law {
            dist: block.empirical()?,
            counts: Some(block),
        })
    } else {
        Ok(Law {
            dist: serde_json::from_value(value).map_err(bad)?,
            counts: None,
        })
    }
}

/// One column of a trace CSV (`n,P_plus,P_minus,x`).
pub fn load_trace_column(path: &Path, column: &str, inputs: &mut BTreeMap<String, String>) -> CliResult<Vec<f64>> {
    let bytes = read_input(path, EXIT_DATA)?;
    inputs.insert(path.display().to_string(), sha256_hex(&bytes));
    let text = String::from_utf8(bytes).map_err(|_| CliError::data(format!("{}: not UTF-8", path.display())))?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| CliError::data(format!("{}: empty file", path.display())))?;
    let col = header
        .split(',')
        .position(|h| h.trim() == column)
        .ok_or_else(|| CliError::data(format!("{}: no column {column:?}", path.display())))?;
    lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.split(',')
                .nth(col)
                .and_then(|v| v.trim().parse::<f64>().ok())
                .ok_or_else(|| CliError::data(format!("{}: bad value on line {}", path.display(), i + 2)))
        })
        .collect()
}
