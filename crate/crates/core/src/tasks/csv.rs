use std::fmt::Write as _;

use super::{Dataset, TaskInstance, TaskKind};
use crate::error::{Error, Result};

const MAGIC: &str = "# foldcore-dataset v1";

/// Writes the data set as CSV: a `#` manifest of dims and seed, a header row,
/// then one row per sample holding the features followed by the ground truth.
/// Values use the shortest representation that parses back to the same `f64`.
pub fn export_csv(task: &TaskInstance) -> String {
    let (f, p) = (task.feature_dim(), task.truth_dim());
    let mut out = String::new();
    let _ = writeln!(out, "{MAGIC}");
    let _ = writeln!(out, "# task={}", task.name);
    let _ = writeln!(out, "# seed={}", task.seed);
    let _ = writeln!(out, "# feature_dim={f}");
    let _ = writeln!(out, "# truth_dim={p}");
    let _ = writeln!(out, "# rows={}", task.data.len());
    let header: Vec<String> = (0..f).map(|i| format!("f{i}")).chain((0..p).map(|i| format!("c{i}"))).collect();
    let _ = writeln!(out, "{}", header.join(","));
    for (x, c) in task.data.features.iter().zip(&task.data.params) {
        let row: Vec<String> = x.iter().chain(c).map(|v| format!("{v:?}")).collect();
        let _ = writeln!(out, "{}", row.join(","));
    }
    out
}

fn manifest_value<'a>(text: &'a str, key: &str) -> Result<&'a str> {
    text.lines()
        .filter_map(|l| l.strip_prefix("# "))
        .find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
        .ok_or_else(|| Error::Parse(format!("manifest is missing `{key}`")))
}

fn parse_usize(text: &str, key: &str) -> Result<usize> {
    manifest_value(text, key)?
        .trim()
        .parse()
        .map_err(|e| Error::Parse(format!("manifest `{key}`: {e}")))
}

/// Reads a data set written by [`export_csv`] back into a task of the given kind.
pub fn import_csv(text: &str, kind: TaskKind) -> Result<TaskInstance> {
    if !text.starts_with(MAGIC) {
        return Err(Error::Parse("not a foldcore data set".into()));
    }
    let name = manifest_value(text, "task")?.trim().to_string();
    let seed: u64 = manifest_value(text, "seed")?
        .trim()
        .parse()
        .map_err(|e| Error::Parse(format!("manifest `seed`: {e}")))?;
    let f = parse_usize(text, "feature_dim")?;
    let p = parse_usize(text, "truth_dim")?;
    let rows = parse_usize(text, "rows")?;
    let mut body = text.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty());
    body.next().ok_or_else(|| Error::Parse("missing header row".into()))?;
    let mut features = Vec::with_capacity(rows);
    let mut params = Vec::with_capacity(rows);
    for (i, line) in body.enumerate() {
        let vals: Vec<f64> = line
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse(format!("data row {}: {e}", i + 1)))?;
        if vals.len() != f + p {
            return Err(Error::Parse(format!(
                "data row {} has {} values, expected {}",
                i + 1,
                vals.len(),
                f + p
            )));
        }
        features.push(vals[..f].to_vec());
        params.push(vals[f..].to_vec());
    }
    if features.len() != rows {
        return Err(Error::Parse(format!("manifest promises {rows} rows, found {}", features.len())));
    }
    TaskInstance::new(name, kind, Dataset::new(features, params)?, seed)
}
