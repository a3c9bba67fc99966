//! Graph, signal and mask file readers.

use std::path::Path;

use log::warn;

use crate::dag::Dag;
use crate::error::{Error, Result};

/// Reads an edge-list file (`n=<count>` header, then `target,source,weight`).
pub fn ingest_graph_csv(path: &Path) -> Result<Dag> {
    Dag::read_edge_list(path)
}

/// Reads a signals CSV with header `node_0,…,node_{n−1}` and one signal per
/// row.
pub fn ingest_signals_csv(path: &Path, d: &Dag) -> Result<Vec<Vec<f64>>> {
    let n = d.n();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut records = reader.records();
    let Some(header) = records.next() else {
        warn!("{}: empty signals file", path.display());
        return Ok(Vec::new());
    };
    let header = header?;
    if header.len() != n {
        return Err(Error::ColumnMismatch {
            expected: n,
            got: header.len(),
            line: 1,
        });
    }
    for (i, name) in header.iter().enumerate() {
        if name != format!("node_{i}") {
            return Err(Error::Parse(format!(
                "{}: header column {i} is `{name}`, expected `node_{i}`",
                path.display()
            )));
        }
    }
    let mut signals = Vec::new();
    for (row, rec) in records.enumerate() {
        let rec = rec?;
        let line = row + 2;
        if rec.len() != n {
            return Err(Error::ColumnMismatch {
                expected: n,
                got: rec.len(),
                line,
            });
        }
        let values = rec
            .iter()
            .map(|v| {
                v.parse::<f64>()
                    .map_err(|e| Error::Parse(format!("line {line}: `{v}`: {e}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        signals.push(values);
    }
    if signals.is_empty() {
        warn!("{}: signals file has a header but no rows", path.display());
    }
    Ok(signals)
}

/// Writes signals in the format read by [`ingest_signals_csv`].
pub fn write_signals_csv(path: &Path, signals: &[Vec<f64>], n: usize) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record((0..n).map(|i| format!("node_{i}")))?;
    for s in signals {
        if s.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: s.len(),
            });
        }
        w.write_record(s.iter().map(|v| format!("{v:e}")))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads newline-separated node indices; blank lines and `#` comments are
/// skipped.
pub fn ingest_mask(path: &Path, n: usize) -> Result<Vec<usize>> {
    let text = std::fs::read_to_string(path)?;
    let mut nodes = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let v: usize = line
            .parse()
            .map_err(|e| Error::Parse(format!("mask line {}: `{line}`: {e}", i + 1)))?;
        if v >= n {
            return Err(Error::NodeOutOfRange { index: v, n });
        }
        nodes.push(v);
    }
    nodes.sort_unstable();
    nodes.dedup();
    Ok(nodes)
}
