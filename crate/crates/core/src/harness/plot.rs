//! Turns a sweep CSV into whitespace-aligned columns for gnuplot and friends.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// Reformats `csv` (first line is the header) as a `#`-commented header and
/// right-aligned columns.
pub fn csv_to_columns(csv: &str, path: &Path) -> Result<String> {
    let mut lines = csv.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            msg: "empty file".into(),
        })?
        .split(',')
        .collect();
    let mut rows = Vec::new();
    for (k, l) in lines.enumerate() {
        let cells: Vec<&str> = l.split(',').collect();
        if cells.len() != header.len() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: k + 2,
                msg: format!("expected {} fields, found {}", header.len(), cells.len()),
            });
        }
        rows.push(cells);
    }
    let widths: Vec<usize> = (0..header.len())
        .map(|j| {
            rows.iter()
                .map(|r| r[j].len())
                .chain([header[j].len()])
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = String::from("#");
    for (j, h) in header.iter().enumerate() {
        let _ = write!(out, " {:>w$}", h, w = widths[j]);
    }
    out.push('\n');
    for r in &rows {
        out.push(' ');
        for (j, c) in r.iter().enumerate() {
            let _ = write!(out, " {:>w$}", c, w = widths[j]);
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn plot_file(path: &Path) -> Result<String> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    csv_to_columns(&text, path)
}
