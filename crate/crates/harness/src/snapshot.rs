//! Plain-text field snapshots.
//!
//! ```text
//! resav-field v1
//! d N_1 .. N_d L_1 .. L_d t
//! value
//! ...
//! ```
//! Values are written in row-major order with Rust's shortest round-trip
//! formatting, so reading a file back reproduces the field bit for bit.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use resav_core::spectral::{Field, Grid};
use thiserror::Error;

pub const MAGIC: &str = "resav-field v1";

#[derive(Debug, Error)]
pub enum SnapshotError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}, line {line}: {reason}")]
    Format { path: PathBuf, line: usize, reason: String },
}

/// A field read back from disk.
#[derive(Clone, Debug)]
pub struct Snapshot {
    pub t: f64,
    pub field: Field<f64>,
}

pub fn header(field: &Field<f64>, t: f64) -> String {
    let g = field.grid();
    let mut s = format!("{}", g.dim());
    for n in g.extents() {
        write!(s, " {n}").unwrap();
    }
    for l in g.lengths() {
        write!(s, " {l}").unwrap();
    }
    write!(s, " {t}").unwrap();
    s
}

pub fn write_snapshot(path: &Path, field: &Field<f64>, t: f64) -> Result<(), SnapshotError> {
    let mut out = String::with_capacity(24 * field.values().len() + 64);
    out.push_str(MAGIC);
    out.push('\n');
    out.push_str(&header(field, t));
    out.push('\n');
    for v in field.values() {
        writeln!(out, "{v}").unwrap();
    }
    fs::write(path, out).map_err(|source| SnapshotError::Io { path: path.to_path_buf(), source })
}

/// Writes one file per component: `stem.field` for a single field,
/// `stem_c0.field`, `stem_c1.field`, ... otherwise.
pub fn write_components(dir: &Path, stem: &str, fields: &[Field<f64>], t: f64) -> Result<Vec<PathBuf>, SnapshotError> {
    let paths: Vec<PathBuf> = if fields.len() == 1 {
        vec![dir.join(format!("{stem}.field"))]
    } else {
        (0..fields.len()).map(|i| dir.join(format!("{stem}_c{i}.field"))).collect()
    };
    for (p, f) in paths.iter().zip(fields) {
        write_snapshot(p, f, t)?;
    }
    Ok(paths)
}

pub fn read_snapshot(path: &Path) -> Result<Snapshot, SnapshotError> {
    let text = fs::read_to_string(path).map_err(|source| SnapshotError::Io { path: path.to_path_buf(), source })?;
    parse_snapshot(&text).map_err(|(line, reason)| SnapshotError::Format { path: path.to_path_buf(), line, reason })
}

fn parse_snapshot(text: &str) -> Result<Snapshot, (usize, String)> {
    let mut lines = text.lines();
    match lines.next() {
        Some(MAGIC) => {}
        Some(other) => return Err((1, format!("expected `{MAGIC}`, found `{other}`"))),
        None => return Err((1, "file is empty".into())),
    }
    let head = lines.next().ok_or((2, "missing grid header".to_string()))?;
    let tokens: Vec<&str> = head.split_whitespace().collect();
    let dim: usize = tokens
        .first()
        .and_then(|d| d.parse().ok())
        .filter(|d| (1..=3).contains(d))
        .ok_or((2, format!("bad dimension in `{head}`")))?;
    if tokens.len() != 2 * dim + 2 {
        return Err((2, format!("expected {} header entries, found {}", 2 * dim + 2, tokens.len())));
    }
    let extents: Vec<usize> = tokens[1..=dim]
        .iter()
        .map(|s| s.parse().map_err(|_| (2, format!("bad extent `{s}`"))))
        .collect::<Result<_, _>>()?;
    let reals: Vec<f64> = tokens[dim + 1..]
        .iter()
        .map(|s| s.parse().map_err(|_| (2, format!("bad number `{s}`"))))
        .collect::<Result<_, _>>()?;
    let (lengths, t) = (&reals[..dim], reals[dim]);
    let grid: Arc<Grid<f64>> = Grid::new(&extents, lengths).map_err(|e| (2, e.to_string()))?;

    let len = grid.len();
    let mut values = Vec::with_capacity(len);
    for (i, line) in lines.enumerate() {
        let lineno = i + 3;
        if values.len() == len {
            if line.trim().is_empty() {
                continue;
            }
            return Err((lineno, format!("extra data after {len} values")));
        }
        values.push(line.trim().parse::<f64>().map_err(|_| (lineno, format!("bad value `{line}`")))?);
    }
    if values.len() < len {
        return Err((values.len() + 3, format!("file ends after {} of {len} values", values.len())));
    }
    let field = Field::from_values(&grid, values).map_err(|e| (2, e.to_string()))?;
    Ok(Snapshot { t, field })
}
