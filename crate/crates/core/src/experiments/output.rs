//! CSV formatting and all-or-nothing file output.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// Reported relative errors below this print as `<1.000000e-6`.
pub const REPORT_FLOOR: f64 = 1e-6;

/// Scientific notation with six significant digits.
pub fn sci(v: f64) -> String {
    format!("{v:.5e}")
}

/// Like [`sci`], with values below [`REPORT_FLOOR`] shown as `<1.000000e-6`.
pub fn sci_floor(v: f64) -> String {
    if v < REPORT_FLOOR {
        format!("<{REPORT_FLOOR:.6e}")
    } else {
        sci(v)
    }
}

#[derive(Clone, Copy, Debug)]
pub enum Cell<'a> {
    Int(usize),
    Float(f64),
    /// A relative error, subject to the report floor.
    Error(f64),
    Text(&'a str),
}

/// A CSV table that refuses non-finite numbers.
#[derive(Clone, Debug)]
pub struct Table {
    header: Vec<String>,
    body: String,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Table {
            header: header.iter().map(|s| s.to_string()).collect(),
            body: String::new(),
        }
    }

    pub fn push(&mut self, row: &[Cell<'_>]) -> Result<()> {
        if row.len() != self.header.len() {
            return Err(Error::DimensionMismatch {
                what: "csv row",
                expected: self.header.len(),
                got: row.len(),
            });
        }
        let mut line = String::new();
        for (k, c) in row.iter().enumerate() {
            if k > 0 {
                line.push(',');
            }
            match *c {
                Cell::Int(v) => write!(line, "{v}").unwrap(),
                Cell::Float(v) | Cell::Error(v) if !v.is_finite() => {
                    return Err(Error::NonFinite(format!("column {}", self.header[k])));
                }
                Cell::Float(v) => line.push_str(&sci(v)),
                Cell::Error(v) => line.push_str(&sci_floor(v)),
                Cell::Text(s) => line.push_str(s),
            }
        }
        self.body.push_str(&line);
        self.body.push('\n');
        Ok(())
    }

    pub fn render(&self) -> String {
        format!("{}\n{}", self.header.join(","), self.body)
    }
}

/// Writes every file or none: on any failure the files written so far are
/// removed, and the directory too if this call created it.
pub fn write_all(dir: &Path, files: &[(&str, String)]) -> Result<Vec<PathBuf>> {
    let created_dir = !dir.exists();
    let io = |path: &Path, source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    std::fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    let mut written = Vec::new();
    for (name, contents) in files {
        let path = dir.join(name);
        if let Err(e) = std::fs::write(&path, contents) {
            for p in &written {
                let _ = std::fs::remove_file(p);
            }
            if created_dir {
                let _ = std::fs::remove_dir_all(dir);
            }
            return Err(io(&path, e));
        }
        written.push(path);
    }
    Ok(written)
}
