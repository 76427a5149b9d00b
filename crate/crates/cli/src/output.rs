//! File writers. CSV floats use 17 significant digits so that values
//! round-trip bit for bit; JSON floats use the shortest exact form.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use nalgebra::DVector;
use serde::Serialize;

use crate::NumericalError;

pub fn float(v: f64) -> String {
    format!("{v:.16e}")
}

/// `step,x1..xn[,cost]` rows; `costs[k]` is the cumulative cost after step
/// `k` (zero at step 0).
pub fn trajectory_csv(states: &[DVector<f64>], costs: Option<&[f64]>) -> Result<String> {
    let n = states.first().map_or(0, |s| s.len());
    let mut out = String::from("step");
    for i in 1..=n {
        write!(out, ",x{i}")?;
    }
    if costs.is_some() {
        out.push_str(",cost");
    }
    out.push('\n');
    for (k, x) in states.iter().enumerate() {
        write!(out, "{k}")?;
        for v in x.iter() {
            write!(out, ",{}", finite(*v)?)?;
        }
        if let Some(c) = costs {
            let cost = if k == 0 { 0.0 } else { c[k - 1] };
            write!(out, ",{}", finite(cost)?)?;
        }
        out.push('\n');
    }
    Ok(out)
}

fn finite(v: f64) -> Result<String> {
    if !v.is_finite() {
        bail!(NumericalError(format!("non-finite value {v} in output table")));
    }
    Ok(float(v))
}

/// A table with a header row and formatted cells.
pub struct Table {
    text: String,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self {
            text: format!("{}\n", header.join(",")),
        }
    }

    pub fn row(&mut self, cells: &[Cell]) -> Result<()> {
        let mut parts = Vec::with_capacity(cells.len());
        for c in cells {
            parts.push(match c {
                Cell::Int(i) => i.to_string(),
                Cell::Float(v) => finite(*v)?,
                Cell::Empty => String::new(),
            });
        }
        self.text.push_str(&parts.join(","));
        self.text.push('\n');
        Ok(())
    }

    pub fn into_string(self) -> String {
        self.text
    }
}

pub enum Cell {
    Int(u64),
    Float(f64),
    Empty,
}

/// Collects the files a command writes under one directory.
pub struct OutputDir {
    root: PathBuf,
    written: Vec<PathBuf>,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
        Ok(Self {
            root: root.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        let path = self.root.join(name);
        fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
        log::info!("wrote {}", path.display());
        self.written.push(path);
        Ok(())
    }

    pub fn write_json(&mut self, name: &str, value: &impl Serialize) -> Result<()> {
        let v = serde_json::to_value(value)?;
        if let Some(path) = first_null(&v, String::new()) {
            bail!(NumericalError(format!("non-finite value at `{path}` in {name}")));
        }
        let mut text = serde_json::to_string_pretty(&v)?;
        text.push('\n');
        self.write(name, &text)
    }

    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }
}

/// Path of the first `null` that stands for a float. serde_json writes NaN
/// and infinities as `null`; absent optional fields are `null` too, so only
/// array entries and keys known to hold floats are checked.
fn first_null(v: &serde_json::Value, path: String) -> Option<String> {
    match v {
        serde_json::Value::Object(map) => map.iter().find_map(|(k, child)| {
            let p = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
            if child.is_null() && NUMERIC_KEYS.contains(&k.as_str()) {
                Some(p)
            } else {
                first_null(child, p)
            }
        }),
        serde_json::Value::Array(items) => items.iter().enumerate().find_map(|(i, child)| {
            if child.is_null() {
                Some(format!("{path}[{i}]"))
            } else {
                first_null(child, format!("{path}[{i}]"))
            }
        }),
        _ => None,
    }
}

const NUMERIC_KEYS: &[&str] = &[
    "mean",
    "std_error",
    "baseline",
    "attacked",
    "increase",
    "objective",
    "curvature",
    "alpha_star",
    "objective_star",
    "detection_rate",
];
