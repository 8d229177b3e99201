//! Number formatting, flat JSON reports and CSV writers.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde_json::{Map, Value};

use crate::coeffs::GridFn;
use crate::error::Result;

/// Formats with 12 significant digits, trimming trailing zeros.
pub fn fmt12(v: f64) -> String {
    if !v.is_finite() {
        return v.to_string();
    }
    if v == 0.0 {
        return "0".to_string();
    }
    let exp = v.abs().log10().floor() as i32;
    if (-5..12).contains(&exp) {
        let decimals = (11 - exp).max(0) as usize;
        let s = format!("{v:.decimals$}");
        let s = if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        };
        if s == "-0" {
            "0".to_string()
        } else {
            s
        }
    } else {
        let s = format!("{v:.11e}");
        let (mantissa, e) = s.split_once('e').unwrap_or((&s, "0"));
        let mantissa = mantissa.trim_end_matches('0').trim_end_matches('.');
        format!("{mantissa}e{e}")
    }
}

/// Rounds to 12 significant digits, for JSON values.
pub fn round12(v: f64) -> f64 {
    fmt12(v).parse().unwrap_or(v)
}

/// A flat key-value report, serialized as a single JSON object.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Report {
    entries: Vec<(String, Value)>,
}

impl Report {
    pub fn new() -> Self {
        Report::default()
    }

    pub fn num(&mut self, key: impl Into<String>, v: f64) -> &mut Self {
        let value = serde_json::Number::from_f64(round12(v))
            .map(Value::Number)
            .unwrap_or_else(|| Value::String(v.to_string()));
        self.push(key, value)
    }

    pub fn int(&mut self, key: impl Into<String>, v: usize) -> &mut Self {
        self.push(key, Value::from(v))
    }

    pub fn flag(&mut self, key: impl Into<String>, v: bool) -> &mut Self {
        self.push(key, Value::Bool(v))
    }

    pub fn text(&mut self, key: impl Into<String>, v: impl Into<String>) -> &mut Self {
        self.push(key, Value::String(v.into()))
    }

    pub fn value(&mut self, key: impl Into<String>, value: Value) -> &mut Self {
        self.push(key, value)
    }

    fn push(&mut self, key: impl Into<String>, value: Value) -> &mut Self {
        let key = key.into();
        match self.entries.iter_mut().find(|(k, _)| *k == key) {
            Some(slot) => slot.1 = value,
            None => self.entries.push((key, value)),
        }
        self
    }

    pub fn get(&self, key: &str) -> Option<&Value> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v)
    }

    /// Entries in insertion order.
    pub fn entries(&self) -> &[(String, Value)] {
        &self.entries
    }

    /// Drops one key (for example wall-clock fields before comparisons).
    pub fn without(&self, key: &str) -> Report {
        Report {
            entries: self.entries.iter().filter(|(k, _)| k != key).cloned().collect(),
        }
    }

    /// One `"key": value` pair per line, keys in insertion order.
    pub fn to_json(&self) -> String {
        let mut out = String::from("{\n");
        for (i, (k, v)) in self.entries.iter().enumerate() {
            let key = Value::String(k.clone()).to_string();
            let sep = if i + 1 == self.entries.len() { "" } else { "," };
            out.push_str(&format!("  {key}: {v}{sep}\n"));
        }
        out.push('}');
        out
    }

    pub fn to_map(&self) -> Map<String, Value> {
        self.entries.iter().cloned().collect()
    }

    /// Two aligned columns for terminal output.
    pub fn to_table(&self) -> String {
        let width = self.entries.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
        self.entries
            .iter()
            .map(|(k, v)| {
                let v = match v {
                    Value::String(s) => s.clone(),
                    other => other.to_string(),
                };
                format!("{k:<width$}  {v}\n")
            })
            .collect()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json() + "\n")?;
        Ok(())
    }
}

/// Writes `x, value` rows for a sampled function.
pub fn write_grid_fn_csv(f: &GridFn, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["x", "value"])?;
    for (j, v) in f.values.iter().enumerate() {
        w.write_record([fmt12(f.grid.node(j)), fmt12(*v)])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes a CSV with the given header and numeric rows.
pub fn write_rows_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<f64>>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{}", header.join(","))?;
    for row in rows {
        let line: Vec<String> = row.into_iter().map(fmt12).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    w.flush()?;
    Ok(())
}
