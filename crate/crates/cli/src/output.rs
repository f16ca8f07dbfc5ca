//! Result records, CSV/JSON/table writers and the run manifest.

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::Value;

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl Check {
    /// Passes when value <= tolerance.
    pub fn at_most(name: impl Into<String>, value: f64, tolerance: f64) -> Self {
        Self { name: name.into(), value, tolerance, passed: value <= tolerance }
    }

    /// Passes when value >= tolerance.
    pub fn at_least(name: impl Into<String>, value: f64, tolerance: f64) -> Self {
        Self { name: name.into(), value, tolerance, passed: value >= tolerance }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self { header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        self.rows.push(row);
    }

    /// One row of floats, formatted to round-trip.
    pub fn push_f64(&mut self, row: &[f64]) {
        self.rows.push(row.iter().map(|x| format!("{x:e}")).collect());
    }

    fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(&self.header)?;
        for r in &self.rows {
            out.write_record(r)?;
        }
        out.flush()?;
        Ok(())
    }

    fn write_aligned(&self, mut w: impl Write) -> Result<()> {
        let mut width: Vec<usize> = self.header.iter().map(|h| h.len()).collect();
        for r in &self.rows {
            for (i, c) in r.iter().enumerate() {
                width[i] = width[i].max(c.len());
            }
        }
        let line = |cells: &[String]| cells.iter().enumerate().map(|(i, c)| format!("{c:>w$}", w = width[i])).collect::<Vec<_>>().join("  ");
        writeln!(w, "{}", line(&self.header))?;
        for r in &self.rows {
            writeln!(w, "{}", line(r))?;
        }
        Ok(())
    }
}

/// What a subcommand produced.
#[derive(Debug, Clone, Default)]
pub struct Outcome {
    pub json: Value,
    pub table: Option<Table>,
    /// Scalar results, used for sweep rows.
    pub summary: Vec<(String, f64)>,
    pub checks: Vec<Check>,
}

impl Outcome {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    fn summary_table(&self) -> Table {
        let mut t = Table::new(&["quantity", "value"]);
        for (k, v) in &self.summary {
            t.push(vec![k.clone(), format!("{v:e}")]);
        }
        t
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Emit {
    Csv,
    Json,
    Table,
}

impl Emit {
    pub fn extension(self) -> &'static str {
        match self {
            Emit::Csv => "csv",
            Emit::Json => "json",
            Emit::Table => "txt",
        }
    }
}

/// Writes the primary output and returns its path.
pub fn write_outcome(o: &Outcome, emit: Emit, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).with_context(|| format!("cannot write {}", path.display()))?;
    let w = std::io::BufWriter::new(file);
    match emit {
        Emit::Json => {
            let mut w = w;
            serde_json::to_writer_pretty(&mut w, &o.json)?;
            writeln!(w)?;
        }
        Emit::Csv => o.table.clone().unwrap_or_else(|| o.summary_table()).write_csv(w)?,
        Emit::Table => o.table.clone().unwrap_or_else(|| o.summary_table()).write_aligned(w)?,
    }
    Ok(())
}

/// Plotting script for a CSV whose first column is the abscissa.
pub fn write_plot_script(csv_path: &Path, log: bool) -> Result<PathBuf> {
    let script = csv_path.with_extension("plot.py");
    let name = csv_path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let scale = if log { "ax.set_xscale('log')\nax.set_yscale('log')\n" } else { "" };
    let text = format!(
        "import csv\nimport matplotlib.pyplot as plt\n\nrows = list(csv.reader(open({name:?})))\nhead, data = rows[0], rows[1:]\nfig, ax = plt.subplots()\nfor j in range(1, len(head)):\n    pts = [(float(r[0]), float(r[j])) for r in data if r[j] not in ('', 'nan')]\n    ax.plot([p[0] for p in pts], [p[1] for p in pts], marker='o', label=head[j])\nax.set_xlabel(head[0])\n{scale}ax.legend()\nfig.savefig({:?})\n",
        name.replace(".csv", ".png"),
    );
    std::fs::write(&script, text).with_context(|| format!("cannot write {}", script.display()))?;
    Ok(script)
}

#[derive(Debug, Serialize)]
pub struct Manifest<'a> {
    pub tool: &'static str,
    pub version: &'static str,
    pub subcommand: &'a str,
    pub config: Value,
    pub emit: Emit,
    pub workers: usize,
    pub wall_time_s: f64,
    pub outputs: Vec<String>,
    pub checks: &'a [Check],
    pub all_passed: bool,
}

pub fn manifest_path(output: &Path) -> PathBuf {
    let mut s = output.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

pub fn write_manifest(m: &Manifest, output: &Path) -> Result<PathBuf> {
    let path = manifest_path(output);
    let text = serde_json::to_string_pretty(m)?;
    std::fs::write(&path, text + "\n").with_context(|| format!("cannot write {}", path.display()))?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_quotes_fields_with_commas() {
        let mut t = Table::new(&["a", "b"]);
        t.push(vec!["x,y".into(), "plain".into()]);
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "a,b\n\"x,y\",plain\n");
    }

    #[test]
    fn manifest_sits_next_to_the_output() {
        assert_eq!(manifest_path(Path::new("out/run.csv")), PathBuf::from("out/run.csv.manifest.json"));
    }
}
