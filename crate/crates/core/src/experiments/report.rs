//! Report assembly: one table per report, rendered as RFC-4180 CSV or a
//! GitHub pipe table with a header block.

use serde::Serialize;
use serde_json::Value;

use crate::error::{Error, Result};

pub const TOOL: &str = env!("CARGO_PKG_NAME");
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Formats a number for reports: exponent notation below `1e-3` in
/// magnitude, otherwise up to six decimals with trailing zeros trimmed.
pub fn fmt_num(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if !v.is_finite() {
        return format!("{v}");
    }
    if v.abs() < 1e-3 {
        return format!("{v:.3e}");
    }
    let s = format!("{v:.6}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".into() } else { s.into() }
}

pub fn fmt_pct(fraction: f64) -> String {
    format!("{:.2}%", 100.0 * fraction)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(columns: impl IntoIterator<Item = S>) -> Self {
        Self {
            columns: columns.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push<S: Into<String>>(&mut self, row: impl IntoIterator<Item = S>) {
        let row: Vec<String> = row.into_iter().map(Into::into).collect();
        assert_eq!(row.len(), self.columns.len(), "row width must match the header");
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::CRLF).from_writer(Vec::new());
        let io = |e: csv::Error| Error::Config(format!("csv: {e}"));
        w.write_record(&self.columns).map_err(io)?;
        for r in &self.rows {
            w.write_record(r).map_err(io)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Config(format!("csv: {e}")))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }

    pub fn to_markdown(&self) -> String {
        let cell = |s: &str| s.replace('|', "\\|");
        let mut out = String::new();
        out.push_str(&format!("| {} |\n", self.columns.iter().map(|c| cell(c)).collect::<Vec<_>>().join(" | ")));
        out.push_str(&format!("|{}\n", "---|".repeat(self.columns.len())));
        for r in &self.rows {
            out.push_str(&format!("| {} |\n", r.iter().map(|c| cell(c)).collect::<Vec<_>>().join(" | ")));
        }
        out
    }
}

/// A finished experiment: its table plus everything needed to reproduce it.
/// Contains nothing time-dependent, so equal inputs give equal bytes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    /// File stem, e.g. `equivalence`.
    pub name: String,
    pub title: String,
    /// Which published table or claim the layout follows.
    pub mirrors: String,
    pub config: Value,
    pub seeds: Vec<u64>,
    pub table: Table,
    /// Optional wide layout rendered above `table` in markdown only.
    pub layout: Option<Table>,
    /// Headline key/value results.
    pub summary: Vec<(String, String)>,
    pub notes: Vec<String>,
    /// Whether every checked criterion held.
    pub passed: bool,
}

impl Report {
    pub fn new(name: &str, title: &str, mirrors: &str, config: &impl Serialize, seeds: Vec<u64>, table: Table) -> Result<Self> {
        Ok(Self {
            name: name.into(),
            title: title.into(),
            mirrors: mirrors.into(),
            config: serde_json::to_value(config)?,
            seeds,
            table,
            layout: None,
            summary: Vec::new(),
            notes: Vec::new(),
            passed: true,
        })
    }

    pub fn summarize(&mut self, key: &str, value: impl Into<String>) {
        self.summary.push((key.into(), value.into()));
    }

    pub fn note(&mut self, text: impl Into<String>) {
        self.notes.push(text.into());
    }

    pub fn summary_value(&self, key: &str) -> Option<&str> {
        self.summary.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn to_markdown(&self) -> Result<String> {
        let mut out = format!("# {}\n\n", self.title);
        out.push_str(&format!("- tool: {TOOL} {VERSION}\n"));
        out.push_str(&format!("- mirrors: {}\n", self.mirrors));
        let seeds = if self.seeds.is_empty() {
            "none".to_string()
        } else {
            self.seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(", ")
        };
        out.push_str(&format!("- seeds: {seeds}\n"));
        out.push_str(&format!("- status: {}\n", if self.passed { "pass" } else { "FAIL" }));
        out.push_str(&format!("- config: `{}`\n\n", serde_json::to_string(&self.config)?));
        if let Some(layout) = &self.layout {
            out.push_str(&layout.to_markdown());
            out.push('\n');
        }
        out.push_str(&self.table.to_markdown());
        if !self.summary.is_empty() {
            out.push('\n');
            for (k, v) in &self.summary {
                out.push_str(&format!("- {k}: {v}\n"));
            }
        }
        if !self.notes.is_empty() {
            out.push('\n');
            for n in &self.notes {
                out.push_str(&format!("> {n}\n"));
            }
        }
        Ok(out)
    }

    /// The CSV carries only the table; this JSON sidecar carries the rest.
    pub fn metadata_json(&self) -> Result<String> {
        let meta = serde_json::json!({
            "tool": TOOL,
            "version": VERSION,
            "title": self.title,
            "mirrors": self.mirrors,
            "seeds": self.seeds,
            "passed": self.passed,
            "config": self.config,
            "summary": self.summary.iter().map(|(k, v)| serde_json::json!({ "key": k, "value": v })).collect::<Vec<_>>(),
            "notes": self.notes,
        });
        Ok(serde_json::to_string_pretty(&meta)? + "\n")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn number_formatting() {
        assert_eq!(fmt_num(0.0), "0");
        assert_eq!(fmt_num(1.5e-13), "1.500e-13");
        assert_eq!(fmt_num(-2e-4), "-2.000e-4");
        assert_eq!(fmt_num(0.25), "0.25");
        assert_eq!(fmt_num(12.0), "12");
        assert_eq!(fmt_num(0.001), "0.001");
        assert_eq!(fmt_pct(1.0 / 9.0), "11.11%");
    }

    #[test]
    fn csv_quotes_per_rfc4180() {
        let mut t = Table::new(["name", "value"]);
        t.push(["a,b", "say \"hi\""]);
        t.push(["plain", "1"]);
        assert_eq!(t.to_csv().unwrap(), "name,value\r\n\"a,b\",\"say \"\"hi\"\"\"\r\nplain,1\r\n");
    }

    #[test]
    fn markdown_table_shape() {
        let mut t = Table::new(["x", "y"]);
        t.push(["1", "a|b"]);
        assert_eq!(t.to_markdown(), "| x | y |\n|---|---|\n| 1 | a\\|b |\n");
    }

    #[test]
    fn report_is_reproducible() {
        let t = Table::new(["k"]);
        let mut r = Report::new("demo", "Demo", "nothing", &serde_json::json!({"a": 1}), vec![3], t).unwrap();
        r.summarize("worst", "0");
        let md = r.to_markdown().unwrap();
        assert_eq!(md, r.clone().to_markdown().unwrap());
        assert!(md.contains("- config: `{\"a\":1}`"));
        assert!(r.metadata_json().unwrap().contains("\"seeds\": [\n    3\n  ]"));
        assert_eq!(r.summary_value("worst"), Some("0"));
    }
}
