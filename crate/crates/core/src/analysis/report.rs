use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// Whitespace-free columns with a `#`-prefixed header line, one row per
/// record. Missing values are written as `nan`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ColumnarReport {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
    /// `key=value` lines written as comments above the header.
    pub meta: Vec<(String, String)>,
}

impl ColumnarReport {
    pub fn new<S: Into<String>>(headers: impl IntoIterator<Item = S>) -> Self {
        ColumnarReport {
            headers: headers.into_iter().map(Into::into).collect(),
            ..Self::default()
        }
    }

    pub fn meta(mut self, key: impl Into<String>, value: impl ToString) -> Self {
        self.meta.push((key.into(), value.to_string()));
        self
    }

    pub fn push(&mut self, row: Vec<String>) -> Result<()> {
        if row.len() != self.headers.len() {
            return Err(Error::invalid(format!("row has {} columns, report has {}", row.len(), self.headers.len())));
        }
        self.rows.push(row.into_iter().map(|c| if c.is_empty() { "nan".into() } else { c.replace(char::is_whitespace, "_") }).collect());
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.meta {
            let _ = writeln!(out, "# {k}={v}");
        }
        let _ = writeln!(out, "# {}", self.headers.join("\t"));
        for r in &self.rows {
            let _ = writeln!(out, "{}", r.join("\t"));
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut report = ColumnarReport::default();
        let mut lines = text.lines().enumerate().peekable();
        while let Some((_, l)) = lines.peek() {
            let Some(body) = l.strip_prefix("# ") else { break };
            match body.split_once('=') {
                Some((k, v)) if !body.contains('\t') => report.meta.push((k.into(), v.into())),
                _ => {
                    report.headers = body.split('\t').map(String::from).collect();
                    lines.next();
                    break;
                }
            }
            lines.next();
        }
        if report.headers.is_empty() {
            return Err(Error::Parse { line: 1, message: "missing column header".into() });
        }
        for (i, l) in lines {
            let row: Vec<String> = l.split('\t').map(String::from).collect();
            if row.len() != report.headers.len() {
                return Err(Error::Parse { line: i + 1, message: format!("expected {} columns", report.headers.len()) });
            }
            report.rows.push(row);
        }
        Ok(report)
    }

    pub fn column(&self, name: &str) -> Option<Vec<&str>> {
        let i = self.headers.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[i].as_str()).collect())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::at_path(path, e))
    }
}

pub(crate) fn num(v: f64) -> String {
    format!("{v:.6}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut r = ColumnarReport::new(["angle", "rmse"]).meta("axis", "z");
        r.push(vec![num(0.0), num(1.25)]).unwrap();
        r.push(vec![num(0.5), String::new()]).unwrap();
        assert!(r.push(vec!["1".into()]).is_err());
        let text = r.to_text();
        assert!(text.starts_with("# axis=z\n# angle\trmse\n"));
        let back = ColumnarReport::parse(&text).unwrap();
        assert_eq!(back, r);
        assert_eq!(back.column("rmse").unwrap(), vec!["1.250000", "nan"]);
    }
}
