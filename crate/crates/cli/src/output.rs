//! Tables for people, CSV for scripts.

use std::io::Write;

use chrono::{DateTime, Utc};

use crate::settings::Format;

pub struct Table {
    header: Vec<&'static str>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&'static str]) -> Self {
        Self {
            header: header.to_vec(),
            rows: Vec::new(),
        }
    }

    pub fn row(&mut self, cells: Vec<String>) {
        debug_assert_eq!(cells.len(), self.header.len());
        self.rows.push(cells);
    }

    pub fn write(&self, format: Format, out: &mut dyn Write) -> std::io::Result<()> {
        match format {
            Format::Csv => {
                let mut w = csv::Writer::from_writer(out);
                w.write_record(&self.header)?;
                for r in &self.rows {
                    w.write_record(r)?;
                }
                w.flush()
            }
            Format::Table => {
                let mut widths: Vec<usize> = self.header.iter().map(|h| h.chars().count()).collect();
                for r in &self.rows {
                    for (w, c) in widths.iter_mut().zip(r) {
                        *w = (*w).max(c.chars().count());
                    }
                }
                let line = |cells: &mut dyn Iterator<Item = &str>| {
                    let padded: Vec<String> = cells.zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
                    padded.join("  ").trim_end().to_string()
                };
                writeln!(out, "{}", line(&mut self.header.iter().copied()))?;
                for r in &self.rows {
                    writeln!(out, "{}", line(&mut r.iter().map(String::as_str)))?;
                }
                Ok(())
            }
        }
    }
}

/// Unix seconds for CSV, UTC ISO 8601 for tables.
pub fn time_cell(t: Option<i64>, format: Format) -> String {
    match (t, format) {
        (None, _) => String::new(),
        (Some(t), Format::Csv) => t.to_string(),
        (Some(t), Format::Table) => DateTime::<Utc>::from_timestamp(t, 0)
            .map(|d| d.format("%Y-%m-%dT%H:%M:%SZ").to_string())
            .unwrap_or_else(|| t.to_string()),
    }
}

/// Accept Unix seconds or an RFC 3339 instant.
pub fn parse_time(text: &str) -> Result<i64, String> {
    if let Ok(t) = text.parse::<i64>() {
        return Ok(t);
    }
    DateTime::parse_from_rfc3339(text)
        .map(|d| d.timestamp())
        .map_err(|_| format!("{text:?} is neither Unix seconds nor an RFC 3339 time"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_and_csv() {
        let mut t = Table::new(&["id", "name"]);
        t.row(vec!["1".into(), "a, b".into()]);
        let mut out = Vec::new();
        t.write(Format::Csv, &mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "id,name\n1,\"a, b\"\n");
        let mut out = Vec::new();
        t.write(Format::Table, &mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "id  name\n1   a, b\n");
    }

    #[test]
    fn times() {
        assert_eq!(parse_time("1729468800").unwrap(), 1_729_468_800);
        assert_eq!(parse_time("2024-10-21T02:00:00+02:00").unwrap(), 1_729_468_800);
        assert!(parse_time("yesterday").is_err());
        assert_eq!(time_cell(Some(1_729_468_800), Format::Table), "2024-10-21T00:00:00Z");
    }
}
