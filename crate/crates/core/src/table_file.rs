//! Reader for the sectioned tab-separated data files.
//!
//! Grammar (UTF-8, one record per line):
//!
//! ```text
//! file     := line*
//! line     := blank | comment | header | record
//! blank    := WS* EOL
//! comment  := WS* '#' any* EOL          (only at line start)
//! header   := '[' name ']' WS* EOL
//! record   := field ( TAB field )* EOL
//! ```
//!
//! Fields are trimmed of surrounding spaces. Records before the first header
//! are a format error, as are headers not known to the caller. A record line
//! whose first field starts with `#` is a comment, so color values never
//! appear in the first column.

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub(crate) struct Record {
    pub line: usize,
    pub fields: Vec<String>,
}

#[derive(Debug, Default)]
pub(crate) struct Sections {
    pub source: String,
    sections: Vec<(String, Vec<Record>)>,
}

impl Sections {
    pub fn get(&self, name: &str) -> Option<&[Record]> {
        self.sections
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, r)| r.as_slice())
    }

    pub fn format_error(&self, line: usize, message: impl Into<String>) -> Error {
        Error::Format {
            path: self.source.clone(),
            line,
            message: message.into(),
        }
    }
}

pub(crate) fn parse_sections(text: &str, source: &str, known: &[&str]) -> Result<Sections> {
    let mut out = Sections {
        source: source.to_string(),
        sections: Vec::new(),
    };
    let mut current: Option<usize> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        if let Some(rest) = trimmed.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| out.format_error(line, "unterminated section header"))?;
            if !known.contains(&name) {
                return Err(out.format_error(line, format!("unknown section [{name}]")));
            }
            if out.get(name).is_some() {
                return Err(out.format_error(line, format!("duplicate section [{name}]")));
            }
            out.sections.push((name.to_string(), Vec::new()));
            current = Some(out.sections.len() - 1);
            continue;
        }
        let Some(section) = current else {
            return Err(out.format_error(line, "record before any section header"));
        };
        let fields = raw
            .trim_end_matches(['\r', '\n'])
            .split('\t')
            .map(|f| f.trim().to_string())
            .collect();
        out.sections[section].1.push(Record { line, fields });
    }
    Ok(out)
}

impl Record {
    pub fn expect_len(&self, s: &Sections, min: usize, max: usize) -> Result<()> {
        let n = self.fields.len();
        if n < min || n > max {
            let want = if min == max {
                format!("{min}")
            } else {
                format!("{min}-{max}")
            };
            return Err(s.format_error(
                self.line,
                format!("expected {want} tab-separated fields, found {n}"),
            ));
        }
        Ok(())
    }

    pub fn number(&self, s: &Sections, idx: usize) -> Result<f64> {
        let f = &self.fields[idx];
        f.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| s.format_error(self.line, format!("field {} is not a number: {f:?}", idx + 1)))
    }
}
