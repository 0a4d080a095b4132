use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tomo::io::format_f64;

/// In-memory CSV with a fixed header; written UTF-8 with LF endings.
#[derive(Clone, Debug, PartialEq)]
pub struct CsvTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl CsvTable {
    pub fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) -> Result<()> {
        if row.len() != self.header.len() {
            return Err(Error::ShapeMismatch(format!(
                "row of {} fields for a {}-column table",
                row.len(),
                self.header.len()
            )));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn render(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                fs::create_dir_all(dir)?;
            }
        }
        let mut f = fs::File::create(path)?;
        f.write_all(self.render().as_bytes())?;
        Ok(())
    }
}

pub(crate) fn num(v: f64) -> String {
    format_f64(v)
}

pub(crate) fn opt_num(v: Option<f64>) -> String {
    v.map(format_f64).unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_with_lf_and_checks_width() {
        let mut t = CsvTable::new(&["a", "b"]);
        t.push(vec![num(0.1), opt_num(None)]).unwrap();
        assert!(t.push(vec!["x".into()]).is_err());
        assert_eq!(t.render(), "a,b\n1.0000000000000001e-1,\n");
    }
}
