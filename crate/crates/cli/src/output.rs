use std::fs;
use std::path::Path;

use crate::error::CliResult;

/// Shortest round-trip text for a float; exponent form outside [1e-4, 1e15).
pub fn num(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 || !v.is_finite() || (1e-4..1e15).contains(&a) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

pub fn opt_num(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

/// CSV text with a leading `#schema=<name>/<version>` line.
pub struct Table {
    schema: &'static str,
    writer: csv::Writer<Vec<u8>>,
}

impl Table {
    pub fn new(schema: &'static str, header: &[&str]) -> CliResult<Self> {
        let mut writer = csv::WriterBuilder::new().from_writer(Vec::new());
        writer.write_record(header)?;
        Ok(Table { schema, writer })
    }

    pub fn row(&mut self, fields: &[String]) -> CliResult<()> {
        self.writer.write_record(fields)?;
        Ok(())
    }

    pub fn finish(self) -> CliResult<String> {
        let body = self.writer.into_inner().map_err(|e| crate::error::CliError::usage(e.to_string()))?;
        Ok(format!("#schema={}\n{}", self.schema, String::from_utf8_lossy(&body)))
    }
}

/// Writes `text` to `out` when given (returning an empty string), otherwise
/// hands it back for stdout.
pub fn deliver(text: String, out: Option<&Path>) -> CliResult<String> {
    match out {
        Some(path) => {
            fs::write(path, text)?;
            Ok(String::new())
        }
        None => Ok(text),
    }
}

pub fn json<T: serde::Serialize>(value: &T) -> CliResult<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn number_format() {
        assert_eq!(num(0.25), "0.25");
        assert_eq!(num(1e-300), "1e-300");
        assert_eq!(num(-2.5e20), "-2.5e20");
        assert_eq!(num(f64::INFINITY), "inf");
        assert_eq!(num(10000.0), "10000");
    }

    #[test]
    fn table_has_schema_line() {
        let mut t = Table::new("demo/1", &["a", "b"]).unwrap();
        t.row(&["1".into(), "x".into()]).unwrap();
        assert_eq!(t.finish().unwrap(), "#schema=demo/1\na,b\n1,x\n");
    }
}
