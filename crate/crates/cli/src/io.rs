use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::CliError;

/// Creates `dir` and any missing parents.
pub fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

/// Writes one row per record with a header taken from the field names.
pub fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<(), CliError> {
    let mut writer = csv::Writer::from_path(path)?;
    for row in rows {
        writer.serialize(row)?;
    }
    writer.flush().map_err(|e| CliError::io(path, e))
}

/// Reads one numeric column, by header name, from a CSV file.
pub fn read_column(path: &Path, column: &str) -> Result<Vec<f64>, CliError> {
    let mut reader = csv::Reader::from_path(path)?;
    let index = reader
        .headers()?
        .iter()
        .position(|h| h == column)
        .ok_or_else(|| CliError::Usage(format!("{}: no column named {column:?}", path.display())))?;
    let mut values = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        let field = record.get(index).unwrap_or("");
        let value = field.trim().parse::<f64>().map_err(|_| {
            CliError::Usage(format!("{}: row {}: {field:?} is not a number", path.display(), line + 1))
        })?;
        values.push(value);
    }
    Ok(values)
}
