//! CSV ingestion and number formatting.
//!
//! The dialect is fixed: comma separated, header row, UTF-8, `.` decimal point.
//! A column is numeric when every field parses as a finite number, text otherwise.

use crate::error::{CliError, CliResult};
use crobust::model_frame::{Column, Table};
use std::io::{Read, Write};
use std::path::Path;

pub fn read_table(path: &Path) -> CliResult<Table> {
    let file = std::fs::File::open(path)
        .map_err(|e| CliError::data(format!("cannot open `{}`: {e}", path.display())))?;
    parse_table(file).map_err(|e| CliError::data(format!("`{}`: {}", path.display(), e.message)))
}

pub fn parse_table<R: Read>(input: R) -> CliResult<Table> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(input);
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| CliError::data(e.to_string()))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if header.is_empty() || header.iter().all(|h| h.is_empty()) {
        return Err(CliError::data("missing header row"));
    }
    let mut raw: Vec<Vec<String>> = vec![Vec::new(); header.len()];
    for record in reader.records() {
        let record = record.map_err(|e| CliError::data(e.to_string()))?;
        for (col, field) in raw.iter_mut().zip(record.iter()) {
            col.push(field.trim().to_string());
        }
    }
    let columns = header
        .into_iter()
        .zip(raw)
        .map(|(name, fields)| {
            let numeric: Option<Vec<f64>> = fields
                .iter()
                .map(|f| f.parse::<f64>().ok().filter(|v| v.is_finite()))
                .collect();
            let column = match numeric {
                Some(v) if !fields.is_empty() => Column::Numeric(v),
                _ => Column::Text(fields),
            };
            (name, column)
        })
        .collect();
    Table::new(columns).map_err(CliError::from)
}

/// Writes every cell losslessly: numbers use the shortest representation that parses back exactly.
pub fn write_table<W: Write>(table: &Table, out: W) -> CliResult<()> {
    let mut writer = csv::Writer::from_writer(out);
    let io = |e: csv::Error| CliError::data(format!("write failed: {e}"));
    writer.write_record(table.names()).map_err(io)?;
    for i in 0..table.nrows() {
        let row: Vec<String> = table
            .columns()
            .iter()
            .map(|(_, c)| match c {
                Column::Numeric(v) => v[i].to_string(),
                Column::Text(v) => v[i].clone(),
            })
            .collect();
        writer.write_record(&row).map_err(io)?;
    }
    writer
        .flush()
        .map_err(|e| CliError::data(format!("write failed: {e}")))
}

/// `x` rounded to `digits` significant digits, printed without trailing zeros.
pub fn format_sig(x: f64, digits: usize) -> String {
    if !x.is_finite() {
        return if x.is_nan() {
            "NaN".into()
        } else if x > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    let rounded: f64 = format!("{:.*e}", digits.saturating_sub(1), x)
        .parse()
        .expect("exponent notation parses");
    format!("{rounded}")
}
