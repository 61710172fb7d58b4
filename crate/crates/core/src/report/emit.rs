use std::path::Path;

use serde_json::{Map, Value as Json};

use super::config::OutputFormat;
use super::pipeline::ReportBundle;
use super::table::Table;
use crate::{Error, Result};

fn table_csv(table: &Table) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(&table.columns)?;
    for row in &table.rows {
        w.write_record(row.iter().map(|v| v.to_csv_field()))?;
    }
    w.into_inner()
        .map_err(|e| Error::Config(format!("csv buffer: {e}")))
}

fn table_json(table: &Table) -> Result<Vec<u8>> {
    let rows: Vec<Json> = table
        .rows
        .iter()
        .map(|row| {
            let obj: Map<String, Json> = table
                .columns
                .iter()
                .zip(row)
                .map(|(c, v)| Ok((c.clone(), serde_json::to_value(v)?)))
                .collect::<Result<_>>()?;
            Ok(Json::Object(obj))
        })
        .collect::<Result<_>>()?;
    let mut out = serde_json::to_vec_pretty(&rows)?;
    out.push(b'\n');
    Ok(out)
}

/// Serializes one table in the given format.
pub fn render_table(table: &Table, format: OutputFormat) -> Result<Vec<u8>> {
    match format {
        OutputFormat::Csv => table_csv(table),
        OutputFormat::Json => table_json(table),
    }
}

/// Writes one file per table plus `manifest.json` and `summary.txt`.
/// Returns the file names written, in order.
pub fn emit(bundle: &ReportBundle, format: OutputFormat, out_dir: &Path) -> Result<Vec<String>> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let ext = match format {
        OutputFormat::Csv => "csv",
        OutputFormat::Json => "json",
    };
    let mut written = Vec::new();
    let mut write = |name: String, bytes: &[u8]| -> Result<()> {
        let path = out_dir.join(&name);
        std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        written.push(name);
        Ok(())
    };
    for table in &bundle.tables {
        write(
            format!("{}.{ext}", table.name),
            &render_table(table, format)?,
        )?;
    }
    let mut manifest = serde_json::to_vec_pretty(&bundle.manifest)?;
    manifest.push(b'\n');
    write("manifest.json".into(), &manifest)?;
    write("summary.txt".into(), bundle.summary.as_bytes())?;
    Ok(written)
}
