//! Report files. Each starts with one timestamp line; everything after it is reproducible.

use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use stiffdiff::error::{Error, Result};
use stiffdiff::io::write_atomic;

pub const STAMP_PREFIX: &str = "# generated";

pub fn stamp() -> String {
    let secs = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    format!("{STAMP_PREFIX} by stiffdiff {} at unix {secs}", env!("CARGO_PKG_VERSION"))
}

/// Timestamp line carrying run-dependent notes such as wall-clock totals.
pub fn stamp_with(note: &str) -> String {
    if note.is_empty() {
        stamp()
    } else {
        format!("{}; {note}", stamp())
    }
}

/// Drops the timestamp line, for comparing two generations of the same file.
pub fn strip_stamp(text: &str) -> String {
    text.lines()
        .filter(|l| !l.starts_with(STAMP_PREFIX) && !l.starts_with("<!-- generated"))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Writes a header row and records as CSV behind the timestamp line.
pub fn write_csv<R: AsRef<[String]>>(path: &Path, header: &[&str], rows: &[R]) -> Result<()> {
    write_csv_noted(path, "", header, rows)
}

/// [`write_csv`] with `note` appended to the timestamp line.
pub fn write_csv_noted<R: AsRef<[String]>>(path: &Path, note: &str, header: &[&str], rows: &[R]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    let err = |e: csv::Error| Error::InvalidConfig(format!("csv: {e}"));
    w.write_record(header).map_err(err)?;
    for r in rows {
        w.write_record(r.as_ref()).map_err(err)?;
    }
    let body = w.into_inner().map_err(|e| Error::InvalidConfig(format!("csv: {e}")))?;
    let mut out = format!("{}\n", stamp_with(note)).into_bytes();
    out.extend(body);
    write_atomic(path, &out)
}

/// Reads a CSV written by [`write_csv`] back as header and rows.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let body = strip_stamp(&text);
    let mut r = csv::Reader::from_reader(body.as_bytes());
    let err = |e: csv::Error| Error::InvalidConfig(format!("{}: {e}", path.display()));
    let header = r.headers().map_err(err)?.iter().map(str::to_owned).collect();
    let rows = r
        .records()
        .map(|rec| rec.map(|r| r.iter().map(str::to_owned).collect()).map_err(err))
        .collect::<Result<Vec<Vec<String>>>>()?;
    Ok((header, rows))
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    write_atomic(path, format!("{text}\n").as_bytes())
}

/// Formats a float with enough digits to round-trip.
pub fn num(v: f64) -> String {
    format!("{v:?}")
}
