use crate::error::CliError;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

pub const DIGEST_PREFIX: &str = "# config_digest=";

/// Shortest round-trip decimal, with `inf`/`-inf`/`nan` spelled out.
pub fn num(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else if x != 0.0 && !(1e-6..1e16).contains(&x.abs()) {
        format!("{x:e}")
    } else {
        format!("{x}")
    }
}

/// Writes a CSV whose first line is the config digest comment.
pub fn write_csv(path: &Path, digest: &str, header: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "{DIGEST_PREFIX}{digest}")?;
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

/// `key: value` lines, digest first.
pub fn write_summary(path: &Path, digest: &str, lines: &[(String, String)]) -> Result<(), CliError> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "config_digest: {digest}")?;
    for (k, v) in lines {
        writeln!(out, "{k}: {v}")?;
    }
    out.flush()?;
    Ok(())
}

/// Digest from the first line of a file written by [`write_csv`].
pub fn read_digest(text: &str) -> Option<&str> {
    text.lines().next()?.strip_prefix(DIGEST_PREFIX).map(str::trim)
}
