//! Dataset CSV format: header `id,r,z,y1,y0,x1..xd`, missing values as `NA`.
//!
//! Floats are written in shortest round-trip form, so write→read is exact.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{HteError, Result};
use crate::gmm::AuxiliaryMoments;
use crate::model::{Dataset, Setup, UnitRecord};

pub const NA: &str = "NA";
const FIXED_COLUMNS: [&str; 5] = ["id", "r", "z", "y1", "y0"];

#[derive(Debug, Clone, PartialEq)]
pub struct ReadOptions {
    pub setup: Setup,
    /// Rejects negative outcomes (outcomes censored at zero).
    pub censored: bool,
    pub aux: Option<AuxiliaryMoments>,
}

impl Default for ReadOptions {
    fn default() -> Self {
        Self { setup: Setup::RctOneSided, censored: false, aux: None }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> HteError {
    HteError::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

fn parse_err(line: u64, msg: impl Into<String>) -> HteError {
    HteError::Parse { line: line as usize, msg: msg.into() }
}

fn parse_binary(field: &str, name: &str, line: u64) -> Result<Option<bool>> {
    match field.trim() {
        NA => Ok(None),
        "0" => Ok(Some(false)),
        "1" => Ok(Some(true)),
        other => Err(parse_err(line, format!("{name} must be 0, 1 or NA, got '{other}'"))),
    }
}

fn parse_real(field: &str, name: &str, line: u64) -> Result<Option<f64>> {
    let f = field.trim();
    if f == NA {
        return Ok(None);
    }
    let v: f64 = f.parse().map_err(|_| parse_err(line, format!("{name}: cannot parse '{f}' as a number")))?;
    if !v.is_finite() {
        return Err(parse_err(line, format!("{name}: non-finite value '{f}'")));
    }
    Ok(Some(v))
}

/// Parses a dataset from CSV text. Line numbers in errors count the header as line 1.
pub fn read_dataset_from<R: Read>(reader: R, opts: &ReadOptions) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(reader);
    let header = rdr.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    let cols: Vec<&str> = header.iter().map(str::trim).collect();
    if cols.len() < FIXED_COLUMNS.len() || cols[..5] != FIXED_COLUMNS {
        return Err(parse_err(1, format!("header must start with id,r,z,y1,y0; got '{}'", cols.join(","))));
    }
    let d = cols.len() - 5;
    for (k, c) in cols[5..].iter().enumerate() {
        if *c != format!("x{}", k + 1) {
            return Err(parse_err(1, format!("covariate column {} must be named x{}, got '{c}'", k + 6, k + 1)));
        }
    }
    let mut units = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| parse_err(e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != cols.len() {
            return Err(parse_err(line, format!("expected {} fields, found {}", cols.len(), rec.len())));
        }
        let id = rec[0].trim().to_string();
        if id.is_empty() || id == NA {
            return Err(parse_err(line, "id must be present"));
        }
        let r = parse_binary(&rec[1], "r", line)?.ok_or_else(|| parse_err(line, "r must not be NA"))?;
        let z = parse_binary(&rec[2], "z", line)?;
        let y1 = parse_real(&rec[3], "y1", line)?;
        let y0 = parse_real(&rec[4], "y0", line)?;
        let mut x = Vec::with_capacity(d);
        for k in 0..d {
            let name = &cols[5 + k];
            x.push(parse_real(&rec[5 + k], name, line)?.ok_or_else(|| parse_err(line, format!("{name} must not be NA")))?);
        }
        if opts.censored && [y0, y1].into_iter().flatten().any(|v| v < 0.0) {
            return Err(parse_err(line, "negative outcome in censored mode"));
        }
        let unit = UnitRecord { id, x, r, z, y1, y0 };
        unit.validate().map_err(|e| parse_err(line, e.to_string()))?;
        units.push(unit);
    }
    Dataset::new(units, d, opts.setup, opts.aux.clone())
}

pub fn read_dataset(path: &Path, opts: &ReadOptions) -> Result<Dataset> {
    let f = std::fs::File::open(path).map_err(|e| io_err(path, e))?;
    read_dataset_from(std::io::BufReader::new(f), opts)
}

fn fmt_opt<T>(v: Option<T>, f: impl Fn(T) -> String) -> String {
    v.map_or_else(|| NA.to_string(), f)
}

pub fn write_dataset_to<W: Write>(data: &Dataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = FIXED_COLUMNS.iter().map(|s| s.to_string()).collect();
    header.extend((1..=data.d).map(|k| format!("x{k}")));
    w.write_record(&header).map_err(std::io::Error::from)?;
    for u in &data.units {
        let mut row = vec![
            u.id.clone(),
            if u.r { "1" } else { "0" }.to_string(),
            fmt_opt(u.z, |z| if z { "1" } else { "0" }.to_string()),
            fmt_opt(u.y1, |v| v.to_string()),
            fmt_opt(u.y0, |v| v.to_string()),
        ];
        row.extend(u.x.iter().map(|v| v.to_string()));
        w.write_record(&row).map_err(std::io::Error::from)?;
    }
    w.flush().map_err(std::io::Error::from)?;
    Ok(())
}

pub fn write_dataset(data: &Dataset, path: &Path) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| io_err(path, e))?;
    write_dataset_to(data, std::io::BufWriter::new(f))
}

pub fn read_aux(path: &Path) -> Result<AuxiliaryMoments> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    AuxiliaryMoments::from_json(&text)
}

/// Writes pretty JSON followed by a newline.
pub fn write_json<T: serde::Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}
