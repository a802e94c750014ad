//! CSV and JSON readers and writers for the file formats used by the CLI.
//!
//! Floats are written with Rust's shortest round-trip formatting, so values
//! read back are bit-identical.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use chrono::NaiveDate;
use serde::Serialize;

use crate::analysis::{RankProfile, SectorShockReport};
use crate::error::{Error, Result};
use crate::esri::EsriVector;
use crate::filter::TransactionEvent;
use crate::nace::Nace;
use crate::network::{FirmRecord, RawEdge};

pub const FIRMS_HEADER: [&str; 4] = ["firm_id", "nace4", "revenue", "material_cost"];
pub const EDGES_HEADER: [&str; 3] = ["supplier_id", "buyer_id", "weight"];
pub const TRANSACTIONS_HEADER: [&str; 4] = ["supplier_id", "buyer_id", "date", "amount"];
pub const PSI_HEADER: [&str; 2] = ["firm_id", "psi"];
pub const ESRI_HEADER: [&str; 4] = ["firm_id", "esri", "T", "converged"];

struct Table<R> {
    path: String,
    reader: csv::Reader<R>,
}

impl<R: Read> Table<R> {
    fn new(path: &str, source: R, expected: &[&str]) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(source);
        let header = reader.headers().map_err(|e| parse_err(path, 1, e.to_string()))?;
        let got: Vec<&str> = header.iter().collect();
        // A zero-byte file reads as a table without rows.
        if !got.is_empty() && got != expected {
            return Err(parse_err(
                path,
                1,
                format!("expected header `{}`, found `{}`", expected.join(","), got.join(",")),
            ));
        }
        Ok(Table {
            path: path.to_string(),
            reader,
        })
    }

    /// Calls `f` with each record and its 1-based line number.
    fn for_each(&mut self, mut f: impl FnMut(&csv::StringRecord, u64) -> std::result::Result<(), String>) -> Result<()> {
        let mut record = csv::StringRecord::new();
        loop {
            let line = self.reader.position().line();
            match self.reader.read_record(&mut record) {
                Ok(false) => return Ok(()),
                Ok(true) => {
                    let line = record.position().map_or(line, |p| p.line());
                    f(&record, line).map_err(|m| parse_err(&self.path, line, m))?;
                }
                Err(e) => {
                    let line = e.position().map_or(line, |p| p.line());
                    return Err(parse_err(&self.path, line, e.to_string()));
                }
            }
        }
    }
}

fn parse_err(path: &str, line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_string(),
        line,
        message: message.into(),
    }
}

fn parse_f64(field: &str, name: &str) -> std::result::Result<f64, String> {
    let v: f64 = field.parse().map_err(|_| format!("{name}: `{field}` is not a number"))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("{name}: `{field}` is not finite"))
    }
}

fn parse_optional(field: &str, name: &str) -> std::result::Result<Option<f64>, String> {
    if field.is_empty() {
        Ok(None)
    } else {
        parse_f64(field, name).map(Some)
    }
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| parse_err(&path.display().to_string(), 0, e.to_string()))
}

pub fn parse_firms(path: &str, source: impl Read) -> Result<Vec<FirmRecord>> {
    let mut table = Table::new(path, source, &FIRMS_HEADER)?;
    let mut out = Vec::new();
    table.for_each(|r, _| {
        let nace = Nace::parse_field(&r[1]).map_err(|e| e.to_string())?;
        out.push(FirmRecord {
            id: r[0].to_string(),
            nace,
            revenue: parse_optional(&r[2], "revenue")?,
            material_cost: parse_optional(&r[3], "material_cost")?,
        });
        Ok(())
    })?;
    Ok(out)
}

pub fn parse_edges(path: &str, source: impl Read) -> Result<Vec<RawEdge>> {
    let mut table = Table::new(path, source, &EDGES_HEADER)?;
    let mut out = Vec::new();
    table.for_each(|r, _| {
        out.push(RawEdge::new(&r[0], &r[1], parse_f64(&r[2], "weight")?));
        Ok(())
    })?;
    Ok(out)
}

pub fn parse_transactions(path: &str, source: impl Read) -> Result<Vec<TransactionEvent>> {
    let mut table = Table::new(path, source, &TRANSACTIONS_HEADER)?;
    let mut out = Vec::new();
    table.for_each(|r, _| {
        let date = NaiveDate::parse_from_str(&r[2], "%Y-%m-%d").map_err(|_| format!("date: `{}` is not YYYY-MM-DD", &r[2]))?;
        out.push(TransactionEvent {
            supplier_id: r[0].to_string(),
            buyer_id: r[1].to_string(),
            date,
            amount: parse_f64(&r[3], "amount")?,
        });
        Ok(())
    })?;
    Ok(out)
}

/// `(firm_id, psi)` pairs of a custom shock file.
pub fn parse_psi(path: &str, source: impl Read) -> Result<Vec<(String, f64)>> {
    let mut table = Table::new(path, source, &PSI_HEADER)?;
    let mut out = Vec::new();
    table.for_each(|r, _| {
        let psi = parse_f64(&r[1], "psi")?;
        if !(0.0..=1.0).contains(&psi) {
            return Err(format!("psi {psi} outside [0, 1]"));
        }
        out.push((r[0].to_string(), psi));
        Ok(())
    })?;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EsriRow {
    pub firm_id: String,
    pub esri: f64,
    pub t: usize,
    pub converged: bool,
}

pub fn parse_esri(path: &str, source: impl Read) -> Result<Vec<EsriRow>> {
    let mut table = Table::new(path, source, &ESRI_HEADER)?;
    let mut out = Vec::new();
    table.for_each(|r, _| {
        out.push(EsriRow {
            firm_id: r[0].to_string(),
            esri: parse_f64(&r[1], "esri")?,
            t: r[2].parse().map_err(|_| format!("T: `{}` is not a count", &r[2]))?,
            converged: r[3].parse().map_err(|_| format!("converged: `{}` is not a boolean", &r[3]))?,
        });
        Ok(())
    })?;
    Ok(out)
}

macro_rules! file_reader {
    ($name:ident, $parse:ident, $t:ty) => {
        pub fn $name(path: &Path) -> Result<$t> {
            $parse(&path.display().to_string(), open(path)?)
        }
    };
}

file_reader!(read_firms, parse_firms, Vec<FirmRecord>);
file_reader!(read_edges, parse_edges, Vec<RawEdge>);
file_reader!(read_transactions, parse_transactions, Vec<TransactionEvent>);
file_reader!(read_psi, parse_psi, Vec<(String, f64)>);
file_reader!(read_esri, parse_esri, Vec<EsriRow>);

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn csv_writer(out: impl Write) -> csv::Writer<impl Write> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out)
}

pub fn write_firms(out: impl Write, firms: &[FirmRecord]) -> Result<()> {
    let mut w = csv_writer(out);
    w.write_record(FIRMS_HEADER)?;
    for f in firms {
        w.write_record([f.id.clone(), f.nace.to_string(), opt(f.revenue), opt(f.material_cost)])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_edges(out: impl Write, edges: &[RawEdge]) -> Result<()> {
    let mut w = csv_writer(out);
    w.write_record(EDGES_HEADER)?;
    for e in edges {
        w.write_record([e.supplier_id.as_str(), e.buyer_id.as_str(), &e.weight.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_esri(out: impl Write, esri: &EsriVector) -> Result<()> {
    let mut w = csv_writer(out);
    w.write_record(ESRI_HEADER)?;
    for i in 0..esri.len() {
        w.write_record([
            esri.firm_ids[i].clone(),
            esri.values[i].to_string(),
            esri.t[i].to_string(),
            esri.converged[i].to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_profile(out: impl Write, profile: &RankProfile) -> Result<()> {
    let mut w = csv_writer(out);
    w.write_record(["rank", "firm_id", "esri"])?;
    for e in &profile.entries {
        w.write_record([e.rank.to_string(), e.firm_id.clone(), e.esri.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_sector_report(out: impl Write, report: &SectorShockReport) -> Result<()> {
    let k = report.received.len();
    let mut header = vec!["sector".to_string(), "received_ref".to_string()];
    header.extend((1..=k).map(|s| format!("received_scenario_{s}")));
    header.extend((1..=k).map(|s| format!("rel_dev_{s}")));
    let mut w = csv_writer(out);
    w.write_record(&header)?;
    for (c, sector) in report.sectors.iter().enumerate() {
        let mut row = vec![sector.to_string(), report.received_ref[c].to_string()];
        row.extend(report.received.iter().map(|r| r[c].to_string()));
        row.extend(report.rel_dev.iter().map(|r| r[c].to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json(out: impl Write, value: &impl Serialize) -> Result<()> {
    let mut out = BufWriter::new(out);
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

/// Creates `path` and hands a buffered writer to `f`.
pub fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    f(&mut out)?;
    out.flush()?;
    Ok(())
}
