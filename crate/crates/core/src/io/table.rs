//! Ground-truth and localization tables, and their CSV form.
//!
//! The CSV header follows the ThunderSTORM convention:
//! `frame,x [nm],y [nm],sigma [nm],intensity [photon]`. Frames are 1-based
//! on disk and 0-based in memory; absent optional fields are written empty.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

pub const CSV_HEADER: [&str; 5] = ["frame", "x [nm]", "y [nm]", "sigma [nm]", "intensity [photon]"];

#[derive(Debug, Error)]
pub enum TableError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("line {line}: {msg}")]
    Parse { line: u64, msg: String },
}

/// One ground-truth emission event.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Emitter {
    pub frame: usize,
    pub x_nm: f64,
    pub y_nm: f64,
    /// Realized photon count of this on-frame.
    pub photons: f64,
    pub id: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmitterTable {
    pub rows: Vec<Emitter>,
}

/// One detection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Localization {
    pub frame: usize,
    pub x_nm: f64,
    pub y_nm: f64,
    pub sigma_nm: Option<f64>,
    pub intensity: Option<f64>,
    /// Background in photons per pixel. Not persisted in the CSV.
    pub background: Option<f64>,
}

impl Localization {
    pub fn at(frame: usize, x_nm: f64, y_nm: f64) -> Self {
        Self { frame, x_nm, y_nm, sigma_nm: None, intensity: None, background: None }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LocalizationTable {
    pub rows: Vec<Localization>,
}

impl EmitterTable {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Rows of one frame, assuming rows are sorted by frame.
    pub fn frame_rows(&self, frame: usize) -> &[Emitter] {
        let lo = self.rows.partition_point(|r| r.frame < frame);
        let hi = self.rows.partition_point(|r| r.frame <= frame);
        &self.rows[lo..hi]
    }

    pub fn max_photons(&self) -> f64 {
        self.rows.iter().map(|r| r.photons).fold(0.0, f64::max)
    }

    /// Exact positions as detections, e.g. for feeding ground truth into
    /// evaluation code.
    pub fn to_localizations(&self) -> LocalizationTable {
        LocalizationTable {
            rows: self
                .rows
                .iter()
                .map(|e| Localization { intensity: Some(e.photons), ..Localization::at(e.frame, e.x_nm, e.y_nm) })
                .collect(),
        }
    }
}

impl LocalizationTable {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn frame_rows(&self, frame: usize) -> &[Localization] {
        let lo = self.rows.partition_point(|r| r.frame < frame);
        let hi = self.rows.partition_point(|r| r.frame <= frame);
        &self.rows[lo..hi]
    }

    /// Stable sort by frame; rows of a frame keep insertion order.
    pub fn sort(&mut self) {
        self.rows.sort_by_key(|r| r.frame);
    }
}

fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

fn write_rows<W: Write>(out: W, rows: impl Iterator<Item = [String; 5]>) -> Result<(), TableError> {
    let mut w = csv::WriterBuilder::new().from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn encode_localizations<W: Write>(table: &LocalizationTable, out: W) -> Result<(), TableError> {
    write_rows(
        out,
        table.rows.iter().map(|r| {
            [
                (r.frame + 1).to_string(),
                fmt_f64(r.x_nm),
                fmt_f64(r.y_nm),
                fmt_opt(r.sigma_nm),
                fmt_opt(r.intensity),
            ]
        }),
    )
}

pub fn encode_emitters<W: Write>(table: &EmitterTable, out: W) -> Result<(), TableError> {
    write_rows(
        out,
        table.rows.iter().map(|r| {
            [(r.frame + 1).to_string(), fmt_f64(r.x_nm), fmt_f64(r.y_nm), String::new(), fmt_f64(r.photons)]
        }),
    )
}

struct RawRow {
    frame: usize,
    x: f64,
    y: f64,
    sigma: Option<f64>,
    intensity: Option<f64>,
}

fn parse_rows<R: Read>(input: R) -> Result<Vec<(u64, RawRow)>, TableError> {
    let mut rd = csv::ReaderBuilder::new().has_headers(true).flexible(false).from_reader(input);
    let header = rd.headers()?.clone();
    if header.len() < 5 || header.iter().take(5).ne(CSV_HEADER.iter().copied()) {
        return Err(TableError::Parse { line: 1, msg: format!("unexpected header {header:?}") });
    }
    let mut out = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let err = |msg: String| TableError::Parse { line, msg };
        let num = |i: usize, name: &str| -> Result<f64, TableError> {
            rec.get(i)
                .unwrap_or("")
                .trim()
                .parse::<f64>()
                .map_err(|_| err(format!("non-numeric {name} {:?}", rec.get(i).unwrap_or(""))))
        };
        let opt = |i: usize, name: &str| -> Result<Option<f64>, TableError> {
            let s = rec.get(i).unwrap_or("").trim();
            if s.is_empty() {
                Ok(None)
            } else {
                num(i, name).map(Some)
            }
        };
        let frame: usize = rec
            .get(0)
            .unwrap_or("")
            .trim()
            .parse()
            .map_err(|_| err(format!("bad frame {:?}", rec.get(0).unwrap_or(""))))?;
        if frame == 0 {
            return Err(err("frame numbers are 1-based".into()));
        }
        let row = RawRow {
            frame: frame - 1,
            x: num(1, "x")?,
            y: num(2, "y")?,
            sigma: opt(3, "sigma")?,
            intensity: opt(4, "intensity")?,
        };
        if let Some(s) = row.sigma {
            if !(s > 0.0) {
                return Err(err(format!("sigma must be positive, got {s}")));
            }
        }
        out.push((line, row));
    }
    Ok(out)
}

pub fn decode_localizations<R: Read>(input: R) -> Result<LocalizationTable, TableError> {
    let mut table = LocalizationTable {
        rows: parse_rows(input)?
            .into_iter()
            .map(|(_, r)| Localization {
                frame: r.frame,
                x_nm: r.x,
                y_nm: r.y,
                sigma_nm: r.sigma,
                intensity: r.intensity,
                background: None,
            })
            .collect(),
    };
    table.sort();
    Ok(table)
}

pub fn decode_emitters<R: Read>(input: R) -> Result<EmitterTable, TableError> {
    let mut rows = Vec::new();
    for (line, r) in parse_rows(input)? {
        let photons = r
            .intensity
            .filter(|p| *p > 0.0)
            .ok_or_else(|| TableError::Parse { line, msg: "emitter rows need positive intensity".into() })?;
        rows.push(Emitter { frame: r.frame, x_nm: r.x, y_nm: r.y, photons, id: None });
    }
    rows.sort_by_key(|r| r.frame);
    Ok(EmitterTable { rows })
}

pub fn write_localizations(table: &LocalizationTable, path: impl AsRef<Path>) -> Result<(), TableError> {
    encode_localizations(table, File::create(path)?)
}

pub fn read_localizations(path: impl AsRef<Path>) -> Result<LocalizationTable, TableError> {
    decode_localizations(File::open(path)?)
}

pub fn write_emitters(table: &EmitterTable, path: impl AsRef<Path>) -> Result<(), TableError> {
    encode_emitters(table, File::create(path)?)
}

pub fn read_emitters(path: impl AsRef<Path>) -> Result<EmitterTable, TableError> {
    decode_emitters(File::open(path)?)
}
