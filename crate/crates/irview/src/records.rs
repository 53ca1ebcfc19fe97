//! Text formats for embeddings, embedding tables and projected points.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use irview_core::data::DayNight;
use irview_core::eval::{EmbeddingRecord, Stage};
use irview_core::train::EmbeddingTable;
use irview_core::{Embedding, SampleKey};

use crate::error::{Error, Result};

fn vector_header(prefix: &str, dim: usize) -> String {
    let mut s = String::from(prefix);
    for i in 0..dim {
        let _ = write!(s, ",v{i}");
    }
    s
}

fn push_vector(line: &mut String, v: &[f32]) {
    for x in v {
        // Shortest representation that parses back to the same f32.
        let _ = write!(line, ",{x}");
    }
}

fn parse_vector(fields: &[&str], path: &Path, line: usize) -> Result<Vec<f32>> {
    fields
        .iter()
        .map(|f| {
            f.trim()
                .parse::<f32>()
                .map_err(|e| Error::format(path, format!("line {line}: {e}")))
        })
        .collect()
}

/// Embedding export: header `class_id,day_night,stage,v0..v{dim-1}`.
pub fn embeddings_to_text(records: &[EmbeddingRecord]) -> String {
    let dim = records.first().map_or(0, |r| r.vector.len());
    let mut s = vector_header("class_id,day_night,stage", dim);
    s.push('\n');
    for r in records {
        let _ = write!(s, "{},{},{}", r.class_id, r.day_night.flag(), r.stage.as_str());
        push_vector(&mut s, &r.vector);
        s.push('\n');
    }
    s
}

pub fn write_embeddings(path: &Path, records: &[EmbeddingRecord]) -> Result<()> {
    fs::write(path, embeddings_to_text(records)).map_err(Error::io(path))
}

pub fn read_embeddings(path: &Path) -> Result<Vec<EmbeddingRecord>> {
    let text = fs::read_to_string(path).map_err(Error::io(path))?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::format(path, "empty file"))?;
    if !header.starts_with("class_id,day_night,stage") {
        return Err(Error::format(path, "missing embedding header"));
    }
    let dim = header.split(',').count() - 3;
    lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let f: Vec<&str> = line.split(',').collect();
            let bad = |m: &str| Error::format(path, format!("line {}: {m}", i + 2));
            if f.len() != dim + 3 {
                return Err(bad("wrong field count"));
            }
            let flag: u8 = f[1].trim().parse().map_err(|_| bad("bad day_night"))?;
            Ok(EmbeddingRecord {
                class_id: f[0].trim().parse().map_err(|_| bad("bad class_id"))?,
                day_night: DayNight::from_flag(flag)?,
                stage: Stage::parse(f[2].trim()).ok_or_else(|| bad("bad stage"))?,
                vector: parse_vector(&f[3..], path, i + 2)?,
            })
        })
        .collect()
}

/// Target-embedding table: header `class_id,azimuth_deg,day_night,range_m,v0..`.
pub fn write_table(path: &Path, table: &EmbeddingTable) -> Result<()> {
    let dim = table.values().next().map_or(0, Embedding::len);
    let mut s = vector_header("class_id,azimuth_deg,day_night,range_m", dim);
    s.push('\n');
    for (k, e) in table {
        let _ = write!(s, "{},{},{},{}", k.class_id, k.azimuth_deg, k.day_night.flag(), k.range_m);
        push_vector(&mut s, e.as_slice());
        s.push('\n');
    }
    fs::write(path, s).map_err(Error::io(path))
}

pub fn read_table(path: &Path) -> Result<EmbeddingTable> {
    let text = fs::read_to_string(path).map_err(Error::io(path))?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::format(path, "empty file"))?;
    if !header.starts_with("class_id,azimuth_deg,day_night,range_m") {
        return Err(Error::format(path, "missing embedding-table header"));
    }
    let mut table = EmbeddingTable::new();
    for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let f: Vec<&str> = line.split(',').collect();
        let bad = |m: &str| Error::format(path, format!("line {}: {m}", i + 2));
        if f.len() < 4 {
            return Err(bad("too few fields"));
        }
        let flag: u8 = f[2].trim().parse().map_err(|_| bad("bad day_night"))?;
        let key = SampleKey {
            class_id: f[0].trim().parse().map_err(|_| bad("bad class_id"))?,
            azimuth_deg: f[1].trim().parse().map_err(|_| bad("bad azimuth"))?,
            day_night: DayNight::from_flag(flag)?,
            range_m: f[3].trim().parse().map_err(|_| bad("bad range"))?,
        };
        let e = Embedding(parse_vector(&f[4..], path, i + 2)?);
        if table.insert(key, e).is_some() {
            return Err(irview_core::Error::DuplicateKey(key).into());
        }
    }
    Ok(table)
}

/// Projected points: `x,y,class_id,day_night`.
pub fn write_points(path: &Path, points: &[[f64; 2]], records: &[EmbeddingRecord]) -> Result<()> {
    let mut s = String::from("x,y,class_id,day_night\n");
    for (p, r) in points.iter().zip(records) {
        let _ = writeln!(s, "{},{},{},{}", p[0], p[1], r.class_id, r.day_night.flag());
    }
    fs::write(path, s).map_err(Error::io(path))
}
