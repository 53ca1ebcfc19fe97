//! Manifest text format and corpus loading.
//!
//! ```text
//! path,class_id,azimuth_deg,day_night,range_m
//! #step=5
//! #param seed=1
//! class00/az000.00_day.png,0,0,0,1000
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use irview_core::data::DayNight;
use irview_core::{DatasetManifest, ManifestRecord, ViewSample};

use crate::error::{Error, Result};
use crate::png_io;

pub const HEADER: &str = "path,class_id,azimuth_deg,day_night,range_m";

pub fn to_text(manifest: &DatasetManifest) -> String {
    let mut s = format!("{HEADER}\n#step={}\n", manifest.angular_step_deg);
    for (k, v) in &manifest.params {
        let _ = writeln!(s, "#param {k}={v}");
    }
    for r in &manifest.records {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            r.path,
            r.class_id,
            r.azimuth_deg,
            r.day_night.flag(),
            r.range_m
        );
    }
    s
}

pub fn parse(text: &str, path: &Path) -> Result<DatasetManifest> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == HEADER => {}
        _ => return Err(Error::format(path, format!("first line must be the header `{HEADER}`"))),
    }
    let mut m = DatasetManifest::default();
    let mut step = None;
    for (no, line) in lines {
        let line = line.trim();
        let bad = |msg: String| Error::format(path, format!("line {}: {msg}", no + 1));
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix("#step=") {
            step = Some(rest.trim().parse::<f64>().map_err(|e| bad(format!("step: {e}")))?);
        } else if let Some(rest) = line.strip_prefix("#param ") {
            let (k, v) = rest.split_once('=').ok_or_else(|| bad("param without `=`".into()))?;
            m.params.push((k.trim().to_string(), v.trim().to_string()));
        } else if line.starts_with('#') {
            continue;
        } else {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 5 {
                return Err(bad(format!("expected 5 fields, got {}", f.len())));
            }
            let num = |s: &str, what: &str| s.trim().parse::<f64>().map_err(|e| bad(format!("{what}: {e}")));
            let flag: u8 = f[3].trim().parse().map_err(|e| bad(format!("day_night: {e}")))?;
            m.records.push(ManifestRecord {
                path: f[0].trim().to_string(),
                class_id: f[1].trim().parse().map_err(|e| bad(format!("class_id: {e}")))?,
                azimuth_deg: num(f[2], "azimuth_deg")?,
                day_night: DayNight::from_flag(flag)?,
                range_m: num(f[4], "range_m")?,
            });
        }
    }
    m.angular_step_deg = step.ok_or_else(|| Error::format(path, "missing `#step=<deg>` line"))?;
    m.validate()?;
    Ok(m)
}

pub fn read(path: &Path) -> Result<DatasetManifest> {
    let text = fs::read_to_string(path).map_err(Error::io(path))?;
    parse(&text, path)
}

pub fn write(path: &Path, manifest: &DatasetManifest) -> Result<()> {
    manifest.validate()?;
    fs::write(path, to_text(manifest)).map_err(Error::io(path))
}

/// A manifest with its images loaded; `samples[i]` belongs to
/// `manifest.records[i]`.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub manifest: DatasetManifest,
    pub samples: Vec<ViewSample>,
    pub root: PathBuf,
}

/// Reads the manifest and every image it lists (paths relative to the
/// manifest's directory).
pub fn load_corpus(path: &Path) -> Result<Corpus> {
    let manifest = read(path)?;
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let samples = manifest
        .records
        .iter()
        .map(|r| {
            let sample = ViewSample {
                image: png_io::read_view(&root.join(&r.path))?,
                class_id: r.class_id,
                azimuth_deg: r.azimuth_deg,
                day_night: r.day_night,
                range_m: r.range_m,
            };
            sample.validate(Some(manifest.angular_step_deg))?;
            Ok(sample)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Corpus { manifest, samples, root })
}
