//! Scatter plots of 2-D projections, with a plain-text legend sidecar.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::png_io;

pub const SIDE: usize = 512;
const MARGIN: f64 = 24.0;

const PALETTE: [[u8; 3]; 10] = [
    [31, 119, 180],
    [255, 127, 14],
    [44, 160, 44],
    [214, 39, 40],
    [148, 103, 189],
    [140, 86, 75],
    [227, 119, 194],
    [127, 127, 127],
    [188, 189, 34],
    [23, 190, 207],
];

/// Class colour; day points are filled squares, night points are crosses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct PointLabel {
    pub class_id: u32,
    pub night: bool,
}

pub fn legend_path(image: &Path) -> PathBuf {
    let mut s = image.as_os_str().to_owned();
    s.push(".legend.txt");
    PathBuf::from(s)
}

fn color(class_id: u32) -> [u8; 3] {
    PALETTE[class_id as usize % PALETTE.len()]
}

fn put(img: &mut [u8], x: i64, y: i64, c: [u8; 3]) {
    if (0..SIDE as i64).contains(&x) && (0..SIDE as i64).contains(&y) {
        let i = 3 * (y as usize * SIDE + x as usize);
        img[i..i + 3].copy_from_slice(&c);
    }
}

/// Writes the scatter PNG and `<out>.legend.txt` (one line per distinct
/// label). An empty input still produces both files.
pub fn render_projection(points: &[[f64; 2]], labels: &[PointLabel], out: &Path) -> Result<()> {
    if points.len() != labels.len() {
        return Err(Error::Config(format!(
            "{} points but {} labels",
            points.len(),
            labels.len()
        )));
    }
    let mut img = vec![255u8; 3 * SIDE * SIDE];
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in points {
        for k in 0..2 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    let span = |k: usize| (hi[k] - lo[k]).max(1e-12);
    let usable = SIDE as f64 - 2.0 * MARGIN;
    for (p, l) in points.iter().zip(labels) {
        let x = (MARGIN + (p[0] - lo[0]) / span(0) * usable).round() as i64;
        let y = (SIDE as f64 - MARGIN - (p[1] - lo[1]) / span(1) * usable).round() as i64;
        let c = color(l.class_id);
        for d in -2i64..=2 {
            if l.night {
                put(&mut img, x + d, y + d, c);
                put(&mut img, x + d, y - d, c);
            } else {
                for e in -2i64..=2 {
                    put(&mut img, x + d, y + e, c);
                }
            }
        }
    }
    png_io::write_rgb(out, &img, SIDE as u32, SIDE as u32)?;

    let mut counts: BTreeMap<PointLabel, usize> = BTreeMap::new();
    labels.iter().for_each(|l| *counts.entry(*l).or_default() += 1);
    let mut legend = String::new();
    for (l, n) in counts {
        let [r, g, b] = color(l.class_id);
        legend += &format!(
            "class={} day_night={} color=#{r:02x}{g:02x}{b:02x} marker={} points={n}\n",
            l.class_id,
            u8::from(l.night),
            if l.night { "cross" } else { "square" }
        );
    }
    let lp = legend_path(out);
    fs::write(&lp, legend).map_err(Error::io(&lp))
}
