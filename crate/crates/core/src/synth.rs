//! Procedural stand-in for infrared vehicle crops.
//!
//! Each class is a fixed arrangement of 3–6 box or ellipsoid parts in an
//! object frame, seen orthographically while it turns about the vertical
//! axis. Parts carry a hot face and 2–4 Gaussian heat spots ride on the
//! object, so the rendered view depends on the full azimuth rather than only
//! its mirror class. Night views darken the background and raise object
//! contrast. Everything is driven by the seed.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

#[cfg_attr(feature = "std", allow(unused_imports))]
use num_traits::Float;
use rand::Rng;

use crate::data::{DayNight, SampleKey, IMAGE_PIXELS, IMAGE_SIZE};
use crate::error::{Error, Result};
use crate::rng::{normal, seeded, stream, SeededRng};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_classes: u32,
    pub views_per_circle: u32,
    /// 1 renders day only, 2 renders day and night.
    pub regimes: u8,
    pub seed: u64,
    /// Standard deviation of per-pixel sensor noise, in [0,1] intensity units.
    pub noise_sigma: f64,
    /// Number of low-frequency clutter blobs in the background.
    pub clutter_blobs: u32,
    pub range_m: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_classes: 8,
            views_per_circle: 72,
            regimes: 2,
            seed: 0,
            noise_sigma: 0.008,
            clutter_blobs: 6,
            range_m: 1000.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 {
            return Err(Error::domain("need at least two classes"));
        }
        if self.views_per_circle == 0 || 360 % self.views_per_circle != 0 {
            return Err(Error::domain(format!(
                "views per circle {} must divide 360",
                self.views_per_circle
            )));
        }
        if !(1..=2).contains(&self.regimes) {
            return Err(Error::domain("regimes must be 1 (day) or 2 (day and night)"));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma < 0.5) {
            return Err(Error::domain("noise sigma must lie in [0, 0.5)"));
        }
        Ok(())
    }

    pub fn step_deg(&self) -> f64 {
        360.0 / self.views_per_circle as f64
    }

    /// Generator settings as key/value pairs for the manifest header.
    pub fn params(&self) -> Vec<(String, String)> {
        vec![
            ("generator".into(), "irview-synth-v1".into()),
            ("classes".into(), format!("{}", self.n_classes)),
            ("views".into(), format!("{}", self.views_per_circle)),
            ("regimes".into(), format!("{}", self.regimes)),
            ("seed".into(), format!("{}", self.seed)),
            ("noise_sigma".into(), format!("{}", self.noise_sigma)),
            ("clutter_blobs".into(), format!("{}", self.clutter_blobs)),
            ("range_m".into(), format!("{}", self.range_m)),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum PartShape {
    Box,
    Ellipsoid,
}

/// Object-frame part; `x` runs along the vehicle, `z` across it, `y` up.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Part {
    shape: PartShape,
    center: [f64; 3],
    half: [f64; 3],
    intensity: f64,
    hot_face_rad: f64,
    hot_gain: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct HeatSpot {
    pos: [f64; 3],
    normal_rad: f64,
    amplitude: f64,
    sigma: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectModel {
    parts: Vec<Part>,
    spots: Vec<HeatSpot>,
}

fn class_rng(seed: u64, class_id: u32) -> SeededRng {
    seeded(seed ^ (class_id as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15), stream::SYNTH)
}

impl ObjectModel {
    /// The fixed arrangement for one class.
    pub fn for_class(seed: u64, class_id: u32) -> Self {
        let mut rng = class_rng(seed, class_id);
        let n_parts = rng.gen_range(3..=6);
        // Hull: the largest part, off-centre along x so the silhouette is
        // not symmetric under a half turn.
        let hull_len = rng.gen_range(9.0..15.0);
        let hull_wid = rng.gen_range(4.0..8.0);
        let hull_h = rng.gen_range(3.0..6.0);
        let mut parts = vec![Part {
            shape: if rng.gen_bool(0.7) { PartShape::Box } else { PartShape::Ellipsoid },
            center: [rng.gen_range(-2.0..2.0), hull_h, 0.0],
            half: [hull_len, hull_h, hull_wid],
            intensity: rng.gen_range(0.45..0.65),
            hot_face_rad: rng.gen_range(0.0..core::f64::consts::TAU),
            hot_gain: rng.gen_range(0.05..0.15),
        }];
        for _ in 1..n_parts {
            let sx = rng.gen_range(1.5..6.0);
            let sy = rng.gen_range(1.0..4.0);
            let sz = rng.gen_range(1.0..hull_wid);
            let cx = rng.gen_range(-hull_len..hull_len) * 0.8;
            let cz = rng.gen_range(-hull_wid..hull_wid) * 0.5;
            let cy = 2.0 * hull_h + sy * rng.gen_range(0.3..1.0);
            parts.push(Part {
                shape: if rng.gen_bool(0.5) { PartShape::Box } else { PartShape::Ellipsoid },
                center: [cx, cy, cz],
                half: [sx, sy, sz],
                intensity: rng.gen_range(0.35..0.8),
                hot_face_rad: rng.gen_range(0.0..core::f64::consts::TAU),
                hot_gain: rng.gen_range(0.05..0.2),
            });
        }
        let n_spots = rng.gen_range(2..=4);
        let spots = (0..n_spots)
            .map(|_| {
                let p = parts[rng.gen_range(0..parts.len())];
                HeatSpot {
                    pos: [
                        p.center[0] + rng.gen_range(-1.0..1.0) * p.half[0],
                        p.center[1] + rng.gen_range(-0.5..0.5) * p.half[1],
                        p.center[2] + rng.gen_range(-1.0..1.0) * p.half[2],
                    ],
                    normal_rad: rng.gen_range(0.0..core::f64::consts::TAU),
                    amplitude: rng.gen_range(0.25..0.45),
                    sigma: rng.gen_range(1.2..2.8),
                }
            })
            .collect();
        ObjectModel { parts, spots }
    }
}

/// Rotates an object-frame point by the azimuth; returns (screen x, depth).
fn rotate(p: [f64; 3], cos: f64, sin: f64) -> (f64, f64) {
    (p[0] * cos + p[2] * sin, -p[0] * sin + p[2] * cos)
}

/// Renders one 64×64 view as 8-bit grey levels.
/// Panorama width in image widths: one full orbit pans this far.
const PANORAMA_SPAN: f64 = 4.0;

pub fn render_view(config: &SynthConfig, model: &ObjectModel, key: &SampleKey) -> Vec<u8> {
    let theta = key.azimuth_deg.to_radians();
    let (cos, sin) = (theta.cos(), theta.sin());
    let night = key.day_night == DayNight::Night;
    let mut rng = seeded(
        config.seed
            ^ (key.class_id as u64).wrapping_mul(0x1000_0000_01B3)
            ^ ((key.azimuth_deg * 1000.0) as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F)
            ^ (key.day_night as u64).wrapping_mul(0x1656_67B1_9E37_79F9),
        stream::SYNTH + 1,
    );

    let (bg_level, bg_var, contrast, lift) = if night { (0.12, 0.05, 1.1, 0.12) } else { (0.48, 0.12, 0.85, 0.0) };
    let mut img = vec![bg_level; IMAGE_PIXELS];
    let size = IMAGE_SIZE as f64;
    // Background clutter: smooth blobs on a panorama shared by every view of
    // the class and regime, panned with the azimuth as the camera orbits.
    let mut pano = seeded(
        config.seed ^ (key.class_id as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (key.day_night as u64 + 1),
        stream::SYNTH + 2,
    );
    let width = PANORAMA_SPAN * size;
    let left = key.azimuth_deg / 360.0 * width;
    for _ in 0..config.clutter_blobs * PANORAMA_SPAN as u32 {
        let (px, cy) = (pano.gen_range(0.0..width), pano.gen_range(0.0..size));
        let sigma = pano.gen_range(4.0..12.0);
        let amp = pano.gen_range(-bg_var..bg_var);
        let cx = num_traits::Euclid::rem_euclid(&(px - left), &width);
        for x in [cx, cx - width] {
            if x > -40.0 && x < size + 40.0 {
                add_gaussian(&mut img, x, cy, sigma, amp);
            }
        }
    }
    for (row, line) in img.chunks_exact_mut(IMAGE_SIZE).enumerate() {
        let g = (row as f64 / size - 0.5) * if night { 0.04 } else { 0.08 };
        line.iter_mut().for_each(|v| *v += g);
    }

    // Painter's order: far parts first.
    let (ox, oy) = (size / 2.0, size * 0.62);
    let mut order: Vec<(f64, usize)> = model
        .parts
        .iter()
        .enumerate()
        .map(|(i, p)| (rotate(p.center, cos, sin).1, i))
        .collect();
    order.sort_by(|a, b| b.0.total_cmp(&a.0));
    for &(_, i) in &order {
        let p = &model.parts[i];
        let (sx, _) = rotate(p.center, cos, sin);
        let half_w = match p.shape {
            PartShape::Box => (p.half[0] * cos).abs() + (p.half[2] * sin).abs(),
            PartShape::Ellipsoid => ((p.half[0] * cos).powi(2) + (p.half[2] * sin).powi(2)).sqrt(),
        };
        let facing = (theta - p.hot_face_rad).cos().max(0.0);
        let level = ((p.intensity + p.hot_gain * facing) * contrast + lift).min(1.0);
        let (cx, cy) = (ox + sx, oy - p.center[1]);
        for (row, line) in img.chunks_exact_mut(IMAGE_SIZE).enumerate() {
            let dy = (row as f64 + 0.5 - cy) / p.half[1];
            if dy.abs() > 1.0 {
                continue;
            }
            for (col, v) in line.iter_mut().enumerate() {
                let dx = (col as f64 + 0.5 - cx) / half_w.max(0.5);
                let inside = match p.shape {
                    PartShape::Box => dx.abs() <= 1.0,
                    PartShape::Ellipsoid => dx * dx + dy * dy <= 1.0,
                };
                if inside {
                    // Slight vertical shading keeps parts from being flat.
                    *v = level * (1.0 - 0.08 * dy);
                }
            }
        }
    }
    for s in &model.spots {
        let (sx, _) = rotate(s.pos, cos, sin);
        let facing = 0.55 + 0.45 * (theta - s.normal_rad).cos();
        let amp = s.amplitude * facing * if night { 1.3 } else { 1.0 };
        add_gaussian(&mut img, ox + sx, oy - s.pos[1], s.sigma, amp);
    }
    if config.noise_sigma > 0.0 {
        for v in &mut img {
            *v += config.noise_sigma * normal(&mut rng);
        }
    }
    img.iter().map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8).collect()
}

fn add_gaussian(img: &mut [f64], cx: f64, cy: f64, sigma: f64, amp: f64) {
    let inv = 1.0 / (2.0 * sigma * sigma);
    let reach = (3.0 * sigma).ceil() as i64;
    let (r0, r1) = ((cy as i64 - reach).max(0), (cy as i64 + reach + 1).min(IMAGE_SIZE as i64));
    let (c0, c1) = ((cx as i64 - reach).max(0), (cx as i64 + reach + 1).min(IMAGE_SIZE as i64));
    for r in r0..r1 {
        for c in c0..c1 {
            let (dx, dy) = (c as f64 + 0.5 - cx, r as f64 + 0.5 - cy);
            img[r as usize * IMAGE_SIZE + c as usize] += amp * (-(dx * dx + dy * dy) * inv).exp();
        }
    }
}

/// One rendered view with its metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthView {
    pub key: SampleKey,
    pub pixels: Vec<u8>,
}

/// Relative file name used for a view inside an output directory.
pub fn view_file_name(key: &SampleKey) -> String {
    format!(
        "class{:02}/az{:06.2}_{}.png",
        key.class_id,
        key.azimuth_deg,
        if key.day_night == DayNight::Day { "day" } else { "night" }
    )
}

/// Every view of every class, ordered by class, regime, azimuth.
pub fn synth_render(config: &SynthConfig) -> Result<Vec<SynthView>> {
    config.validate()?;
    let step = config.step_deg();
    let mut views = Vec::with_capacity((config.n_classes * config.views_per_circle * config.regimes as u32) as usize);
    for class_id in 0..config.n_classes {
        let model = ObjectModel::for_class(config.seed, class_id);
        for regime in 0..config.regimes {
            let day_night = DayNight::from_flag(regime)?;
            for v in 0..config.views_per_circle {
                let key = SampleKey {
                    class_id,
                    azimuth_deg: v as f64 * step,
                    day_night,
                    range_m: config.range_m,
                };
                views.push(SynthView {
                    pixels: render_view(config, &model, &key),
                    key,
                });
            }
        }
    }
    Ok(views)
}
