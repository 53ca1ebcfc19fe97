//! View samples, pose encoding, training-pair generation and splitting.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::fmt;

#[cfg_attr(feature = "std", allow(unused_imports))]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::rng::{seeded, shuffle, stream};

pub const IMAGE_SIZE: usize = 64;
pub const IMAGE_PIXELS: usize = IMAGE_SIZE * IMAGE_SIZE;
pub const POSE_DIM: usize = 5;

/// Single-channel 64×64 view, row-major, values in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Raster(Vec<f32>);

impl Raster {
    pub fn from_vec(data: Vec<f32>) -> Result<Self> {
        Error::check_len("raster", IMAGE_PIXELS, data.len())?;
        Ok(Raster(data))
    }

    pub fn filled(value: f32) -> Self {
        Raster(vec![value; IMAGE_PIXELS])
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.0
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.0[row * IMAGE_SIZE + col]
    }

    pub fn in_range(&self) -> bool {
        self.0.iter().all(|v| (-1.0..=1.0).contains(v))
    }

    pub fn clipped(mut self) -> Self {
        self.0.iter_mut().for_each(|v| *v = v.clamp(-1.0, 1.0));
        self
    }
}

/// `raw / 127.5 - 1` elementwise, mapping 8-bit grey levels onto the tanh
/// output range.
pub fn normalize_image(raw: &[u8]) -> Result<Raster> {
    Error::check_len("raw raster", IMAGE_PIXELS, raw.len())?;
    Ok(Raster(raw.iter().map(|&v| v as f32 / 127.5 - 1.0).collect()))
}

/// Inverse of [`normalize_image`] with rounding to the nearest grey level;
/// out-of-range values saturate.
pub fn denormalize_image(image: &Raster) -> Vec<u8> {
    image
        .0
        .iter()
        .map(|&v| ((v + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DayNight {
    Day = 0,
    Night = 1,
}

impl DayNight {
    pub fn from_flag(flag: u8) -> Result<Self> {
        match flag {
            0 => Ok(DayNight::Day),
            1 => Ok(DayNight::Night),
            other => Err(Error::domain(format!("day/night flag must be 0 or 1, got {other}"))),
        }
    }

    pub fn flag(self) -> u8 {
        self as u8
    }
}

/// Metadata identifying one view in a corpus.
#[derive(Debug, Clone, Copy)]
pub struct SampleKey {
    pub class_id: u32,
    pub azimuth_deg: f64,
    pub day_night: DayNight,
    pub range_m: f64,
}

impl SampleKey {
    fn cmp_key(&self, other: &Self) -> Ordering {
        self.class_id
            .cmp(&other.class_id)
            .then(self.azimuth_deg.total_cmp(&other.azimuth_deg))
            .then(self.day_night.cmp(&other.day_night))
            .then(self.range_m.total_cmp(&other.range_m))
    }
}

impl PartialEq for SampleKey {
    fn eq(&self, other: &Self) -> bool {
        self.cmp_key(other) == Ordering::Equal
    }
}

impl Eq for SampleKey {}

impl PartialOrd for SampleKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for SampleKey {
    fn cmp(&self, other: &Self) -> Ordering {
        self.cmp_key(other)
    }
}

impl fmt::Display for SampleKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "(class {}, azimuth {}°, {}, range {} m)",
            self.class_id,
            self.azimuth_deg,
            if self.day_night == DayNight::Day { "day" } else { "night" },
            self.range_m
        )
    }
}

/// Anything carrying view metadata: samples, manifest rows, bare keys.
pub trait ViewMeta {
    fn key(&self) -> SampleKey;
}

impl ViewMeta for SampleKey {
    fn key(&self) -> SampleKey {
        *self
    }
}

/// One labeled grayscale view.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewSample {
    pub image: Raster,
    pub class_id: u32,
    pub azimuth_deg: f64,
    pub day_night: DayNight,
    pub range_m: f64,
}

impl ViewMeta for ViewSample {
    fn key(&self) -> SampleKey {
        SampleKey {
            class_id: self.class_id,
            azimuth_deg: self.azimuth_deg,
            day_night: self.day_night,
            range_m: self.range_m,
        }
    }
}

impl ViewSample {
    /// Raster range and azimuth bounds; with `step`, also the azimuth grid.
    pub fn validate(&self, step_deg: Option<f64>) -> Result<()> {
        if !self.image.in_range() {
            return Err(Error::domain("raster values outside [-1, 1]"));
        }
        check_azimuth(self.azimuth_deg)?;
        if let Some(step) = step_deg {
            check_on_grid(self.azimuth_deg, step)?;
        }
        Ok(())
    }
}

fn check_azimuth(deg: f64) -> Result<()> {
    if deg.is_finite() && (0.0..360.0).contains(&deg) {
        Ok(())
    } else {
        Err(Error::domain(format!("azimuth {deg} outside [0, 360)")))
    }
}

fn is_multiple(value: f64, step: f64) -> bool {
    let q = value / step;
    (q - q.round()).abs() < 1e-9
}

fn check_on_grid(deg: f64, step: f64) -> Result<()> {
    if is_multiple(deg, step) {
        Ok(())
    } else {
        Err(Error::domain(format!("azimuth {deg} is not a multiple of the {step}° step")))
    }
}

/// Pose conditioning vector:
/// `[sin t, cos t, sin Δ, cos Δ, target day/night]` with `t` the target
/// azimuth and `Δ = (target − input) mod 360`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseVector(pub [f64; POSE_DIM]);

impl PoseVector {
    pub fn as_f32(&self) -> [f32; POSE_DIM] {
        self.0.map(|v| v as f32)
    }

    pub fn check(&self) -> Result<()> {
        let v = &self.0;
        let unit = |a: f64, b: f64| (a * a + b * b - 1.0).abs() <= 1e-6;
        if !unit(v[0], v[1]) || !unit(v[2], v[3]) {
            return Err(Error::domain("pose angle entries are not unit sin/cos pairs"));
        }
        if v[4] != 0.0 && v[4] != 1.0 {
            return Err(Error::domain("pose regime flag must be 0 or 1"));
        }
        Ok(())
    }
}

pub fn encode_pose(input_azimuth_deg: f64, target_azimuth_deg: f64, target: DayNight) -> Result<PoseVector> {
    check_azimuth(input_azimuth_deg)?;
    check_azimuth(target_azimuth_deg)?;
    let t = target_azimuth_deg.to_radians();
    let delta = wrap_deg(target_azimuth_deg - input_azimuth_deg).to_radians();
    Ok(PoseVector([
        t.sin(),
        t.cos(),
        delta.sin(),
        delta.cos(),
        target.flag() as f64,
    ]))
}

/// A training unit: indices of the input and target views in the corpus the
/// pairs were generated from, plus the pose that maps one to the other.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViewPair {
    pub input: usize,
    pub target: usize,
    pub pose: PoseVector,
}

impl ViewPair {
    /// Type invariants against the corpus: same class, pose consistent with
    /// a fresh [`encode_pose`].
    pub fn check<M: ViewMeta>(&self, corpus: &[M]) -> Result<()> {
        let (a, b) = (corpus[self.input].key(), corpus[self.target].key());
        if a.class_id != b.class_id {
            return Err(Error::domain("pair crosses object classes"));
        }
        let want = encode_pose(a.azimuth_deg, b.azimuth_deg, b.day_night)?;
        if want != self.pose {
            return Err(Error::domain("pair pose disagrees with its views"));
        }
        Ok(())
    }
}

/// Angle folded into [0, 360).
pub fn wrap_deg(deg: f64) -> f64 {
    num_traits::Euclid::rem_euclid(&deg, &360.0)
}

/// Smallest angle between two azimuths, in [0, 180].
pub fn angular_distance(a_deg: f64, b_deg: f64) -> f64 {
    let d = wrap_deg((a_deg - b_deg).abs());
    d.min(360.0 - d)
}

/// Every ordered pair of distinct same-class views within `max_delta_deg` of
/// each other, optionally crossing day/night. Sorted by class, input azimuth,
/// target azimuth, input regime, target regime, then corpus order.
pub fn generate_pairs<M: ViewMeta>(
    corpus: &[M],
    step_deg: f64,
    max_delta_deg: f64,
    cross_regime: bool,
) -> Result<Vec<ViewPair>> {
    if !(step_deg > 0.0) {
        return Err(Error::domain("angular step must be positive"));
    }
    if max_delta_deg < step_deg {
        return Ok(Vec::new());
    }
    if !is_multiple(max_delta_deg, step_deg) {
        return Err(Error::domain(format!(
            "max delta {max_delta_deg}° is not a multiple of the {step_deg}° step"
        )));
    }
    let keys: Vec<SampleKey> = corpus.iter().map(ViewMeta::key).collect();
    let mut by_class: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, k) in keys.iter().enumerate() {
        by_class.entry(k.class_id).or_default().push(i);
    }
    let mut pairs = Vec::new();
    for members in by_class.values() {
        let mut order = members.clone();
        order.sort_by(|&a, &b| {
            keys[a]
                .azimuth_deg
                .total_cmp(&keys[b].azimuth_deg)
                .then(keys[a].day_night.cmp(&keys[b].day_night))
                .then(a.cmp(&b))
        });
        let mut class_pairs = Vec::new();
        for &i in &order {
            for &j in &order {
                let (a, b) = (&keys[i], &keys[j]);
                if i == j
                    || (!cross_regime && a.day_night != b.day_night)
                    || angular_distance(a.azimuth_deg, b.azimuth_deg) > max_delta_deg + 1e-9
                {
                    continue;
                }
                class_pairs.push((i, j));
            }
        }
        class_pairs.sort_by(|&(i1, j1), &(i2, j2)| {
            let (a1, b1, a2, b2) = (&keys[i1], &keys[j1], &keys[i2], &keys[j2]);
            a1.azimuth_deg
                .total_cmp(&a2.azimuth_deg)
                .then(b1.azimuth_deg.total_cmp(&b2.azimuth_deg))
                .then(a1.day_night.cmp(&a2.day_night))
                .then(b1.day_night.cmp(&b2.day_night))
                .then(i1.cmp(&i2))
                .then(j1.cmp(&j2))
        });
        for (i, j) in class_pairs {
            let pose = encode_pose(keys[i].azimuth_deg, keys[j].azimuth_deg, keys[j].day_night)?;
            pairs.push(ViewPair {
                input: i,
                target: j,
                pose,
            });
        }
    }
    Ok(pairs)
}

/// Seeded split that keeps every target view on one side: pairs are grouped
/// by target, groups are shuffled, and whole groups fill the test side up to
/// `round(test_fraction · len)` pairs. Within each side the input order is
/// preserved.
pub fn split_train_test(
    pairs: &[ViewPair],
    test_fraction: f64,
    seed: u64,
) -> Result<(Vec<ViewPair>, Vec<ViewPair>)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::domain(format!("test fraction {test_fraction} outside (0, 1)")));
    }
    let mut group_size: BTreeMap<usize, usize> = BTreeMap::new();
    for p in pairs {
        *group_size.entry(p.target).or_default() += 1;
    }
    let mut targets: Vec<usize> = group_size.keys().copied().collect();
    shuffle(&mut targets, &mut seeded(seed, stream::SPLIT));
    let want = (test_fraction * pairs.len() as f64).round() as usize;
    let mut test_targets = BTreeSet::new();
    let mut taken = 0;
    for t in targets {
        if taken == want {
            break;
        }
        let size = group_size[&t];
        if taken + size <= want {
            taken += size;
            test_targets.insert(t);
        }
    }
    let (test, train): (Vec<ViewPair>, Vec<ViewPair>) =
        pairs.iter().partition(|p| test_targets.contains(&p.target));
    Ok((train, test))
}

/// One manifest row.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRecord {
    pub path: String,
    pub class_id: u32,
    pub azimuth_deg: f64,
    pub day_night: DayNight,
    pub range_m: f64,
}

impl ViewMeta for ManifestRecord {
    fn key(&self) -> SampleKey {
        SampleKey {
            class_id: self.class_id,
            azimuth_deg: self.azimuth_deg,
            day_night: self.day_night,
            range_m: self.range_m,
        }
    }
}

/// Labeled view corpus description. `params` carries free-form generator
/// settings (recorded as comment lines on disk).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetManifest {
    pub records: Vec<ManifestRecord>,
    pub angular_step_deg: f64,
    pub params: Vec<(String, String)>,
}

impl DatasetManifest {
    /// Metadata invariants: positive step, azimuths on the grid, no duplicate
    /// keys. File existence is checked by whoever reads the files.
    pub fn validate(&self) -> Result<()> {
        if !(self.angular_step_deg > 0.0 && self.angular_step_deg <= 360.0) {
            return Err(Error::domain(format!(
                "angular step {} outside (0, 360]",
                self.angular_step_deg
            )));
        }
        let mut seen = BTreeSet::new();
        for r in &self.records {
            check_azimuth(r.azimuth_deg)?;
            check_on_grid(r.azimuth_deg, self.angular_step_deg)?;
            if !r.range_m.is_finite() || r.range_m < 0.0 {
                return Err(Error::domain(format!("bad range {} m", r.range_m)));
            }
            if !seen.insert(r.key()) {
                return Err(Error::DuplicateKey(r.key()));
            }
        }
        Ok(())
    }

    pub fn class_ids(&self) -> Vec<u32> {
        let set: BTreeSet<u32> = self.records.iter().map(|r| r.class_id).collect();
        set.into_iter().collect()
    }

    pub fn param(&self, key: &str) -> Option<&str> {
        self.params.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }
}
