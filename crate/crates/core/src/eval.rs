//! Evaluation: average test error, generated-view corpora, low-shot
//! classification with one class substituted by generated views, and
//! embedding export / cluster analysis.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::classifier::{Classifier, ClassifierConfig, ConfusionMatrix};
use crate::data::{angular_distance, encode_pose, wrap_deg, DayNight, Raster, ViewMeta, ViewPair, ViewSample};
use crate::error::{Error, Result};
use crate::loss::{mse, LossBreakdown};
use crate::model::{Network, NetworkKind};
use crate::rng::{seeded, shuffle, stream};
use crate::silhouette::silhouette_score;
use crate::train::{pair_batch, EmbeddingTable, EVAL_BATCH};
use crate::tsne::{tsne, TsneConfig, TsneResult};
use crate::weights::WeightsHandle;

/// Errors of one test pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairError {
    pub loss: LossBreakdown,
    /// Mean absolute per-pixel error of the predicted view.
    pub mae: f64,
}

/// Mean errors over a set of pairs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorSummary {
    pub pairs: usize,
    pub embedding: f64,
    pub output: f64,
    pub total: f64,
    pub mae: f64,
}

impl ErrorSummary {
    fn of<'a>(errors: impl Iterator<Item = &'a PairError>) -> Self {
        let mut s = ErrorSummary {
            pairs: 0,
            embedding: 0.0,
            output: 0.0,
            total: 0.0,
            mae: 0.0,
        };
        for e in errors {
            s.pairs += 1;
            s.embedding += e.loss.embedding;
            s.output += e.loss.output;
            s.total += e.loss.total;
            s.mae += e.mae;
        }
        let n = s.pairs.max(1) as f64;
        s.embedding /= n;
        s.output /= n;
        s.total /= n;
        s.mae /= n;
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunMeta {
    pub seed: u64,
    pub checkpoint_id: String,
    pub label: String,
}

/// Test-set error of one trained predictor. `overall.output` (`L_o`) is the
/// headline number.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub meta: RunMeta,
    pub overall: ErrorSummary,
    pub per_class: BTreeMap<u32, ErrorSummary>,
    pub per_pair: Vec<PairError>,
}

impl EvalReport {
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "run {} (seed {}, checkpoint {})\n{:<8}{:>8}{:>14}{:>14}{:>14}{:>14}\n",
            self.meta.label, self.meta.seed, self.meta.checkpoint_id, "class", "pairs", "L_o", "L_e", "L_t", "mae"
        );
        let row = |name: &str, e: &ErrorSummary| {
            format!(
                "{:<8}{:>8}{:>14.6e}{:>14.6e}{:>14.6e}{:>14.6e}\n",
                name, e.pairs, e.output, e.embedding, e.total, e.mae
            )
        };
        for (c, e) in &self.per_class {
            s += &row(&format!("{c}"), e);
        }
        s += &row("all", &self.overall);
        s
    }

    /// One `key=value` record per line: the overall summary, then each class.
    pub fn to_records(&self) -> String {
        let rec = |scope: &str, e: &ErrorSummary| {
            format!(
                "label={} seed={} checkpoint={} scope={} pairs={} L_o={:e} L_e={:e} L_t={:e} mae={:e}\n",
                self.meta.label,
                self.meta.seed,
                self.meta.checkpoint_id,
                scope,
                e.pairs,
                e.output,
                e.embedding,
                e.total,
                e.mae
            )
        };
        let mut s = rec("all", &self.overall);
        for (c, e) in &self.per_class {
            s += &rec(&format!("class{c}"), e);
        }
        s
    }
}

fn require_predictor(net: &Network, weights: &WeightsHandle<f32>) -> Result<()> {
    if net.kind() != NetworkKind::Predictor {
        return Err(Error::domain("evaluation needs a predictor network"));
    }
    net.check_weights(weights)
}

/// Per-pair errors of `pairs`, in order.
pub fn pair_errors(
    net: &Network,
    weights: &WeightsHandle<f32>,
    corpus: &[ViewSample],
    pairs: &[ViewPair],
    table: &EmbeddingTable,
) -> Result<Vec<PairError>> {
    require_predictor(net, weights)?;
    let dim = net.embedding_dim();
    let px = net.image_len();
    let mut out = Vec::with_capacity(pairs.len());
    for start in (0..pairs.len()).step_by(EVAL_BATCH) {
        let end = (start + EVAL_BATCH).min(pairs.len());
        let b = pair_batch(net, corpus, pairs, start..end, Some(table))?;
        let trace = net.forward(weights, &b.images, b.poses.as_deref(), b.n)?;
        let e2 = b.target_embeddings.as_deref().expect("table given");
        for s in 0..b.n {
            let y = &trace.output()[s * px..(s + 1) * px];
            let t = &b.targets[s * px..(s + 1) * px];
            let l_e = mse(&trace.fused()[s * dim..(s + 1) * dim], &e2[s * dim..(s + 1) * dim])?;
            let l_o = mse(y, t)?;
            let mae = y.iter().zip(t).map(|(&a, &b)| (a as f64 - b as f64).abs()).sum::<f64>() / px as f64;
            out.push(PairError {
                loss: LossBreakdown::new(l_e, l_o),
                mae,
            });
        }
    }
    Ok(out)
}

/// Mean `L_o` (with `L_e`, `L_t` and mean absolute error alongside) over the
/// test pairs, overall and per class.
pub fn average_test_error(
    net: &Network,
    weights: &WeightsHandle<f32>,
    corpus: &[ViewSample],
    test_pairs: &[ViewPair],
    table: &EmbeddingTable,
    meta: RunMeta,
) -> Result<EvalReport> {
    if test_pairs.is_empty() {
        return Err(Error::domain("test set is empty"));
    }
    let per_pair = pair_errors(net, weights, corpus, test_pairs, table)?;
    let mut by_class: BTreeMap<u32, Vec<PairError>> = BTreeMap::new();
    for (p, e) in test_pairs.iter().zip(&per_pair) {
        by_class.entry(corpus[p.target].class_id).or_default().push(*e);
    }
    Ok(EvalReport {
        meta,
        overall: ErrorSummary::of(per_pair.iter()),
        per_class: by_class.into_iter().map(|(c, v)| (c, ErrorSummary::of(v.iter()))).collect(),
        per_pair,
    })
}

/// Generated rasters whose pixel variance falls below this are rejected as
/// the output of an untrained network.
pub const MIN_GENERATED_VARIANCE: f64 = 1e-6;

/// Predicts every `target_poses` view (azimuth, regime) from every seed
/// image; seeds-major order. All seeds must share one class.
pub fn generate_class_corpus(
    net: &Network,
    weights: &WeightsHandle<f32>,
    seeds: &[ViewSample],
    target_poses: &[(f64, DayNight)],
) -> Result<Vec<ViewSample>> {
    let jobs: Vec<(&ViewSample, f64, DayNight)> = seeds
        .iter()
        .flat_map(|s| target_poses.iter().map(move |&(az, dn)| (s, az, dn)))
        .collect();
    predict_views(net, weights, &jobs)
}

/// Predicts one view per `(seed, target azimuth, target regime)` job, in job
/// order, labelled with the seed's class. All seeds must share one class.
pub fn predict_views(
    net: &Network,
    weights: &WeightsHandle<f32>,
    jobs: &[(&ViewSample, f64, DayNight)],
) -> Result<Vec<ViewSample>> {
    require_predictor(net, weights)?;
    let first = jobs.first().ok_or_else(|| Error::domain("generation needs at least one seed image"))?.0;
    if jobs.iter().any(|j| j.0.class_id != first.class_id) {
        return Err(Error::domain("seed images span more than one class"));
    }
    let px = net.image_len();
    let mut out = Vec::with_capacity(jobs.len());
    let (mut sum, mut sum_sq, mut count) = (0.0f64, 0.0f64, 0usize);
    for chunk in jobs.chunks(EVAL_BATCH) {
        let mut images = Vec::with_capacity(chunk.len() * px);
        let mut poses = Vec::with_capacity(chunk.len() * 5);
        for &(s, az, dn) in chunk {
            images.extend_from_slice(s.image.as_slice());
            poses.extend(encode_pose(s.azimuth_deg, az, dn)?.as_f32());
        }
        let trace = net.forward(weights, &images, Some(&poses), chunk.len())?;
        for (&(s, az, dn), y) in chunk.iter().zip(trace.output().chunks_exact(px)) {
            for &v in y {
                sum += v as f64;
                sum_sq += (v as f64) * (v as f64);
            }
            count += px;
            out.push(ViewSample {
                image: Raster::from_vec(y.to_vec())?.clipped(),
                class_id: s.class_id,
                azimuth_deg: wrap_deg(az),
                day_night: dn,
                range_m: s.range_m,
            });
        }
    }
    let mean = sum / count as f64;
    let variance = sum_sq / count as f64 - mean * mean;
    if !(variance >= MIN_GENERATED_VARIANCE) {
        return Err(Error::Degenerate(format!(
            "generated pixel variance {variance:e} below {MIN_GENERATED_VARIANCE:e}; are the weights trained?"
        )));
    }
    Ok(out)
}

/// Chooses a seed for every view of one circle so that each prediction stays
/// within the angular window the predictor was trained on.
///
/// Seeds are every `k`-th view in azimuth order, `k = max_delta / step`. Each
/// view takes the nearest seed other than itself within `max_delta_deg`,
/// falling back to the nearest seed at all. Returns, per input view, the
/// index of its seed.
pub fn assign_seeds(azimuths: &[f64], step_deg: f64, max_delta_deg: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..azimuths.len()).collect();
    order.sort_by(|&a, &b| azimuths[a].total_cmp(&azimuths[b]).then(a.cmp(&b)));
    let k = (num_traits::Float::round(max_delta_deg / step_deg) as usize).max(1);
    let seeds: Vec<usize> = order.iter().copied().step_by(k).collect();
    (0..azimuths.len())
        .map(|v| {
            let dist = |s: usize| angular_distance(azimuths[v], azimuths[s]);
            let nearest = |pool: &mut dyn Iterator<Item = usize>| {
                pool.min_by(|&a, &b| dist(a).total_cmp(&dist(b)).then(azimuths[a].total_cmp(&azimuths[b])))
            };
            let tol = max_delta_deg + 1e-9;
            nearest(&mut seeds.iter().copied().filter(|&s| s != v && dist(s) <= tol))
                .or_else(|| nearest(&mut seeds.iter().copied()))
                .expect("at least one seed")
        })
        .collect()
}

/// Per-class random hold-out: `fraction` of every class (at least one
/// sample) goes to the test side. Both sides keep corpus order.
pub fn classifier_split(corpus: &[ViewSample], fraction: f64, seed: u64) -> Result<(Vec<ViewSample>, Vec<ViewSample>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::domain(format!("test fraction {fraction} not in (0, 1)")));
    }
    let mut by_class: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, s) in corpus.iter().enumerate() {
        by_class.entry(s.class_id).or_default().push(i);
    }
    let mut rng = seeded(seed, stream::CLASSIFIER_SPLIT);
    let mut is_test = alloc::vec![false; corpus.len()];
    for (class, mut idx) in by_class {
        if idx.len() < 2 {
            return Err(Error::domain(format!("class {class} has fewer than two samples to split")));
        }
        shuffle(&mut idx, &mut rng);
        let n_test = (num_traits::Float::round(idx.len() as f64 * fraction) as usize).clamp(1, idx.len() - 1);
        idx[..n_test].iter().for_each(|&i| is_test[i] = true);
    }
    let (test, train): (Vec<_>, Vec<_>) = corpus.iter().cloned().zip(is_test).partition(|(_, t)| *t);
    Ok((train.into_iter().map(|(s, _)| s).collect(), test.into_iter().map(|(s, _)| s).collect()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LowShotReport {
    pub substituted_class: u32,
    pub accuracy_substituted: f64,
    pub accuracy_all_real: f64,
    pub confusion_substituted: ConfusionMatrix,
    pub confusion_all_real: ConfusionMatrix,
    pub train_size_all_real: usize,
    pub train_size_substituted: usize,
    pub test_size: usize,
}

impl LowShotReport {
    pub fn substituted_recall(&self) -> f64 {
        self.confusion_substituted.recall(self.substituted_class).unwrap_or(0.0)
    }

    pub fn to_text(&self) -> String {
        format!(
            "substituted class {}\ntrain sizes: all-real {}, substituted {}; test size {}\n\
             accuracy all-real {:.4}\naccuracy substituted {:.4}\nsubstituted-class recall {:.4}\n\
             confusion (all real):\n{}confusion (substituted):\n{}",
            self.substituted_class,
            self.train_size_all_real,
            self.train_size_substituted,
            self.test_size,
            self.accuracy_all_real,
            self.accuracy_substituted,
            self.substituted_recall(),
            self.confusion_all_real.to_table(),
            self.confusion_substituted.to_table(),
        )
    }
}

/// Trains two identically seeded classifiers — one on the real training
/// split, one with `substituted_class`'s real training images replaced by
/// `generated` — and scores both on the same real test split.
pub fn low_shot_eval(
    real_corpus: &[ViewSample],
    substituted_class: u32,
    generated: &[ViewSample],
    config: &ClassifierConfig,
) -> Result<LowShotReport> {
    config.validate()?;
    if generated.is_empty() || generated.iter().any(|s| s.class_id != substituted_class) {
        return Err(Error::domain(format!(
            "generated corpus must be non-empty and cover only class {substituted_class}"
        )));
    }
    if !real_corpus.iter().any(|s| s.class_id == substituted_class) {
        return Err(Error::domain(format!("class {substituted_class} absent from the real corpus")));
    }
    let (train, test) = classifier_split(real_corpus, config.test_fraction, config.seed)?;
    let (subst_real, others): (Vec<_>, Vec<_>) = train.into_iter().partition(|s| s.class_id == substituted_class);
    let all_real: Vec<ViewSample> = others.iter().chain(&subst_real).cloned().collect();
    let substituted: Vec<ViewSample> = others.iter().chain(generated).cloned().collect();
    let classes: Vec<u32> = real_corpus.iter().map(|s| s.class_id).collect();

    let run = |train: &[ViewSample]| -> Result<ConfusionMatrix> {
        let mut clf = Classifier::new(config, classes.clone())?;
        clf.train(train)?;
        clf.evaluate(&test)
    };
    let confusion_all_real = run(&all_real)?;
    let confusion_substituted = run(&substituted)?;
    Ok(LowShotReport {
        substituted_class,
        accuracy_substituted: confusion_substituted.accuracy(),
        accuracy_all_real: confusion_all_real.accuracy(),
        confusion_substituted,
        confusion_all_real,
        train_size_all_real: all_real.len(),
        train_size_substituted: substituted.len(),
        test_size: test.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    PreFusion,
    PostFusion,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::PreFusion => "pre_fusion",
            Stage::PostFusion => "post_fusion",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "pre_fusion" => Some(Stage::PreFusion),
            "post_fusion" => Some(Stage::PostFusion),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRecord {
    pub vector: Vec<f32>,
    pub class_id: u32,
    pub day_night: DayNight,
    pub stage: Stage,
}

/// Conditioning used for the post-fusion export.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ExportPose {
    /// The pose mapping each sample onto itself.
    Identity,
    /// Target azimuth offset from the sample's own by this many degrees,
    /// same regime.
    Offset(f64),
}

impl ExportPose {
    /// Identity plus the fixed quarter-turn offset.
    pub const STANDARD: [ExportPose; 2] = [ExportPose::Identity, ExportPose::Offset(90.0)];

    pub fn name(self) -> String {
        match self {
            ExportPose::Identity => String::from("identity"),
            ExportPose::Offset(d) => format!("offset{d}"),
        }
    }
}

/// For every sample, its pre-fusion embedding followed by its post-fusion
/// latent under `pose`: `2n` records, sample-major.
pub fn export_embeddings(
    net: &Network,
    weights: &WeightsHandle<f32>,
    samples: &[ViewSample],
    pose: ExportPose,
) -> Result<Vec<EmbeddingRecord>> {
    require_predictor(net, weights)?;
    let dim = net.embedding_dim();
    let px = net.image_len();
    let mut out = Vec::with_capacity(2 * samples.len());
    for chunk in samples.chunks(EVAL_BATCH) {
        let mut images = Vec::with_capacity(chunk.len() * px);
        let mut poses = Vec::with_capacity(chunk.len() * 5);
        for s in chunk {
            images.extend_from_slice(s.image.as_slice());
            let target = match pose {
                ExportPose::Identity => s.azimuth_deg,
                ExportPose::Offset(d) => s.azimuth_deg + d,
            };
            poses.extend(encode_pose(s.azimuth_deg, wrap_deg(target), s.day_night)?.as_f32());
        }
        let emb = net.encode_batch(weights, &images, chunk.len())?;
        let feat = net.pose_branch_batch(weights, &poses, chunk.len())?;
        let fused = net.fuse_batch(weights, &emb, &feat, chunk.len())?;
        for (i, s) in chunk.iter().enumerate() {
            for (stage, src) in [(Stage::PreFusion, &emb), (Stage::PostFusion, &fused)] {
                let vector = src[i * dim..(i + 1) * dim].to_vec();
                if vector.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite {
                        step: 0,
                        detail: format!("{} embedding of {}", stage.as_str(), s.key()),
                    });
                }
                out.push(EmbeddingRecord {
                    vector,
                    class_id: s.class_id,
                    day_night: s.day_night,
                    stage,
                });
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelKey {
    Class,
    ClassDayNight,
}

impl LabelKey {
    pub fn label(self, r: &EmbeddingRecord) -> (u32, u8) {
        match self {
            LabelKey::Class => (r.class_id, 0),
            LabelKey::ClassDayNight => (r.class_id, r.day_night.flag()),
        }
    }
}

fn single_stage(records: &[EmbeddingRecord]) -> Result<()> {
    match records.first() {
        Some(first) if records.iter().all(|r| r.stage == first.stage) => Ok(()),
        Some(_) => Err(Error::domain("records mix pre- and post-fusion stages")),
        None => Err(Error::domain("no embedding records")),
    }
}

/// Mean silhouette of one stage's records under the chosen labeling.
pub fn silhouette(records: &[EmbeddingRecord], key: LabelKey) -> Result<f64> {
    single_stage(records)?;
    let points: Vec<&[f32]> = records.iter().map(|r| r.vector.as_slice()).collect();
    let labels: Vec<(u32, u8)> = records.iter().map(|r| key.label(r)).collect();
    silhouette_score(&points, &labels)
}

/// 2-D exact t-SNE of one stage's records.
pub fn tsne_project(records: &[EmbeddingRecord], perplexity: f64, iterations: usize, seed: u64) -> Result<TsneResult> {
    single_stage(records)?;
    let dim = records[0].vector.len();
    if records.iter().any(|r| r.vector.len() != dim) {
        return Err(Error::domain("records have differing embedding lengths"));
    }
    let data: Vec<f64> = records.iter().flat_map(|r| r.vector.iter().map(|&v| v as f64)).collect();
    let config = TsneConfig {
        perplexity,
        iterations,
        seed,
        ..TsneConfig::default()
    };
    tsne(&data, records.len(), dim, &config)
}

/// Records of one stage, in order.
pub fn stage_records(records: &[EmbeddingRecord], stage: Stage) -> Vec<EmbeddingRecord> {
    records.iter().filter(|r| r.stage == stage).cloned().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn seeds_stay_inside_the_window() {
        let az: Vec<f64> = (0..24).map(|i| i as f64 * 15.0).collect();
        let plan = assign_seeds(&az, 15.0, 45.0);
        for (v, &s) in plan.iter().enumerate() {
            assert_ne!(v, s);
            assert!(angular_distance(az[v], az[s]) <= 45.0);
        }
        let distinct: alloc::collections::BTreeSet<_> = plan.iter().collect();
        assert_eq!(distinct.len(), 8);
    }

    #[test]
    fn full_window_uses_a_single_seed() {
        let az = vec![30.0, 0.0, 90.0, 270.0];
        let plan = assign_seeds(&az, 30.0, 360.0);
        assert_eq!(plan, vec![1, 1, 1, 1]);
    }
}
