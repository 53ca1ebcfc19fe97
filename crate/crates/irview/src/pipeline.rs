//! The end-to-end steps behind each CLI subcommand. Every step reads its
//! inputs from files or earlier steps' values and writes its outputs under
//! one directory.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use irview_core::data::{DayNight, ViewMeta};
use irview_core::eval::{
    self, classifier_split, EmbeddingRecord, EvalReport, ExportPose, LabelKey, LowShotReport, RunMeta, Stage,
};
use irview_core::model::NetworkKind;
use irview_core::synth::{synth_render, view_file_name};
use irview_core::train::{self, EmbeddingTable, TrainingRun};
use irview_core::tsne::TsneResult;
use irview_core::{
    generate_pairs, split_train_test, DatasetManifest, ManifestRecord, Network, ViewPair, ViewSample,
};

use crate::checkpoint::Checkpoint;
use crate::config::{PredictorInit, RunConfig};
use crate::error::{Error, Result};
use crate::manifest::{self, Corpus};
use crate::plot::{self, PointLabel};
use crate::records;
use crate::trainlog::TrainLog;
use crate::png_io;

pub const MANIFEST: &str = "manifest.csv";
pub const VANILLA_CKPT: &str = "vanilla.ckpt";
pub const PREDICTOR_CKPT: &str = "predictor.ckpt";
pub const EMBEDDING_TABLE: &str = "target_embeddings.csv";
pub const RUNSPEC: &str = "runspec";

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(Error::io(dir))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(Error::io(path))
}

/// Records the subcommand, its inputs and the fully resolved config.
pub fn write_runspec(out: &Path, subcommand: &str, inputs: &[(&str, String)], cfg: &RunConfig) -> Result<()> {
    let mut s = format!("subcommand = {subcommand}\ncode_version = {}\n", crate::checkpoint::code_version());
    for (k, v) in inputs {
        s += &format!("input.{k} = {v}\n");
    }
    s += &cfg.to_text();
    write(&out.join(RUNSPEC), &s)
}

/// Renders the synthetic corpus: one PNG per view plus the manifest.
pub fn synth_data(cfg: &RunConfig, out: &Path) -> Result<PathBuf> {
    let synth = cfg.synth();
    let views = synth_render(&synth)?;
    let mut m = DatasetManifest {
        records: Vec::with_capacity(views.len()),
        angular_step_deg: synth.step_deg(),
        params: synth.params(),
    };
    for v in &views {
        let rel = view_file_name(&v.key);
        let path = out.join(&rel);
        if let Some(parent) = path.parent() {
            create_dir(parent)?;
        }
        png_io::write_gray(&path, &v.pixels, 64, 64)?;
        m.records.push(ManifestRecord {
            path: rel,
            class_id: v.key.class_id,
            azimuth_deg: v.key.azimuth_deg,
            day_night: v.key.day_night,
            range_m: v.key.range_m,
        });
    }
    let path = out.join(MANIFEST);
    manifest::write(&path, &m)?;
    Ok(path)
}

#[derive(Debug, Clone)]
pub struct PairSets {
    pub all: Vec<ViewPair>,
    pub train: Vec<ViewPair>,
    pub test: Vec<ViewPair>,
}

/// Pairs of the corpus and their target-disjoint train/test split.
pub fn make_pairs(corpus: &Corpus, cfg: &RunConfig) -> Result<PairSets> {
    let all = generate_pairs(
        &corpus.samples,
        corpus.manifest.angular_step_deg,
        cfg.max_delta_deg,
        cfg.cross_regime,
    )?;
    let (train, test) = split_train_test(&all, cfg.test_fraction, cfg.seed)?;
    Ok(PairSets { all, train, test })
}

/// Views referenced by the training pairs (inputs or targets), corpus order.
/// Block 1 never sees a test-only target.
pub fn training_views(samples: &[ViewSample], train_pairs: &[ViewPair]) -> Vec<ViewSample> {
    let used: BTreeSet<usize> = train_pairs.iter().flat_map(|p| [p.input, p.target]).collect();
    used.into_iter().map(|i| samples[i].clone()).collect()
}

pub fn train_vanilla(cfg: &RunConfig, corpus: &Corpus, out: &Path, echo: bool) -> Result<(Checkpoint, TrainingRun)> {
    let pairs = make_pairs(corpus, cfg)?;
    let views = training_views(&corpus.samples, &pairs.train);
    let tc = cfg.vanilla_train();
    let model = cfg.model();
    let template = Checkpoint::new(NetworkKind::Vanilla, &model, cfg.seed, tc.adam, Default::default());
    let ckpt_path = out.join(VANILLA_CKPT);
    let mut log = TrainLog::create(out, "vanilla_")?
        .with_checkpoints(template.clone(), ckpt_path.clone(), cfg.checkpoint_every)
        .echo(echo);
    let (weights, run) = train::train_vanilla(&model, &views, &tc, &mut log)?;
    let ck = Checkpoint {
        weights,
        epochs_completed: run.epochs.len(),
        ..template
    };
    ck.save(&ckpt_path)?;
    log.finish(&run, &ck.id())?;
    Ok((ck, run))
}

/// Block-1 embeddings of every corpus view.
pub fn extract_embeddings(corpus: &Corpus, vanilla: &Checkpoint, out: &Path) -> Result<EmbeddingTable> {
    if vanilla.kind != NetworkKind::Vanilla {
        return Err(Error::Config("extract-embeddings needs a vanilla checkpoint".into()));
    }
    let net = vanilla.network()?;
    let table = train::extract_embeddings(&net, &vanilla.weights, &corpus.samples)?;
    records::write_table(&out.join(EMBEDDING_TABLE), &table)?;
    Ok(table)
}

pub fn train_predictor(
    cfg: &RunConfig,
    corpus: &Corpus,
    table: &EmbeddingTable,
    vanilla: Option<&Checkpoint>,
    out: &Path,
    echo: bool,
) -> Result<(Checkpoint, TrainingRun)> {
    let warm_start = match (cfg.predictor_init, vanilla) {
        (PredictorInit::Scratch, _) => None,
        (PredictorInit::Vanilla, Some(ck)) if ck.kind == NetworkKind::Vanilla => Some(&ck.weights),
        (PredictorInit::Vanilla, Some(_)) => {
            return Err(Error::Config("warm start needs a vanilla checkpoint".into()))
        }
        (PredictorInit::Vanilla, None) => {
            return Err(Error::Config(
                "predictor_init = vanilla needs the block-1 checkpoint (or set predictor_init = scratch)".into(),
            ))
        }
    };
    let pairs = make_pairs(corpus, cfg)?;
    let tc = cfg.predictor_train();
    let model = cfg.model();
    let mut template = Checkpoint::new(NetworkKind::Predictor, &model, cfg.seed, tc.adam, Default::default());
    template.loss_mode = Some(tc.loss_mode);
    let ckpt_path = out.join(PREDICTOR_CKPT);
    let mut log = TrainLog::create(out, "predictor_")?
        .with_checkpoints(template.clone(), ckpt_path.clone(), cfg.checkpoint_every)
        .echo(echo);
    let (weights, run) =
        train::train_predictor_from(&model, warm_start, &corpus.samples, &pairs.train, table, &pairs.test, &tc, &mut log)?;
    let ck = Checkpoint {
        weights,
        epochs_completed: run.epochs.len(),
        ..template
    };
    ck.save(&ckpt_path)?;
    log.finish(&run, &ck.id())?;
    Ok((ck, run))
}

fn require_predictor(ck: &Checkpoint) -> Result<Network> {
    if ck.kind != NetworkKind::Predictor {
        return Err(Error::Config("this step needs a predictor checkpoint".into()));
    }
    ck.network()
}

/// Test-set error report; writes `report.txt` and `report.records`.
pub fn evaluate(
    cfg: &RunConfig,
    corpus: &Corpus,
    table: &EmbeddingTable,
    predictor: &Checkpoint,
    out: &Path,
) -> Result<EvalReport> {
    let net = require_predictor(predictor)?;
    let pairs = make_pairs(corpus, cfg)?;
    let meta = RunMeta {
        seed: predictor.seed,
        checkpoint_id: predictor.id(),
        label: predictor.loss_mode.map_or("predictor", |m| m.as_str()).to_string(),
    };
    let report = eval::average_test_error(&net, &predictor.weights, &corpus.samples, &pairs.test, table, meta)?;
    write(&out.join("report.txt"), &report.to_text())?;
    write(&out.join("report.records"), &report.to_records())?;
    Ok(report)
}

/// Generated stand-ins for the substituted class's classifier-training
/// views. Per regime, every training pose is predicted from a real training
/// view of the class within `max_delta_deg` (see [`eval::assign_seeds`]); with
/// the full-circle window a single seed image produces the whole class.
pub fn generate(cfg: &RunConfig, corpus: &Corpus, predictor: &Checkpoint, out: &Path) -> Result<Vec<ViewSample>> {
    let net = require_predictor(predictor)?;
    let class = cfg.substituted_class;
    let (train, _) = classifier_split(&corpus.samples, cfg.classifier_test_fraction, cfg.seed)?;
    let mut generated = Vec::new();
    let mut strip_rows = Vec::new();
    for regime in [DayNight::Day, DayNight::Night] {
        let views: Vec<&ViewSample> = train
            .iter()
            .filter(|s| s.class_id == class && s.day_night == regime)
            .collect();
        if views.is_empty() {
            continue;
        }
        let azimuths: Vec<f64> = views.iter().map(|s| s.azimuth_deg).collect();
        let plan = eval::assign_seeds(&azimuths, corpus.manifest.angular_step_deg, cfg.max_delta_deg);
        let jobs: Vec<(&ViewSample, f64, DayNight)> =
            plan.iter().zip(&views).map(|(&s, t)| (views[s], t.azimuth_deg, regime)).collect();
        let batch = eval::predict_views(&net, &predictor.weights, &jobs)?;
        let first_seed = plan[0];
        strip_rows.push(views[first_seed].clone());
        strip_rows.extend(plan.iter().zip(&batch).filter(|(&s, _)| s == first_seed).map(|(_, g)| g.clone()).take(8));
        generated.extend(batch);
    }
    if generated.is_empty() {
        return Err(Error::Config(format!("class {class} has no training views to seed generation")));
    }
    let step = corpus.manifest.angular_step_deg;
    let dir = out.join("generated");
    create_dir(&dir)?;
    let mut m = DatasetManifest {
        records: Vec::new(),
        angular_step_deg: step,
        params: vec![
            ("generated_from".into(), predictor.id()),
            ("class".into(), class.to_string()),
        ],
    };
    for s in &generated {
        let rel = view_file_name(&s.key());
        let path = dir.join(&rel);
        if let Some(parent) = path.parent() {
            create_dir(parent)?;
        }
        png_io::write_view(&path, &s.image)?;
        m.records.push(ManifestRecord {
            path: rel,
            class_id: s.class_id,
            azimuth_deg: s.azimuth_deg,
            day_night: s.day_night,
            range_m: s.range_m,
        });
    }
    manifest::write(&dir.join(MANIFEST), &m)?;
    write_strip(&out.join("generated_strip.png"), &strip_rows)?;
    Ok(generated)
}

/// Side-by-side strip of views (the first of each group is the input).
fn write_strip(path: &Path, views: &[ViewSample]) -> Result<()> {
    let n = views.len().max(1);
    let mut px = vec![0u8; 64 * 64 * n];
    for (i, v) in views.iter().enumerate() {
        let img = irview_core::denormalize_image(&v.image);
        for r in 0..64 {
            px[r * 64 * n + i * 64..r * 64 * n + i * 64 + 64].copy_from_slice(&img[r * 64..r * 64 + 64]);
        }
    }
    png_io::write_gray(path, &px, (64 * n) as u32, 64)
}

pub fn low_shot(cfg: &RunConfig, corpus: &Corpus, generated: &[ViewSample], out: &Path) -> Result<LowShotReport> {
    let report = eval::low_shot_eval(&corpus.samples, cfg.substituted_class, generated, &cfg.classifier())?;
    write(&out.join("lowshot.txt"), &report.to_text())?;
    Ok(report)
}

pub fn export_file_name(pose: ExportPose) -> String {
    format!("embeddings_{}.csv", pose.name())
}

/// Pre/post-fusion embeddings of every corpus view under the identity pose
/// and under the configured azimuth offset, one file each.
pub fn embed_export(
    cfg: &RunConfig,
    corpus: &Corpus,
    predictor: &Checkpoint,
    out: &Path,
) -> Result<Vec<(ExportPose, Vec<EmbeddingRecord>)>> {
    let net = require_predictor(predictor)?;
    let mut all = Vec::new();
    for pose in [ExportPose::Identity, ExportPose::Offset(cfg.export_offset_deg)] {
        let recs = eval::export_embeddings(&net, &predictor.weights, &corpus.samples, pose)?;
        records::write_embeddings(&out.join(export_file_name(pose)), &recs)?;
        all.push((pose, recs));
    }
    Ok(all)
}

#[derive(Debug, Clone)]
pub struct Projection {
    pub stage: Stage,
    pub tsne: TsneResult,
    pub silhouette_class: f64,
    pub silhouette_class_day_night: f64,
}

/// t-SNE of each stage in `records`, with scatter plots, point files and
/// silhouette scores (written to `{name}_projection.txt`).
pub fn project(cfg: &RunConfig, records: &[EmbeddingRecord], out: &Path, name: &str) -> Result<Vec<Projection>> {
    let mut results = Vec::new();
    let mut summary = String::new();
    for stage in [Stage::PreFusion, Stage::PostFusion] {
        let recs = eval::stage_records(records, stage);
        if recs.is_empty() {
            continue;
        }
        let tsne = eval::tsne_project(&recs, cfg.perplexity, cfg.tsne_iterations, cfg.seed)?;
        let stem = format!("{name}_{}", stage.as_str());
        let labels: Vec<PointLabel> = recs
            .iter()
            .map(|r| PointLabel {
                class_id: r.class_id,
                night: r.day_night == DayNight::Night,
            })
            .collect();
        plot::render_projection(&tsne.points, &labels, &out.join(format!("{stem}.png")))?;
        records::write_points(&out.join(format!("{stem}_points.csv")), &tsne.points, &recs)?;
        let p = Projection {
            stage,
            silhouette_class: eval::silhouette(&recs, LabelKey::Class)?,
            silhouette_class_day_night: eval::silhouette(&recs, LabelKey::ClassDayNight)?,
            tsne,
        };
        summary += &format!(
            "stage={} points={} silhouette_class={} silhouette_class_day_night={} final_kl={}\n",
            stage.as_str(),
            recs.len(),
            p.silhouette_class,
            p.silhouette_class_day_night,
            p.tsne.kl_history.last().copied().unwrap_or(f64::NAN)
        );
        results.push(p);
    }
    if results.is_empty() {
        return Err(Error::Config("no embedding records to project".into()));
    }
    write(&out.join(format!("{name}_projection.txt")), &summary)?;
    Ok(results)
}
