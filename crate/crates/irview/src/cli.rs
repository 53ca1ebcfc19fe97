//! Command-line entry point.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use irview_core::model::NetworkKind;
use irview_core::train::LossMode;
use irview_core::Network;

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::lock::OutputLock;
use crate::manifest;
use crate::pipeline;
use crate::records;

#[derive(Debug, Parser)]
#[command(name = "irview", version, about = "Single-image novel view prediction for infrared-style imagery")]
#[command(arg_required_else_help = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct Common {
    /// key = value configuration file
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
    /// Configuration override, repeatable: --set key=value
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Print per-epoch progress to stderr
    #[arg(long)]
    pub verbose: bool,
}

#[derive(Debug, Args, Clone, Default)]
pub struct PairArgs {
    #[arg(long)]
    pub max_delta_deg: Option<f64>,
    /// Also pair day inputs with night targets and vice versa
    #[arg(long)]
    pub cross_regime: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render the synthetic corpus and its manifest
    SynthData {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        classes: Option<u32>,
        #[arg(long)]
        views: Option<u32>,
        #[arg(long)]
        regimes: Option<u8>,
    },
    /// Train block 1 (the unconditioned autoencoder)
    TrainVanilla {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        pairs: PairArgs,
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Encode every view with a trained block 1
    ExtractEmbeddings {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: PathBuf,
        /// Vanilla checkpoint
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Train block 2 (the pose-conditioned predictor)
    TrainPredictor {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        pairs: PairArgs,
        #[arg(long)]
        manifest: PathBuf,
        /// Target-embedding table written by extract-embeddings
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long, value_parser = parse_loss)]
        loss: Option<LossMode>,
        /// Block-1 checkpoint to start from (needed unless predictor_init = scratch)
        #[arg(long)]
        vanilla: Option<PathBuf>,
    },
    /// Predict the substituted class's training views from single seed images
    Generate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: PathBuf,
        /// Predictor checkpoint
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        class: Option<u32>,
    },
    /// Average test-set error of a predictor
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        pairs: PairArgs,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        embeddings: PathBuf,
    },
    /// Classifier accuracy with one class replaced by generated views
    LowShot {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: PathBuf,
        /// Manifest of the generated views
        #[arg(long)]
        generated: PathBuf,
        #[arg(long)]
        class: Option<u32>,
    },
    /// Export pre- and post-fusion embeddings of every view
    EmbedExport {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// t-SNE projection, scatter plots and silhouette scores of an export
    Project {
        #[command(flatten)]
        common: Common,
        /// Embedding export written by embed-export
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        perplexity: Option<f64>,
    },
    /// Print layer names, shapes and parameter count
    Describe {
        /// Describe this checkpoint instead of the default predictor
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
}

fn parse_loss(s: &str) -> std::result::Result<LossMode, String> {
    LossMode::parse(s).ok_or_else(|| format!("expected mse_only or embedding_plus_mse, got `{s}`"))
}

fn resolve(common: &Common, flags: &[(&str, Option<String>)]) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    cfg.apply_overrides(&common.overrides)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    for (k, v) in flags {
        if let Some(v) = v {
            cfg.set(k, v)?;
        }
    }
    Ok(cfg)
}

fn pair_flags(p: &PairArgs) -> Vec<(&'static str, Option<String>)> {
    vec![
        ("max_delta_deg", p.max_delta_deg.map(|v| v.to_string())),
        ("cross_regime", p.cross_regime.then(|| "true".to_string())),
    ]
}

fn path_input(name: &'static str, p: &Path) -> (&'static str, String) {
    (name, p.display().to_string())
}

/// Output directory lock plus the runspec, taken before any work starts.
fn start(common: &Common, sub: &str, inputs: &[(&str, String)], cfg: &RunConfig) -> Result<OutputLock> {
    let lock = OutputLock::acquire(&common.out)?;
    pipeline::write_runspec(&common.out, sub, inputs, cfg)?;
    Ok(lock)
}

pub fn run(command: Command) -> Result<String> {
    match command {
        Command::SynthData {
            common,
            classes,
            views,
            regimes,
        } => {
            let cfg = resolve(
                &common,
                &[
                    ("classes", classes.map(|v| v.to_string())),
                    ("views", views.map(|v| v.to_string())),
                    ("regimes", regimes.map(|v| v.to_string())),
                ],
            )?;
            let _lock = start(&common, "synth-data", &[], &cfg)?;
            let path = pipeline::synth_data(&cfg, &common.out)?;
            let m = manifest::read(&path)?;
            Ok(format!("wrote {} records to {}", m.records.len(), path.display()))
        }
        Command::TrainVanilla { common, pairs, manifest } => {
            let cfg = resolve(&common, &pair_flags(&pairs))?;
            let _lock = start(&common, "train-vanilla", &[path_input("manifest", &manifest)], &cfg)?;
            let corpus = manifest::load_corpus(&manifest)?;
            let (ck, run) = pipeline::train_vanilla(&cfg, &corpus, &common.out, common.verbose)?;
            Ok(format!(
                "vanilla checkpoint {} after {} steps, final L_o {:.6}",
                ck.id(),
                run.steps.len(),
                run.final_loss().unwrap_or_default().output
            ))
        }
        Command::ExtractEmbeddings {
            common,
            manifest,
            checkpoint,
        } => {
            let cfg = resolve(&common, &[])?;
            let inputs = [path_input("manifest", &manifest), path_input("checkpoint", &checkpoint)];
            let _lock = start(&common, "extract-embeddings", &inputs, &cfg)?;
            let corpus = manifest::load_corpus(&manifest)?;
            let table = pipeline::extract_embeddings(&corpus, &Checkpoint::load(&checkpoint)?, &common.out)?;
            Ok(format!("extracted {} embeddings", table.len()))
        }
        Command::TrainPredictor {
            common,
            pairs,
            manifest,
            embeddings,
            loss,
            vanilla,
        } => {
            let mut flags = pair_flags(&pairs);
            flags.push(("loss", loss.map(|l| l.as_str().to_string())));
            let cfg = resolve(&common, &flags)?;
            let mut inputs = vec![path_input("manifest", &manifest), path_input("embeddings", &embeddings)];
            if let Some(v) = &vanilla {
                inputs.push(path_input("vanilla", v));
            }
            let _lock = start(&common, "train-predictor", &inputs, &cfg)?;
            let corpus = manifest::load_corpus(&manifest)?;
            let table = records::read_table(&embeddings)?;
            let vanilla = vanilla.as_deref().map(Checkpoint::load).transpose()?;
            let (ck, run) =
                pipeline::train_predictor(&cfg, &corpus, &table, vanilla.as_ref(), &common.out, common.verbose)?;
            let last = run.final_loss().unwrap_or_default();
            Ok(format!(
                "predictor checkpoint {} ({}) after {} steps, final L_e {:.6} L_o {:.6} L_t {:.6}",
                ck.id(),
                cfg.loss,
                run.steps.len(),
                last.embedding,
                last.output,
                last.total
            ))
        }
        Command::Generate {
            common,
            manifest,
            checkpoint,
            class,
        } => {
            let cfg = resolve(&common, &[("substituted_class", class.map(|c| c.to_string()))])?;
            let inputs = [path_input("manifest", &manifest), path_input("checkpoint", &checkpoint)];
            let _lock = start(&common, "generate", &inputs, &cfg)?;
            let corpus = manifest::load_corpus(&manifest)?;
            let generated = pipeline::generate(&cfg, &corpus, &Checkpoint::load(&checkpoint)?, &common.out)?;
            Ok(format!("generated {} views of class {}", generated.len(), cfg.substituted_class))
        }
        Command::Evaluate {
            common,
            pairs,
            manifest,
            checkpoint,
            embeddings,
        } => {
            let cfg = resolve(&common, &pair_flags(&pairs))?;
            let inputs = [
                path_input("manifest", &manifest),
                path_input("checkpoint", &checkpoint),
                path_input("embeddings", &embeddings),
            ];
            let _lock = start(&common, "evaluate", &inputs, &cfg)?;
            let corpus = manifest::load_corpus(&manifest)?;
            let table = records::read_table(&embeddings)?;
            let report = pipeline::evaluate(&cfg, &corpus, &table, &Checkpoint::load(&checkpoint)?, &common.out)?;
            Ok(report.to_text())
        }
        Command::LowShot {
            common,
            manifest,
            generated,
            class,
        } => {
            let cfg = resolve(&common, &[("substituted_class", class.map(|c| c.to_string()))])?;
            let inputs = [path_input("manifest", &manifest), path_input("generated", &generated)];
            let _lock = start(&common, "low-shot", &inputs, &cfg)?;
            let corpus = manifest::load_corpus(&manifest)?;
            let gen = manifest::load_corpus(&generated)?;
            let report = pipeline::low_shot(&cfg, &corpus, &gen.samples, &common.out)?;
            Ok(report.to_text())
        }
        Command::EmbedExport {
            common,
            manifest,
            checkpoint,
        } => {
            let cfg = resolve(&common, &[])?;
            let inputs = [path_input("manifest", &manifest), path_input("checkpoint", &checkpoint)];
            let _lock = start(&common, "embed-export", &inputs, &cfg)?;
            let corpus = manifest::load_corpus(&manifest)?;
            let exports = pipeline::embed_export(&cfg, &corpus, &Checkpoint::load(&checkpoint)?, &common.out)?;
            let n: usize = exports.iter().map(|(_, r)| r.len()).sum();
            Ok(format!("exported {n} embedding records in {} files", exports.len()))
        }
        Command::Project {
            common,
            embeddings,
            perplexity,
        } => {
            let cfg = resolve(&common, &[("perplexity", perplexity.map(|p| p.to_string()))])?;
            let _lock = start(&common, "project", &[path_input("embeddings", &embeddings)], &cfg)?;
            let recs = records::read_embeddings(&embeddings)?;
            let name = embeddings
                .file_stem()
                .map_or("projection".to_string(), |s| s.to_string_lossy().into_owned());
            let projections = pipeline::project(&cfg, &recs, &common.out, &name)?;
            Ok(projections
                .iter()
                .map(|p| {
                    format!(
                        "{}: silhouette class {:.4}, class×day/night {:.4}",
                        p.stage.as_str(),
                        p.silhouette_class,
                        p.silhouette_class_day_night
                    )
                })
                .collect::<Vec<_>>()
                .join("\n"))
        }
        Command::Describe { checkpoint } => match checkpoint {
            Some(p) => {
                let ck = Checkpoint::load(&p)?;
                Ok(format!(
                    "checkpoint {} seed {} code {}\n{}",
                    ck.id(),
                    ck.seed,
                    ck.code_version,
                    ck.network()?.describe()
                ))
            }
            None => Ok(Network::new(&RunConfig::default().model(), NetworkKind::Predictor)?.describe()),
        },
    }
}

/// Parses `args` and runs the subcommand. Usage errors exit with 2, run
/// failures with 1.
pub fn main_with<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match run(cli.command) {
        Ok(msg) => {
            println!("{msg}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Config(_) => 2,
                _ => 1,
            })
        }
    }
}
