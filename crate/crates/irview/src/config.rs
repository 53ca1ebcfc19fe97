//! Run configuration: a flat `key = value` file, overridable from the
//! command line, written back fully resolved as the run's `runspec`.

use std::fmt::Display;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use irview_core::classifier::ClassifierConfig;
use irview_core::synth::SynthConfig;
use irview_core::train::LossMode;
use irview_core::{ModelConfig, TrainConfig};

use crate::error::{Error, Result};

/// Starting point of block 2's encoder and decoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PredictorInit {
    /// Copy every layer shared with the trained block 1.
    Vanilla,
    /// Fresh random initialization.
    Scratch,
}

impl Display for PredictorInit {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PredictorInit::Vanilla => "vanilla",
            PredictorInit::Scratch => "scratch",
        })
    }
}

impl FromStr for PredictorInit {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "vanilla" => Ok(PredictorInit::Vanilla),
            "scratch" => Ok(PredictorInit::Scratch),
            _ => Err("expected vanilla or scratch".into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    // synthetic corpus
    pub classes: u32,
    pub views: u32,
    pub regimes: u8,
    pub noise_sigma: f64,
    pub clutter_blobs: u32,
    // pairs
    pub max_delta_deg: f64,
    pub cross_regime: bool,
    pub test_fraction: f64,
    // model
    pub leaky_relu_slope: f64,
    // training
    pub batch_size: usize,
    pub epochs: usize,
    pub vanilla_epochs: usize,
    pub vanilla_batch_size: usize,
    pub predictor_init: PredictorInit,
    pub lr_initial: f64,
    pub lr_final: f64,
    pub lr_switch_epoch: usize,
    pub loss: LossMode,
    pub embedding_weight: f64,
    pub output_weight: f64,
    pub checkpoint_every: usize,
    pub max_steps: usize,
    // evaluation
    pub substituted_class: u32,
    pub classifier_epochs: usize,
    pub classifier_test_fraction: f64,
    pub perplexity: f64,
    pub tsne_iterations: usize,
    pub export_offset_deg: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        let s = SynthConfig::default();
        let c = ClassifierConfig::default();
        RunConfig {
            seed: 0,
            classes: s.n_classes,
            views: s.views_per_circle,
            regimes: s.regimes,
            noise_sigma: s.noise_sigma,
            clutter_blobs: s.clutter_blobs,
            max_delta_deg: 360.0,
            cross_regime: false,
            test_fraction: 0.25,
            leaky_relu_slope: ModelConfig::default().leaky_relu_slope,
            batch_size: t.batch_size,
            epochs: t.epochs,
            vanilla_epochs: t.epochs,
            vanilla_batch_size: t.batch_size,
            predictor_init: PredictorInit::Vanilla,
            lr_initial: t.lr_initial,
            lr_final: t.lr_final,
            lr_switch_epoch: t.lr_switch_epoch,
            loss: t.loss_mode,
            embedding_weight: t.embedding_weight,
            output_weight: t.output_weight,
            checkpoint_every: 10,
            max_steps: 0,
            substituted_class: 1,
            classifier_epochs: c.epochs,
            classifier_test_fraction: c.test_fraction,
            perplexity: 30.0,
            tsne_iterations: 1000,
            export_offset_deg: 90.0,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("bad value `{value}` for `{key}`: {e}")))
}

macro_rules! fields {
    ($($name:ident),* $(,)?) => {
        impl RunConfig {
            /// Every key, in file order.
            pub const KEYS: &'static [&'static str] = &[$(stringify!($name)),*];

            pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
                match key {
                    $(stringify!($name) => self.$name = parse(key, value)?,)*
                    _ => return Err(Error::Config(format!("unknown config key `{key}`"))),
                }
                Ok(())
            }

            /// Resolved configuration, one `key = value` per line.
            pub fn to_text(&self) -> String {
                let mut s = String::new();
                $(s += &format!("{} = {}\n", stringify!($name), self.$name);)*
                s
            }
        }
    };
}

fields!(
    seed,
    classes,
    views,
    regimes,
    noise_sigma,
    clutter_blobs,
    max_delta_deg,
    cross_regime,
    test_fraction,
    leaky_relu_slope,
    batch_size,
    epochs,
    vanilla_epochs,
    vanilla_batch_size,
    predictor_init,
    lr_initial,
    lr_final,
    lr_switch_epoch,
    loss,
    embedding_weight,
    output_weight,
    checkpoint_every,
    max_steps,
    substituted_class,
    classifier_epochs,
    classifier_test_fraction,
    perplexity,
    tsne_iterations,
    export_offset_deg,
);

impl RunConfig {
    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str, origin: &Path) -> Result<()> {
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::format(origin, format!("line {}: expected key = value", no + 1)))?;
            self.set(k.trim(), v.trim())
                .map_err(|e| Error::format(origin, format!("line {}: {e}", no + 1)))?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(Error::io(path))?;
        let mut cfg = RunConfig::default();
        cfg.apply_text(&text, path)?;
        Ok(cfg)
    }

    /// Applies `key=value` overrides in order.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let (k, v) = o
                .as_ref()
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{}` is not key=value", o.as_ref())))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn synth(&self) -> SynthConfig {
        SynthConfig {
            n_classes: self.classes,
            views_per_circle: self.views,
            regimes: self.regimes,
            seed: self.seed,
            noise_sigma: self.noise_sigma,
            clutter_blobs: self.clutter_blobs,
            ..SynthConfig::default()
        }
    }

    pub fn model(&self) -> ModelConfig {
        ModelConfig {
            leaky_relu_slope: self.leaky_relu_slope,
            ..ModelConfig::default()
        }
    }

    /// `epochs` long, with the learning-rate drop at the same fraction of
    /// the run as `lr_switch_epoch` is of `epochs`.
    fn train_common(&self, epochs: usize, batch_size: usize) -> TrainConfig {
        let switch = (self.lr_switch_epoch as f64 / self.epochs.max(1) as f64 * epochs as f64).round() as usize;
        TrainConfig {
            batch_size,
            epochs,
            lr_initial: self.lr_initial,
            lr_final: self.lr_final,
            lr_switch_epoch: switch.clamp(1, epochs.max(1)),
            seed: self.seed,
            loss_mode: self.loss,
            embedding_weight: self.embedding_weight,
            output_weight: self.output_weight,
            max_steps: (self.max_steps > 0).then_some(self.max_steps),
            ..TrainConfig::default()
        }
    }

    pub fn vanilla_train(&self) -> TrainConfig {
        self.train_common(self.vanilla_epochs, self.vanilla_batch_size)
    }

    pub fn predictor_train(&self) -> TrainConfig {
        self.train_common(self.epochs, self.batch_size)
    }

    pub fn classifier(&self) -> ClassifierConfig {
        ClassifierConfig {
            epochs: self.classifier_epochs,
            test_fraction: self.classifier_test_fraction,
            seed: self.seed,
            ..ClassifierConfig::default()
        }
    }
}
