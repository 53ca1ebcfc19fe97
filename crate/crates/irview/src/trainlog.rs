//! Training log files and periodic checkpoints.
//!
//! `train_log.csv` holds one `epoch,step,L_e,L_o,L_t,lr` line per optimizer
//! step and ends with a `summary` record; `epochs.csv` holds the per-epoch
//! records.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use irview_core::train::{EpochRecord, StepRecord, TrainObserver, TrainingRun};
use irview_core::WeightsHandle;

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};

pub struct TrainLog {
    steps: BufWriter<File>,
    epochs: BufWriter<File>,
    steps_path: PathBuf,
    started: Instant,
    /// Template for periodic checkpoints (weights replaced on save).
    checkpoint: Option<(Checkpoint, PathBuf, usize)>,
    failure: Option<Error>,
    echo: bool,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(Error::io(path))?))
}

impl TrainLog {
    pub fn create(dir: &Path, prefix: &str) -> Result<Self> {
        let steps_path = dir.join(format!("{prefix}train_log.csv"));
        let epochs_path = dir.join(format!("{prefix}epochs.csv"));
        let mut steps = create(&steps_path)?;
        let mut epochs = create(&epochs_path)?;
        writeln!(steps, "epoch,step,L_e,L_o,L_t,lr").map_err(Error::io(&steps_path))?;
        writeln!(epochs, "epoch,train_L_e,train_L_o,train_L_t,validation_L_e,validation_L_o,validation_L_t,lr,wall_s").map_err(Error::io(&epochs_path))?;
        Ok(TrainLog {
            steps,
            epochs,
            steps_path,
            started: Instant::now(),
            checkpoint: None,
            failure: None,
            echo: false,
        })
    }

    /// Saves `template` with the current weights to `path` every `every`
    /// epochs.
    pub fn with_checkpoints(mut self, template: Checkpoint, path: PathBuf, every: usize) -> Self {
        self.checkpoint = (every > 0).then_some((template, path, every));
        self
    }

    /// Also prints one line per epoch to stderr.
    pub fn echo(mut self, on: bool) -> Self {
        self.echo = on;
        self
    }

    /// Writes the summary record and flushes both files.
    pub fn finish(mut self, run: &TrainingRun, checkpoint_id: &str) -> Result<()> {
        if let Some(e) = self.failure.take() {
            return Err(e);
        }
        let last = run.final_loss().unwrap_or_default();
        writeln!(
            self.steps,
            "summary,steps={},epochs={},L_e={},L_o={},L_t={},checkpoint={checkpoint_id}",
            run.steps.len(),
            run.epochs.len(),
            last.embedding,
            last.output,
            last.total
        )
        .map_err(Error::io(&self.steps_path))?;
        self.steps.flush().map_err(Error::io(&self.steps_path))?;
        self.epochs.flush().map_err(Error::io(&self.steps_path))
    }
}

impl TrainObserver for TrainLog {
    fn on_step(&mut self, r: &StepRecord) {
        if self.failure.is_some() {
            return;
        }
        let l = r.loss;
        if let Err(e) = writeln!(self.steps, "{},{},{},{},{},{}", r.epoch, r.step, l.embedding, l.output, l.total, r.lr) {
            self.failure = Some(Error::io(&self.steps_path)(e));
        }
    }

    fn on_epoch(&mut self, r: &EpochRecord, weights: &WeightsHandle<f32>) -> irview_core::Result<()> {
        let val = r
            .validation
            .map_or(",,".to_string(), |v| format!("{},{},{}", v.embedding, v.output, v.total));
        let t = r.train;
        let line = format!(
            "{},{},{},{},{},{},{:.3}",
            r.epoch, t.embedding, t.output, t.total, val, r.lr, r.wall_time_s
        );
        if self.echo {
            let v = r.validation.map_or(String::from("-"), |v| format!("L_o {:.6} L_t {:.6}", v.output, v.total));
            eprintln!("epoch {:>3}  L_e {:.6}  L_o {:.6}  L_t {:.6}  val {v}  lr {}", r.epoch, t.embedding, t.output, t.total, r.lr);
        }
        if let Err(e) = writeln!(self.epochs, "{line}") {
            self.failure.get_or_insert(Error::io(&self.steps_path)(e));
        }
        if let Some((template, path, every)) = &mut self.checkpoint {
            if (r.epoch + 1) % *every == 0 {
                template.weights = weights.clone();
                template.epochs_completed = r.epoch + 1;
                if let Err(e) = template.save(path) {
                    self.failure.get_or_insert(e);
                }
            }
        }
        Ok(())
    }

    fn elapsed_s(&mut self) -> f64 {
        self.started.elapsed().as_secs_f64()
    }
}
