//! Training runs: configuration, the SimCLR and DINO loops with the three
//! positive-sampling strategies, checkpointing, resumption, and sweeps.

mod config;
mod persist;
mod state;
mod sweep;

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

pub use config::{
    EvalSection, Framework, LossSection, LrSchedule, ModelSection, OptimSection, PosSampling,
    RunConfig, RunSection,
};
pub use persist::{config_from_checkpoint, from_checkpoint, to_checkpoint};
pub use state::{EpochReport, Experiment, StepReport, StepSampling, Trainer};
pub use sweep::{run_sweep, SweepGrid, SweepRow};

use crate::error::{Error, Result};
use crate::eval::MetricsReport;
use crate::nncore::CheckpointFile;
use crate::synthgen::TrialList;

/// One line of `metrics.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub eer: f64,
    pub min_dcf: f64,
    pub intra_var: f64,
    pub inter_var: f64,
    /// `null` while pseudo-positive sampling is not in force.
    pub fallback_rate: Option<f64>,
}

impl MetricsRecord {
    pub fn new(epoch: usize, m: &MetricsReport, fallback_rate: Option<f64>) -> Self {
        MetricsRecord {
            epoch,
            eer: m.eer,
            min_dcf: m.min_dcf,
            intra_var: m.intra_speaker_variance,
            inter_var: m.inter_speaker_variance,
            fallback_rate,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutputs {
    pub dir: PathBuf,
    pub final_checkpoint: PathBuf,
    pub metrics: Vec<MetricsRecord>,
}

pub fn checkpoint_name(epoch: usize) -> String {
    format!("epoch_{epoch:04}.ckpt")
}

struct JsonLines(File);

impl JsonLines {
    fn open(path: &Path, append: bool) -> Result<Self> {
        let f = OpenOptions::new()
            .create(true)
            .write(true)
            .append(append)
            .truncate(!append)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(JsonLines(f))
    }

    fn write(&mut self, value: &impl Serialize) -> Result<()> {
        let line = serde_json::to_string(value).map_err(|e| Error::Parse(e.to_string()))?;
        writeln!(self.0, "{line}").map_err(|e| Error::io("json lines", e))
    }
}

fn save(t: &Trainer, dir: &Path) -> Result<PathBuf> {
    let path = dir.join(checkpoint_name(t.epoch));
    to_checkpoint(t).write(&path)?;
    Ok(path)
}

/// Train `trainer` until `until_epoch`, writing logs and checkpoints to
/// `dir`. Log files are appended to when they already exist.
pub fn drive(t: &mut Trainer, dir: &Path, until_epoch: usize) -> Result<RunOutputs> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    t.cfg.run.output_dir = dir.to_path_buf();
    std::fs::write(dir.join("config.toml"), t.cfg.to_toml_string())
        .map_err(|e| Error::io(dir, e))?;
    t.data.trials.write(&dir.join("trials.txt"))?;

    let mut metrics_log = JsonLines::open(&dir.join("metrics.jsonl"), true)?;
    let mut diag_log = JsonLines::open(&dir.join("diagnostics.jsonl"), true)?;
    let mut train_log = JsonLines::open(&dir.join("train_log.jsonl"), true)?;

    let mut final_checkpoint = save(t, dir)?;
    let mut metrics = Vec::new();
    while t.epoch < until_epoch {
        let report = t.train_epoch()?;
        train_log.write(&report)?;
        if let Some(d) = &report.diagnostics {
            diag_log.write(d)?;
        }
        let last = t.epoch == until_epoch;
        if last || t.epoch.is_multiple_of(t.cfg.run.eval_every) {
            let rec = MetricsRecord::new(t.epoch, &t.evaluate()?, report.fallback_rate());
            metrics_log.write(&rec)?;
            metrics.push(rec);
        }
        if last || t.epoch.is_multiple_of(t.cfg.run.checkpoint_every) {
            final_checkpoint = save(t, dir)?;
        }
    }
    Ok(RunOutputs {
        dir: dir.to_path_buf(),
        final_checkpoint,
        metrics,
    })
}

/// Fresh run from a configuration; `seed` and `out` override the file.
pub fn train(mut cfg: RunConfig, seed: Option<u64>, out: Option<&Path>) -> Result<RunOutputs> {
    if let Some(s) = seed {
        cfg.run.seed = s;
    }
    if let Some(o) = out {
        cfg.run.output_dir = o.to_path_buf();
    }
    let dir = cfg.run.output_dir.clone();
    let until = cfg.run.epochs_total;
    let mut t = Trainer::new(cfg)?;
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    t.data.train.write_text(&dir.join("corpus.txt"))?;
    // A fresh run starts with empty logs.
    for name in ["metrics.jsonl", "diagnostics.jsonl", "train_log.jsonl"] {
        JsonLines::open(&dir.join(name), false)?;
    }
    drive(&mut t, &dir, until)
}

/// Load a checkpoint, switch positive sampling to `pos`, and train
/// `epochs` more epochs.
///
/// When `pos` differs from the stored strategy, the new strategy takes
/// effect from the first resumed epoch.
pub fn resume_trainer(
    file: &CheckpointFile,
    pos: PosSampling,
    epochs: usize,
    data: Option<Experiment>,
) -> Result<Trainer> {
    branch_trainer(file, pos, epochs, |_| {}, data)
}

/// [`resume_trainer`] with a further edit of the restored configuration.
/// The edit must keep the model and corpus unchanged.
pub fn branch_trainer(
    file: &CheckpointFile,
    pos: PosSampling,
    epochs: usize,
    edit: impl FnOnce(&mut RunConfig),
    data: Option<Experiment>,
) -> Result<Trainer> {
    let mut cfg = config_from_checkpoint(file)?;
    let epoch: usize = file.get_parsed("epoch")?;
    if cfg.run.pos_sampling != pos {
        cfg.run.pos_sampling = pos;
        cfg.run.epochs_warmup = cfg.run.epochs_warmup.min(epoch);
        cfg.ssps.enable_epoch = cfg.ssps.enable_epoch.min(epoch);
    }
    cfg.run.epochs_total = cfg.run.epochs_total.max(epoch + epochs);
    edit(&mut cfg);
    from_checkpoint(file, cfg, data)
}

pub fn resume(
    checkpoint: &Path,
    pos: PosSampling,
    epochs: usize,
    out: Option<&Path>,
) -> Result<RunOutputs> {
    let file = CheckpointFile::read(checkpoint)?;
    let mut t = resume_trainer(&file, pos, epochs, None)?;
    let dir = match out {
        Some(o) => o.to_path_buf(),
        None => checkpoint
            .parent()
            .unwrap_or(Path::new("."))
            .join(format!("resume_{pos}_e{}", t.epoch)),
    };
    let until = t.epoch + epochs;
    drive(&mut t, &dir, until)
}

/// Evaluate a checkpoint on a trial list over its evaluation corpus.
pub fn evaluate_checkpoint(checkpoint: &Path, trials: &Path) -> Result<MetricsReport> {
    let file = CheckpointFile::read(checkpoint)?;
    let cfg = config_from_checkpoint(&file)?;
    let t = from_checkpoint(&file, cfg, None)?;
    let trials = TrialList::read(trials)?;
    crate::eval::evaluate(t.eval_network(), &t.data.eval, &trials)
}
