use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nncore::{Activation, LayerSpec, OptimizerKind, Schedule};
use crate::ssps::SspsConfig;
use crate::synthgen::CorpusConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Framework {
    Simclr,
    Dino,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum PosSampling {
    Ssl,
    Ssps,
    Supervised,
}

impl std::fmt::Display for Framework {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Framework::Simclr => "simclr",
            Framework::Dino => "dino",
        })
    }
}

impl std::fmt::Display for PosSampling {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PosSampling::Ssl => "ssl",
            PosSampling::Ssps => "ssps",
            PosSampling::Supervised => "supervised",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub framework: Framework,
    pub pos_sampling: PosSampling,
    pub epochs_total: usize,
    /// Epochs of same-utterance training before `pos_sampling` takes over.
    pub epochs_warmup: usize,
    pub batch_size: usize,
    pub eval_every: usize,
    pub checkpoint_every: usize,
    pub seed: u64,
    pub output_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    pub speakers: usize,
    pub seed: u64,
    pub n_target: usize,
    pub n_nontarget: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    /// Hidden widths of the encoder (ReLU).
    pub hidden: Vec<usize>,
    pub repr_dim: usize,
    /// Hidden widths of the projector (ReLU), DINO only.
    pub projector_hidden: Vec<usize>,
    /// Width of the linear bottleneck that is l2-normalized before the
    /// final prototype layer, DINO only.
    pub projector_bottleneck: usize,
    pub embedding_dim: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LrSchedule {
    StepDecay { factor: f64, every_epochs: usize },
    CosineWarmup { warmup_epochs: usize, end: f64 },
    Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimSection {
    pub lr: f64,
    pub optimizer: OptimizerKind,
    pub schedule: LrSchedule,
    /// EMA momentum at the first and the last step (DINO).
    pub ema_start: f64,
    pub ema_end: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossSection {
    pub simclr_temperature: f64,
    pub dino_student_temperature: f64,
    pub dino_teacher_temperature: f64,
    pub dino_center_momentum: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub run: RunSection,
    pub corpus: CorpusConfig,
    pub eval: EvalSection,
    pub model: ModelSection,
    pub optim: OptimSection,
    pub loss: LossSection,
    pub ssps: SspsConfig,
}

impl RunConfig {
    pub fn default_for(framework: Framework) -> Self {
        let corpus = CorpusConfig::default();
        let ssps = SspsConfig {
            seed: 17,
            ..SspsConfig::new(corpus.n_recordings(), 1)
        };
        let (batch_size, epochs_total, epochs_warmup, optim) = match framework {
            Framework::Simclr => (
                64,
                50,
                40,
                OptimSection {
                    lr: 1e-3,
                    optimizer: OptimizerKind::adam(),
                    schedule: LrSchedule::StepDecay {
                        factor: 0.95,
                        every_epochs: 5,
                    },
                    ema_start: 0.996,
                    ema_end: 1.0,
                },
            ),
            Framework::Dino => (
                32,
                40,
                20,
                OptimSection {
                    lr: 0.005,
                    optimizer: OptimizerKind::sgd(0.9, 5e-5),
                    schedule: LrSchedule::CosineWarmup {
                        warmup_epochs: 5,
                        end: 0.0,
                    },
                    ema_start: 0.996,
                    ema_end: 1.0,
                },
            ),
        };
        RunConfig {
            run: RunSection {
                framework,
                pos_sampling: PosSampling::Ssl,
                epochs_total,
                epochs_warmup,
                batch_size,
                eval_every: 10,
                checkpoint_every: 10,
                seed: 0,
                output_dir: PathBuf::from(format!("runs/{framework}")),
            },
            corpus,
            eval: EvalSection {
                speakers: 16,
                seed: 1_000_003,
                n_target: 2000,
                n_nontarget: 2000,
            },
            model: ModelSection {
                hidden: vec![64, 64],
                repr_dim: 32,
                projector_hidden: vec![64],
                projector_bottleneck: 32,
                embedding_dim: 128,
            },
            optim,
            loss: LossSection {
                simclr_temperature: 0.03,
                dino_student_temperature: 0.1,
                dino_teacher_temperature: 0.04,
                dino_center_momentum: 0.9,
            },
            ssps,
        }
    }

    /// Parse a TOML config. Missing keys take the defaults of the selected
    /// framework; unknown keys are rejected.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let user: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Parse(e.to_string()))?;
        let framework = match user.get("run").and_then(|r| r.get("framework")) {
            Some(v) => {
                Framework::deserialize(v.clone()).map_err(|e| Error::Parse(e.to_string()))?
            }
            None => Framework::Simclr,
        };
        let defaults = Self::default_for(framework);
        let mut merged =
            toml::Table::try_from(&defaults).map_err(|e| Error::Parse(e.to_string()))?;
        merge_tables(&mut merged, user, "")?;
        let cfg: RunConfig = toml::Value::Table(merged)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.corpus.validate()?;
        let n = self.corpus.n_utterances();
        let r = &self.run;
        if r.epochs_warmup > r.epochs_total {
            return Err(Error::InvalidConfig(
                "run.epochs_warmup exceeds run.epochs_total".into(),
            ));
        }
        if r.batch_size == 0 || r.batch_size > n {
            return Err(Error::InvalidConfig(format!(
                "run.batch_size must be in 1..={n}"
            )));
        }
        if r.framework == Framework::Simclr && r.batch_size < 2 {
            return Err(Error::InvalidConfig("SimCLR needs batch_size >= 2".into()));
        }
        if r.eval_every == 0 || r.checkpoint_every == 0 {
            return Err(Error::InvalidConfig(
                "run.eval_every and run.checkpoint_every must be >= 1".into(),
            ));
        }
        self.ssps.validate(n)?;
        if self.eval.speakers < 2 {
            return Err(Error::InvalidConfig("eval.speakers must be >= 2".into()));
        }
        if self.model.repr_dim == 0
            || self.model.embedding_dim == 0
            || self.model.projector_bottleneck == 0
        {
            return Err(Error::InvalidConfig("model widths must be >= 1".into()));
        }
        if self.model.hidden.contains(&0) || self.model.projector_hidden.contains(&0) {
            return Err(Error::InvalidConfig("model widths must be >= 1".into()));
        }
        if self.optim.lr.is_nan() || self.optim.lr < 0.0 {
            return Err(Error::InvalidConfig("optim.lr must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.optim.ema_start)
            || !(0.0..=1.0).contains(&self.optim.ema_end)
        {
            return Err(Error::InvalidConfig(
                "EMA momentum must lie in [0, 1]".into(),
            ));
        }
        if self.loss.simclr_temperature.is_nan() || self.loss.simclr_temperature <= 0.0 {
            return Err(Error::InvalidConfig(
                "loss.simclr_temperature must be > 0".into(),
            ));
        }
        crate::losses::DinoParams::new(
            self.loss.dino_student_temperature,
            self.loss.dino_teacher_temperature,
            1,
            self.loss.dino_center_momentum,
        )?;
        Ok(())
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.corpus.n_utterances() / self.run.batch_size
    }

    pub fn total_steps(&self) -> usize {
        self.steps_per_epoch() * self.run.epochs_total
    }

    pub fn lr_schedule(&self) -> Schedule {
        let spe = self.steps_per_epoch();
        match self.optim.schedule {
            LrSchedule::StepDecay {
                factor,
                every_epochs,
            } => Schedule::StepDecay {
                base: self.optim.lr,
                factor,
                every_epochs,
                steps_per_epoch: spe,
            },
            LrSchedule::CosineWarmup { warmup_epochs, end } => Schedule::CosineWithWarmup {
                base: self.optim.lr,
                end,
                warmup_steps: warmup_epochs * spe,
                total_steps: self.total_steps(),
            },
            LrSchedule::Constant => Schedule::Constant {
                value: self.optim.lr,
            },
        }
    }

    pub fn ema_schedule(&self) -> Schedule {
        Schedule::CosineMomentum {
            start: self.optim.ema_start,
            end: self.optim.ema_end,
            total_steps: self.total_steps(),
        }
    }

    pub fn encoder_specs(&self) -> Vec<LayerSpec> {
        let mut specs: Vec<LayerSpec> = self
            .model
            .hidden
            .iter()
            .map(|&out| LayerSpec::Dense {
                out,
                activation: Activation::Relu,
            })
            .collect();
        specs.push(LayerSpec::Dense {
            out: self.model.repr_dim,
            activation: Activation::Identity,
        });
        specs
    }

    /// `None` for SimCLR, which works on representations directly.
    pub fn projector_specs(&self) -> Option<Vec<LayerSpec>> {
        if self.run.framework == Framework::Simclr {
            return None;
        }
        let mut specs: Vec<LayerSpec> = self
            .model
            .projector_hidden
            .iter()
            .map(|&out| LayerSpec::Dense {
                out,
                activation: Activation::Relu,
            })
            .collect();
        specs.push(LayerSpec::Dense {
            out: self.model.projector_bottleneck,
            activation: Activation::Identity,
        });
        specs.push(LayerSpec::L2Normalize);
        specs.push(LayerSpec::Dense {
            out: self.model.embedding_dim,
            activation: Activation::Identity,
        });
        Some(specs)
    }

    /// Sampling strategy in force during `epoch`.
    pub fn sampling_at(&self, epoch: usize) -> PosSampling {
        if epoch < self.run.epochs_warmup {
            PosSampling::Ssl
        } else {
            self.run.pos_sampling
        }
    }
}

fn merge_tables(base: &mut toml::Table, user: toml::Table, path: &str) -> Result<()> {
    for (key, value) in user {
        let full = if path.is_empty() {
            key.clone()
        } else {
            format!("{path}.{key}")
        };
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(u)) if !is_tagged(b) => {
                merge_tables(b, u, &full)?
            }
            (Some(_), v) => {
                base.insert(key, v);
            }
            (None, v) => {
                // Optional keys are absent from the serialized defaults.
                if path.is_empty() {
                    return Err(Error::Parse(format!("unknown config section `{full}`")));
                }
                base.insert(key, v);
            }
        }
    }
    Ok(())
}

/// Tagged enums are replaced wholesale, not merged field by field.
fn is_tagged(t: &toml::Table) -> bool {
    t.contains_key("kind")
}
