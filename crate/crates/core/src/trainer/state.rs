use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::config::{Framework, PosSampling, RunConfig};
use crate::error::{Error, Result};
use crate::eval::{evaluate, MetricsReport};
use crate::linalg::Matrix;
use crate::losses::{
    apply_pseudo_positive, ContrastiveInputs, DinoParams, DistillationInputs, LossInputs,
    SimclrParams,
};
use crate::nncore::{ModelPair, Network, OptimizerState};
use crate::ssps::{
    sample_pseudo_positive, ssps_epoch_begin, ClusterState, FallbackReason, MemoryQueue,
    PositiveQueue, PseudoPositive, ReferenceQueue, SspsConfig, SspsDiagnostics,
};
use crate::synthgen::{
    build_corpus, build_trials, sample_views, Corpus, HiddenLabels, TrialList, ViewSpec, Views,
};

const DATA_STREAM: u64 = 1;
const SAMPLING_STREAM: u64 = 2;
const INIT_STREAM: u64 = 3;

pub(crate) fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Everything derived deterministically from the configuration: the
/// training corpus, the disjoint evaluation corpus and its trial list.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub train: Corpus,
    pub eval: Corpus,
    pub trials: TrialList,
    /// Hidden labels of the training corpus. Read only by the supervised
    /// baseline and by diagnostics.
    labels: HiddenLabels,
    supervised_positives: Vec<Vec<usize>>,
}

impl Experiment {
    pub fn build(cfg: &RunConfig) -> Result<Self> {
        let train = build_corpus(&cfg.corpus)?;
        let eval = train.derive_disjoint(cfg.eval.speakers, cfg.eval.seed)?;
        let mut trial_rng = ChaCha8Rng::seed_from_u64(cfg.eval.seed ^ 0x7472_6961_6c73);
        let trials = build_trials(
            &eval,
            cfg.eval.n_target,
            cfg.eval.n_nontarget,
            &mut trial_rng,
        )?;
        let labels = train.hidden_labels();
        let supervised_positives = (0..train.len())
            .map(|i| labels.cross_recording_positives(i))
            .collect();
        Ok(Experiment {
            train,
            eval,
            trials,
            labels,
            supervised_positives,
        })
    }
}

/// How positives are chosen for one training step.
#[derive(Debug, Clone, Copy)]
pub enum StepSampling<'a> {
    Ssl,
    Ssps(&'a ClusterState),
    /// SSPS requested but no clustering is available; every query falls back.
    SspsUnclustered,
    Supervised,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepReport {
    pub loss: f64,
    pub queries: usize,
    pub fallbacks: BTreeMap<FallbackReason, usize>,
    pub found: usize,
    pub found_same_speaker: usize,
}

impl StepReport {
    pub fn n_fallbacks(&self) -> usize {
        self.fallbacks.values().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochReport {
    /// 1-based index of the epoch just finished.
    pub epoch: usize,
    pub sampling: PosSampling,
    pub mean_loss: f64,
    pub lr: f64,
    pub steps: usize,
    #[serde(skip)]
    pub diagnostics: Option<SspsDiagnostics>,
}

impl EpochReport {
    pub fn fallback_rate(&self) -> Option<f64> {
        self.diagnostics.as_ref().map(|d| d.fallback_rate)
    }
}

/// Full mutable state of a training run.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub cfg: RunConfig,
    pub data: Experiment,
    pub model: ModelPair,
    pub optimizer: OptimizerState,
    pub simclr: SimclrParams,
    pub dino: DinoParams,
    pub reference_queue: ReferenceQueue,
    pub positive_queue: PositiveQueue,
    /// Completed epochs.
    pub epoch: usize,
    /// Completed optimizer steps.
    pub step: usize,
    pub(crate) data_rng: ChaCha8Rng,
    pub(crate) sampling_rng: ChaCha8Rng,
}

impl Trainer {
    pub fn new(cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        let data = Experiment::build(&cfg)?;
        Self::with_experiment(cfg, data)
    }

    /// Fresh state reusing an already built [`Experiment`] for `cfg`.
    pub fn with_experiment(cfg: RunConfig, data: Experiment) -> Result<Self> {
        cfg.validate()?;
        let mut init_rng = stream_rng(cfg.run.seed, INIT_STREAM);
        let projector = cfg.projector_specs();
        let student = Network::random(
            data.train.input_dim(),
            &cfg.encoder_specs(),
            projector.as_deref(),
            &mut init_rng,
        )?;
        let model = match cfg.run.framework {
            Framework::Simclr => ModelPair::symmetric(student),
            Framework::Dino => ModelPair::student_teacher(student),
        };
        let optimizer = OptimizerState::new(cfg.optim.optimizer, &model.student.param_blocks());
        let simclr = SimclrParams::new(cfg.loss.simclr_temperature)?;
        let dino = DinoParams::new(
            cfg.loss.dino_student_temperature,
            cfg.loss.dino_teacher_temperature,
            model.student.embedding_dim(),
            cfg.loss.dino_center_momentum,
        )?;
        let reference_queue =
            MemoryQueue::new(data.train.len(), model.student.representation_dim());
        let positive_queue =
            MemoryQueue::new(cfg.ssps.positive_capacity(), model.student.embedding_dim());
        Ok(Trainer {
            data_rng: stream_rng(cfg.run.seed, DATA_STREAM),
            sampling_rng: stream_rng(cfg.run.seed, SAMPLING_STREAM),
            cfg,
            data,
            model,
            optimizer,
            simclr,
            dino,
            reference_queue,
            positive_queue,
            epoch: 0,
            step: 0,
        })
    }

    /// Network used for references and evaluation: the teacher for DINO,
    /// the shared network for SimCLR.
    pub fn eval_network(&self) -> &Network {
        self.model.teacher()
    }

    pub fn evaluate(&self) -> Result<MetricsReport> {
        evaluate(self.eval_network(), &self.data.eval, &self.data.trials)
    }

    /// Cluster state for the coming epoch, if SSPS is in force.
    pub fn begin_epoch(&self) -> Result<Option<ClusterState>> {
        if self.cfg.sampling_at(self.epoch) != PosSampling::Ssps {
            return Ok(None);
        }
        if self.reference_queue.len() < self.cfg.ssps.k {
            return Ok(None);
        }
        let cfg = SspsConfig {
            seed: self.cfg.ssps.seed.wrapping_add(self.epoch as u64),
            ..self.cfg.ssps.clone()
        };
        ssps_epoch_begin(&self.reference_queue, &cfg, self.epoch)
    }

    pub fn train_epoch(&mut self) -> Result<EpochReport> {
        let sampling_mode = self.cfg.sampling_at(self.epoch);
        let ssps_on = sampling_mode == PosSampling::Ssps && self.cfg.ssps.is_active(self.epoch);
        let cluster = if ssps_on { self.begin_epoch()? } else { None };

        let mut order: Vec<usize> = (0..self.data.train.len()).collect();
        order.shuffle(&mut self.data_rng);
        let batch_size = self.cfg.run.batch_size;
        let mut total = StepReport::default();
        let mut loss_sum = 0.0;
        let mut steps = 0;
        for batch in order.chunks_exact(batch_size) {
            let sampling = match (sampling_mode, &cluster) {
                (PosSampling::Ssps, Some(c)) if ssps_on => StepSampling::Ssps(c),
                (PosSampling::Ssps, None) if ssps_on => StepSampling::SspsUnclustered,
                (PosSampling::Supervised, _) => StepSampling::Supervised,
                _ => StepSampling::Ssl,
            };
            let r = self.train_step(batch, sampling)?;
            loss_sum += r.loss;
            steps += 1;
            total.queries += r.queries;
            total.found += r.found;
            total.found_same_speaker += r.found_same_speaker;
            for (k, v) in r.fallbacks {
                *total.fallbacks.entry(k).or_insert(0) += v;
            }
        }
        self.epoch += 1;

        let diagnostics = ssps_on.then(|| self.diagnostics(&total, cluster.as_ref()));
        Ok(EpochReport {
            epoch: self.epoch,
            sampling: sampling_mode,
            mean_loss: loss_sum / steps.max(1) as f64,
            lr: self.cfg.lr_schedule().value(self.step.saturating_sub(1)),
            steps,
            diagnostics,
        })
    }

    fn diagnostics(&self, total: &StepReport, cluster: Option<&ClusterState>) -> SspsDiagnostics {
        let fallbacks = total.n_fallbacks();
        SspsDiagnostics {
            epoch: self.epoch,
            k: self.cfg.ssps.k,
            m: self.cfg.ssps.m,
            queries: total.queries,
            fallbacks,
            fallback_rate: if total.queries == 0 {
                0.0
            } else {
                fallbacks as f64 / total.queries as f64
            },
            fallback_reasons: total
                .fallbacks
                .iter()
                .map(|(k, v)| (reason_name(*k).to_string(), *v))
                .collect(),
            cluster_size_histogram: cluster
                .map(ClusterState::size_histogram)
                .unwrap_or_default(),
            speaker_purity: cluster.map_or(0.0, |c| c.purity(&self.data.labels.speaker)),
            positive_speaker_precision: if total.found == 0 {
                0.0
            } else {
                total.found_same_speaker as f64 / total.found as f64
            },
            kmeans_objective: cluster
                .map(|c| c.objective_trace.clone())
                .unwrap_or_default(),
        }
    }

    /// One optimizer step on the utterances `batch`.
    pub fn train_step(
        &mut self,
        batch: &[usize],
        sampling: StepSampling<'_>,
    ) -> Result<StepReport> {
        let sources = match sampling {
            StepSampling::Supervised => Some(
                batch
                    .iter()
                    .map(|&i| {
                        let cands = &self.data.supervised_positives[i];
                        if cands.is_empty() {
                            i
                        } else {
                            cands[self.sampling_rng.random_range(0..cands.len())]
                        }
                    })
                    .collect::<Vec<_>>(),
            ),
            _ => None,
        };
        let spec = match self.cfg.run.framework {
            Framework::Simclr => ViewSpec::Pair,
            Framework::Dino => ViewSpec::MultiCrop,
        };
        let views = sample_views(
            &self.data.train,
            batch,
            spec,
            sources.as_deref(),
            &mut self.data_rng,
        )?;

        let mut report = StepReport::default();
        let mut replacements = BTreeMap::new();
        match sampling {
            StepSampling::Ssps(state) => {
                for (row, &i) in batch.iter().enumerate() {
                    report.queries += 1;
                    match sample_pseudo_positive(
                        i,
                        state,
                        &self.positive_queue,
                        &mut self.sampling_rng,
                    ) {
                        PseudoPositive::Found {
                            utterance,
                            embedding,
                            ..
                        } => {
                            report.found += 1;
                            if self.data.labels.speaker[utterance] == self.data.labels.speaker[i] {
                                report.found_same_speaker += 1;
                            }
                            replacements.insert(row, embedding);
                        }
                        PseudoPositive::Fallback(reason) => {
                            *report.fallbacks.entry(reason).or_insert(0) += 1;
                        }
                    }
                }
            }
            StepSampling::SspsUnclustered => {
                report.queries = batch.len();
                report
                    .fallbacks
                    .insert(FallbackReason::Unassigned, batch.len());
            }
            StepSampling::Supervised => {
                let sources = sources.as_deref().expect("supervised sources");
                for (&i, &src) in batch.iter().zip(sources) {
                    report.queries += 1;
                    if src == i {
                        *report
                            .fallbacks
                            .entry(FallbackReason::NoCandidate)
                            .or_insert(0) += 1;
                    } else {
                        report.found += 1;
                        report.found_same_speaker += 1;
                    }
                }
            }
            StepSampling::Ssl => {}
        }

        let lr = self.cfg.lr_schedule().value(self.step);
        let positive_rows = match self.cfg.run.framework {
            Framework::Simclr => {
                self.simclr_update(&views.views, &replacements, lr, &mut report)?
            }
            Framework::Dino => self.dino_update(&views.views, &replacements, lr, &mut report)?,
        };

        let references = self.eval_network().encode(&views.references)?;
        let positive_ids = sources.as_deref().unwrap_or(batch);
        for (row, &i) in batch.iter().enumerate() {
            self.reference_queue.enqueue(i, references.row(row))?;
            self.positive_queue
                .enqueue(positive_ids[row], positive_rows.row(row))?;
        }
        self.step += 1;
        Ok(report)
    }

    fn check_loss(&self, loss: f64) -> Result<()> {
        if loss.is_finite() {
            return Ok(());
        }
        let dir = &self.cfg.run.output_dir;
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(format!("nonfinite_e{:04}_s{}.ckpt", self.epoch, self.step));
        super::persist::to_checkpoint(self).write(&path)?;
        Err(Error::NonFiniteLoss {
            epoch: self.epoch,
            step: self.step,
            checkpoint: path,
        })
    }

    fn check_outputs(&self, embeddings: &Matrix) -> Result<()> {
        if embeddings.as_slice().iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            self.check_loss(f64::NAN)
        }
    }

    /// Returns the positive-branch embeddings to be queued.
    fn simclr_update(
        &mut self,
        views: &Views,
        replacements: &BTreeMap<usize, Vec<f64>>,
        lr: f64,
        report: &mut StepReport,
    ) -> Result<Matrix> {
        let Views::Pair { anchors, positives } = views else {
            unreachable!("SimCLR samples view pairs")
        };
        let b = anchors.rows();
        let out = self
            .model
            .student
            .forward(&Matrix::vstack(&[anchors, positives])?)?;
        self.check_outputs(&out.embeddings)?;
        let mut halves = out.embeddings.split_rows(b).into_iter();
        let za = halves.next().expect("anchor half");
        let zp = halves.next().expect("positive half");
        let inputs = apply_pseudo_positive(
            LossInputs::Contrastive(ContrastiveInputs::new(za, zp.clone())),
            replacements,
        )?;
        let LossInputs::Contrastive(inputs) = inputs else {
            unreachable!()
        };
        let loss = inputs.loss(&self.simclr)?;
        report.loss = loss.loss;
        self.check_loss(loss.loss)?;
        let grad = Matrix::vstack(&[&loss.grad_anchors, &loss.grad_positives])?;
        let (grads, _) = self.model.student.backward(&out.cache, &grad)?;
        self.optimizer
            .step(self.model.student.param_blocks_mut(), &grads, lr)?;
        Ok(zp)
    }

    /// Returns the teacher's embedding of the first global view, to be queued.
    fn dino_update(
        &mut self,
        views: &Views,
        replacements: &BTreeMap<usize, Vec<f64>>,
        lr: f64,
        report: &mut StepReport,
    ) -> Result<Matrix> {
        let Views::MultiCrop {
            globals,
            locals,
            teacher_globals,
        } = views
        else {
            unreachable!("DINO samples multi-crop views")
        };
        let b = globals[0].rows();
        let student_in = Matrix::vstack(&[
            &globals[0],
            &globals[1],
            &locals[0],
            &locals[1],
            &locals[2],
            &locals[3],
        ])?;
        let out = self.model.student.forward(&student_in)?;
        let student_views = out.embeddings.split_rows(b);
        let tg = teacher_globals.as_ref().unwrap_or(globals);
        let teacher_out = self
            .model
            .teacher()
            .forward(&Matrix::vstack(&[&tg[0], &tg[1]])?)?;
        self.check_outputs(&out.embeddings)?;
        self.check_outputs(&teacher_out.embeddings)?;
        let teacher_views = teacher_out.embeddings.split_rows(b);
        let queued = teacher_views[0].clone();

        let inputs = apply_pseudo_positive(
            LossInputs::Distillation(DistillationInputs {
                student_views,
                teacher_views: teacher_views.clone(),
            }),
            replacements,
        )?;
        let LossInputs::Distillation(inputs) = inputs else {
            unreachable!()
        };
        let loss = inputs.loss(&self.dino)?;
        report.loss = loss.loss;
        self.check_loss(loss.loss)?;
        let refs: Vec<&Matrix> = loss.student_grads.iter().collect();
        let grad = Matrix::vstack(&refs)?;
        let (grads, _) = self.model.student.backward(&out.cache, &grad)?;
        self.optimizer
            .step(self.model.student.param_blocks_mut(), &grads, lr)?;
        let momentum = self.cfg.ema_schedule().value(self.step);
        self.model.ema_update(momentum)?;
        crate::losses::update_center(&mut self.dino, &teacher_views)?;
        Ok(queued)
    }
}

pub(crate) fn reason_name(r: FallbackReason) -> &'static str {
    match r {
        FallbackReason::Unassigned => "unassigned",
        FallbackReason::NoCandidate => "no_candidate",
        FallbackReason::NotQueued => "not_queued",
    }
}
