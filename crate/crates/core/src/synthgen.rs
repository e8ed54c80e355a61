//! Synthetic speaker/channel corpus.
//!
//! Every utterance is generated from a speaker latent and a recording
//! (channel) latent pushed through fixed random mixing matrices:
//!
//! ```text
//! view = α·W_s·s + β·W_r·r + segment_noise + augment_noise
//! ```
//!
//! Utterances of one recording share `r` exactly, so two segments of the
//! same utterance agree on channel as well as on speaker. Speaker and
//! recording ids are hidden from self-supervised training; they are only
//! reachable through [`Corpus::hidden_labels`], which the trainer calls for
//! evaluation and for the supervised positive-sampling baseline.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusConfig {
    pub n_speakers: usize,
    pub recordings_per_speaker: usize,
    pub utterances_per_recording: usize,
    pub latent_dim: usize,
    pub input_dim: usize,
    pub speaker_scale: f64,
    pub channel_scale: f64,
    pub segment_noise_sigma: f64,
    pub augment_noise_sigma: f64,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            n_speakers: 64,
            recordings_per_speaker: 4,
            utterances_per_recording: 8,
            latent_dim: 8,
            input_dim: 32,
            speaker_scale: 1.0,
            channel_scale: 0.5,
            segment_noise_sigma: 0.3,
            augment_noise_sigma: 0.3,
            seed: 7,
        }
    }
}

impl CorpusConfig {
    pub fn n_utterances(&self) -> usize {
        self.n_speakers * self.recordings_per_speaker * self.utterances_per_recording
    }

    pub fn n_recordings(&self) -> usize {
        self.n_speakers * self.recordings_per_speaker
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_speakers", self.n_speakers),
            ("recordings_per_speaker", self.recordings_per_speaker),
            ("utterances_per_recording", self.utterances_per_recording),
            ("latent_dim", self.latent_dim),
            ("input_dim", self.input_dim),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("corpus.{name} must be >= 1")));
            }
        }
        if self.input_dim < self.latent_dim {
            return Err(Error::InvalidConfig(
                "corpus.input_dim must be >= corpus.latent_dim".into(),
            ));
        }
        for (name, v) in [
            ("segment_noise_sigma", self.segment_noise_sigma),
            ("augment_noise_sigma", self.augment_noise_sigma),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidConfig(format!("corpus.{name} must be >= 0")));
            }
        }
        if !self.speaker_scale.is_finite() || !self.channel_scale.is_finite() {
            return Err(Error::InvalidConfig("corpus scales must be finite".into()));
        }
        Ok(())
    }

    fn to_header(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "n_speakers={}", self.n_speakers);
        let _ = writeln!(s, "recordings_per_speaker={}", self.recordings_per_speaker);
        let _ = writeln!(
            s,
            "utterances_per_recording={}",
            self.utterances_per_recording
        );
        let _ = writeln!(s, "latent_dim={}", self.latent_dim);
        let _ = writeln!(s, "input_dim={}", self.input_dim);
        let _ = writeln!(s, "speaker_scale={:?}", self.speaker_scale);
        let _ = writeln!(s, "channel_scale={:?}", self.channel_scale);
        let _ = writeln!(s, "segment_noise_sigma={:?}", self.segment_noise_sigma);
        let _ = writeln!(s, "augment_noise_sigma={:?}", self.augment_noise_sigma);
        let _ = writeln!(s, "seed={}", self.seed);
        s
    }

    fn from_header(pairs: &BTreeMap<String, String>) -> Result<Self> {
        fn get<T: std::str::FromStr>(pairs: &BTreeMap<String, String>, key: &str) -> Result<T> {
            pairs
                .get(key)
                .ok_or_else(|| Error::Parse(format!("missing corpus header key `{key}`")))?
                .parse()
                .map_err(|_| Error::Parse(format!("bad value for corpus header key `{key}`")))
        }
        Ok(CorpusConfig {
            n_speakers: get(pairs, "n_speakers")?,
            recordings_per_speaker: get(pairs, "recordings_per_speaker")?,
            utterances_per_recording: get(pairs, "utterances_per_recording")?,
            latent_dim: get(pairs, "latent_dim")?,
            input_dim: get(pairs, "input_dim")?,
            speaker_scale: get(pairs, "speaker_scale")?,
            channel_scale: get(pairs, "channel_scale")?,
            segment_noise_sigma: get(pairs, "segment_noise_sigma")?,
            augment_noise_sigma: get(pairs, "augment_noise_sigma")?,
            seed: get(pairs, "seed")?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceMeta {
    pub utterance_id: usize,
    speaker_id: usize,
    recording_id: usize,
    pub speaker_latent: Vec<f64>,
    pub channel_latent: Vec<f64>,
}

/// Speaker and recording ids of every utterance.
///
/// Only evaluation code and the supervised positive-sampling baseline may
/// hold one of these.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenLabels {
    pub speaker: Vec<usize>,
    pub recording: Vec<usize>,
}

impl HiddenLabels {
    /// Utterances of the same speaker recorded in a different recording.
    pub fn cross_recording_positives(&self, i: usize) -> Vec<usize> {
        (0..self.speaker.len())
            .filter(|&j| {
                self.speaker[j] == self.speaker[i] && self.recording[j] != self.recording[i]
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub config: CorpusConfig,
    pub utterances: Vec<UtteranceMeta>,
    /// `input_dim × latent_dim`.
    pub speaker_mixing: Matrix,
    /// `input_dim × latent_dim`.
    pub channel_mixing: Matrix,
    /// Noise-free view of every utterance, `N × input_dim`.
    clean: Matrix,
}

fn normal_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n)
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// Deterministically build a corpus from its configuration.
pub fn build_corpus(config: &CorpusConfig) -> Result<Corpus> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let w_scale = 1.0 / (config.latent_dim as f64).sqrt();
    let speaker_mixing = Matrix::from_vec(
        config.input_dim,
        config.latent_dim,
        normal_vec(&mut rng, config.input_dim * config.latent_dim, w_scale),
    )?;
    let channel_mixing = Matrix::from_vec(
        config.input_dim,
        config.latent_dim,
        normal_vec(&mut rng, config.input_dim * config.latent_dim, w_scale),
    )?;
    populate(
        config.clone(),
        speaker_mixing,
        channel_mixing,
        &mut rng,
        0,
        0,
    )
}

impl Corpus {
    /// A corpus of `n_speakers` new speakers in the same acoustic world
    /// (shared mixing matrices). Speaker and recording ids continue after
    /// this corpus's ids, so the two speaker sets are disjoint.
    pub fn derive_disjoint(&self, n_speakers: usize, seed: u64) -> Result<Corpus> {
        let config = CorpusConfig {
            n_speakers,
            seed,
            ..self.config.clone()
        };
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let first_speaker = self
            .utterances
            .iter()
            .map(|u| u.speaker_id + 1)
            .max()
            .unwrap_or(0);
        let first_recording = self
            .utterances
            .iter()
            .map(|u| u.recording_id + 1)
            .max()
            .unwrap_or(0);
        populate(
            config,
            self.speaker_mixing.clone(),
            self.channel_mixing.clone(),
            &mut rng,
            first_speaker,
            first_recording,
        )
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.config.input_dim
    }

    pub fn hidden_labels(&self) -> HiddenLabels {
        HiddenLabels {
            speaker: self.utterances.iter().map(|u| u.speaker_id).collect(),
            recording: self.utterances.iter().map(|u| u.recording_id).collect(),
        }
    }

    /// Noise-free "full-length" view of utterance `i`.
    pub fn clean_view(&self, i: usize) -> Result<&[f64]> {
        if i >= self.len() {
            return Err(Error::UnknownUtterance(i));
        }
        Ok(self.clean.row(i))
    }

    /// Noise-free views of the listed utterances.
    pub fn clean_views(&self, indices: &[usize]) -> Result<Matrix> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(Error::UnknownUtterance(bad));
        }
        Ok(self.clean.select_rows(indices))
    }

    /// Write one noisy view of utterance `i` into `out`. Both noise terms
    /// are always drawn so the rng advances identically whatever the sigmas.
    fn write_view(
        &self,
        i: usize,
        segment_sigma: f64,
        augment_sigma: f64,
        rng: &mut ChaCha8Rng,
        out: &mut [f64],
    ) {
        for (o, &c) in out.iter_mut().zip(self.clean.row(i)) {
            let seg: f64 = rng.sample(StandardNormal);
            let aug: f64 = rng.sample(StandardNormal);
            *o = c + segment_sigma * seg + augment_sigma * aug;
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = self.config.to_header();
        s.push_str("# utt_id speaker_id recording_id\n");
        for u in &self.utterances {
            let _ = writeln!(s, "{} {} {}", u.utterance_id, u.speaker_id, u.recording_id);
        }
        s
    }

    pub fn write_text(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

fn populate(
    config: CorpusConfig,
    speaker_mixing: Matrix,
    channel_mixing: Matrix,
    rng: &mut ChaCha8Rng,
    first_speaker: usize,
    first_recording: usize,
) -> Result<Corpus> {
    let latent = config.latent_dim;
    let speakers: Vec<Vec<f64>> = (0..config.n_speakers)
        .map(|_| normal_vec(rng, latent, 1.0))
        .collect();
    let channels: Vec<Vec<f64>> = (0..config.n_recordings())
        .map(|_| normal_vec(rng, latent, 1.0))
        .collect();

    let n = config.n_utterances();
    let mut utterances = Vec::with_capacity(n);
    let mut clean = Matrix::zeros(n, config.input_dim);
    let mut id = 0;
    for (s, speaker_latent) in speakers.iter().enumerate() {
        for r in 0..config.recordings_per_speaker {
            let rec = s * config.recordings_per_speaker + r;
            let channel_latent = &channels[rec];
            let signal = mix(
                &config,
                &speaker_mixing,
                &channel_mixing,
                speaker_latent,
                channel_latent,
            );
            for _ in 0..config.utterances_per_recording {
                clean.row_mut(id).copy_from_slice(&signal);
                utterances.push(UtteranceMeta {
                    utterance_id: id,
                    speaker_id: first_speaker + s,
                    recording_id: first_recording + rec,
                    speaker_latent: speaker_latent.clone(),
                    channel_latent: channel_latent.clone(),
                });
                id += 1;
            }
        }
    }
    Ok(Corpus {
        config,
        utterances,
        speaker_mixing,
        channel_mixing,
        clean,
    })
}

fn mix(config: &CorpusConfig, ws: &Matrix, wr: &Matrix, s: &[f64], r: &[f64]) -> Vec<f64> {
    (0..config.input_dim)
        .map(|d| {
            let sp: f64 = ws.row(d).iter().zip(s).map(|(w, v)| w * v).sum();
            let ch: f64 = wr.row(d).iter().zip(r).map(|(w, v)| w * v).sum();
            config.speaker_scale * sp + config.channel_scale * ch
        })
        .collect()
}

/// Parse the configuration header of an exported corpus.
pub fn parse_corpus_header(text: &str) -> Result<CorpusConfig> {
    let mut pairs = BTreeMap::new();
    for line in text.lines() {
        if line.starts_with('#') {
            break;
        }
        if let Some((k, v)) = line.split_once('=') {
            pairs.insert(k.trim().to_string(), v.trim().to_string());
        }
    }
    CorpusConfig::from_header(&pairs)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViewSpec {
    /// Anchor + positive (SimCLR).
    Pair,
    /// Two global and four local crops (DINO).
    MultiCrop,
}

#[allow(clippy::large_enum_variant)]
#[derive(Debug, Clone, PartialEq)]
pub enum Views {
    Pair {
        anchors: Matrix,
        positives: Matrix,
    },
    MultiCrop {
        /// Longer crops, seen by student and teacher.
        globals: [Matrix; 2],
        /// Shorter crops, student only.
        locals: [Matrix; 4],
        /// Teacher crops when positives come from other utterances;
        /// `None` means the teacher sees `globals`.
        teacher_globals: Option<[Matrix; 2]>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViewBatch {
    pub indices: Vec<usize>,
    pub views: Views,
    /// Un-augmented longer segments, used only for clustering.
    pub references: Matrix,
}

/// Sample training views for a batch.
///
/// `positive_sources[k]`, when given, names the utterance the positive
/// (or the teacher crops) of item `k` are drawn from; otherwise it is the
/// item's own utterance.
pub fn sample_views(
    corpus: &Corpus,
    indices: &[usize],
    spec: ViewSpec,
    positive_sources: Option<&[usize]>,
    rng: &mut ChaCha8Rng,
) -> Result<ViewBatch> {
    if let Some(&bad) = indices.iter().find(|&&i| i >= corpus.len()) {
        return Err(Error::UnknownUtterance(bad));
    }
    if let Some(src) = positive_sources {
        if src.len() != indices.len() {
            return Err(Error::DimensionMismatch {
                context: "sample_views positive_sources",
                expected: indices.len(),
                actual: src.len(),
            });
        }
        if let Some(&bad) = src.iter().find(|&&i| i >= corpus.len()) {
            return Err(Error::UnknownUtterance(bad));
        }
    }
    let b = indices.len();
    let d = corpus.input_dim();
    let seg = corpus.config.segment_noise_sigma;
    let aug = corpus.config.augment_noise_sigma;
    let long_seg = seg / std::f64::consts::SQRT_2;
    let mut references = Matrix::zeros(b, d);

    let views = match spec {
        ViewSpec::Pair => {
            let mut anchors = Matrix::zeros(b, d);
            let mut positives = Matrix::zeros(b, d);
            for (k, &i) in indices.iter().enumerate() {
                let p = positive_sources.map_or(i, |s| s[k]);
                corpus.write_view(i, seg, aug, rng, anchors.row_mut(k));
                corpus.write_view(p, seg, aug, rng, positives.row_mut(k));
                corpus.write_view(i, long_seg, 0.0, rng, references.row_mut(k));
            }
            Views::Pair { anchors, positives }
        }
        ViewSpec::MultiCrop => {
            let mut globals = [Matrix::zeros(b, d), Matrix::zeros(b, d)];
            let mut locals = std::array::from_fn(|_| Matrix::zeros(b, d));
            let mut teacher = positive_sources.map(|_| [Matrix::zeros(b, d), Matrix::zeros(b, d)]);
            for (k, &i) in indices.iter().enumerate() {
                for g in globals.iter_mut() {
                    corpus.write_view(i, long_seg, aug, rng, g.row_mut(k));
                }
                for l in locals.iter_mut() {
                    corpus.write_view(i, seg, aug, rng, l.row_mut(k));
                }
                if let (Some(t), Some(src)) = (teacher.as_mut(), positive_sources) {
                    for g in t.iter_mut() {
                        corpus.write_view(src[k], long_seg, aug, rng, g.row_mut(k));
                    }
                }
                corpus.write_view(i, long_seg, 0.0, rng, references.row_mut(k));
            }
            Views::MultiCrop {
                globals,
                locals,
                teacher_globals: teacher,
            }
        }
    };
    Ok(ViewBatch {
        indices: indices.to_vec(),
        views,
        references,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Trial {
    pub a: usize,
    pub b: usize,
    pub is_target: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TrialList {
    pub trials: Vec<Trial>,
}

/// Draw distinct unordered trial pairs from an evaluation corpus.
pub fn build_trials(
    corpus_eval: &Corpus,
    n_target: usize,
    n_nontarget: usize,
    rng: &mut ChaCha8Rng,
) -> Result<TrialList> {
    let labels = corpus_eval.hidden_labels();
    let n = corpus_eval.len();
    let mut same = Vec::new();
    let mut diff = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            if labels.speaker[a] == labels.speaker[b] {
                same.push((a, b));
            } else {
                diff.push((a, b));
            }
        }
    }
    if n_target > same.len() {
        return Err(Error::Infeasible(format!(
            "{n_target} target trials requested, {} same-speaker pairs available",
            same.len()
        )));
    }
    if n_nontarget > diff.len() {
        return Err(Error::Infeasible(format!(
            "{n_nontarget} non-target trials requested, {} different-speaker pairs available",
            diff.len()
        )));
    }
    let mut trials = Vec::with_capacity(n_target + n_nontarget);
    let mut targets = index::sample(rng, same.len(), n_target).into_vec();
    targets.sort_unstable();
    trials.extend(targets.into_iter().map(|k| Trial {
        a: same[k].0,
        b: same[k].1,
        is_target: true,
    }));
    let mut nontargets = index::sample(rng, diff.len(), n_nontarget).into_vec();
    nontargets.sort_unstable();
    trials.extend(nontargets.into_iter().map(|k| Trial {
        a: diff[k].0,
        b: diff[k].1,
        is_target: false,
    }));
    Ok(TrialList { trials })
}

impl TrialList {
    pub fn len(&self) -> usize {
        self.trials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trials.is_empty()
    }

    /// One `<label 0|1> <utt_id_a> <utt_id_b>` line per trial.
    pub fn to_text(&self) -> String {
        let mut s = String::with_capacity(self.trials.len() * 12);
        for t in &self.trials {
            let _ = writeln!(s, "{} {} {}", u8::from(t.is_target), t.a, t.b);
        }
        s
    }

    pub fn parse(text: &str) -> Result<TrialList> {
        let mut trials = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let bad = || Error::Parse(format!("trial line {}: `{line}`", lineno + 1));
            let mut parts = line.split_whitespace();
            let label = match parts.next().ok_or_else(bad)? {
                "0" => false,
                "1" => true,
                _ => return Err(bad()),
            };
            let a = parts.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
            let b = parts.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
            if parts.next().is_some() {
                return Err(bad());
            }
            trials.push(Trial {
                a,
                b,
                is_target: label,
            });
        }
        Ok(TrialList { trials })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<TrialList> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(s: usize, r: usize, u: usize) -> CorpusConfig {
        CorpusConfig {
            n_speakers: s,
            recordings_per_speaker: r,
            utterances_per_recording: u,
            ..CorpusConfig::default()
        }
    }

    fn distinct(vs: impl Iterator<Item = Vec<f64>>) -> usize {
        let mut out: Vec<Vec<f64>> = Vec::new();
        for v in vs {
            if !out.contains(&v) {
                out.push(v);
            }
        }
        out.len()
    }

    #[test]
    fn two_speakers_one_recording_each() {
        let c = build_corpus(&cfg(2, 1, 1)).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(
            distinct(c.utterances.iter().map(|u| u.speaker_latent.clone())),
            2
        );
        assert_eq!(
            distinct(c.utterances.iter().map(|u| u.channel_latent.clone())),
            2
        );
    }

    #[test]
    fn one_speaker_three_recordings() {
        let c = build_corpus(&cfg(1, 3, 2)).unwrap();
        assert_eq!(c.len(), 6);
        assert_eq!(
            distinct(c.utterances.iter().map(|u| u.speaker_latent.clone())),
            1
        );
        assert_eq!(
            distinct(c.utterances.iter().map(|u| u.channel_latent.clone())),
            3
        );
        let labels = c.hidden_labels();
        for a in 0..6 {
            for b in 0..6 {
                let same_rec = labels.recording[a] == labels.recording[b];
                let same_chan = c.utterances[a].channel_latent == c.utterances[b].channel_latent;
                assert_eq!(same_rec, same_chan);
            }
        }
    }

    #[test]
    fn corpus_is_deterministic() {
        let a = build_corpus(&CorpusConfig::default()).unwrap();
        let b = build_corpus(&CorpusConfig::default()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 2048);
    }

    #[test]
    fn rejects_zero_counts_and_negative_sigma() {
        assert!(build_corpus(&cfg(0, 1, 1)).is_err());
        assert!(build_corpus(&cfg(1, 0, 1)).is_err());
        let neg = CorpusConfig {
            segment_noise_sigma: -0.1,
            ..CorpusConfig::default()
        };
        assert!(build_corpus(&neg).is_err());
        let narrow = CorpusConfig {
            input_dim: 4,
            latent_dim: 8,
            ..CorpusConfig::default()
        };
        assert!(build_corpus(&narrow).is_err());
    }

    #[test]
    fn noiseless_anchor_equals_positive() {
        let c = build_corpus(&CorpusConfig {
            segment_noise_sigma: 0.0,
            augment_noise_sigma: 0.0,
            ..cfg(3, 2, 2)
        })
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let batch = sample_views(&c, &[0, 5, 11], ViewSpec::Pair, None, &mut rng).unwrap();
        match &batch.views {
            Views::Pair { anchors, positives } => {
                assert_eq!(anchors, positives);
                assert_eq!(anchors, &batch.references);
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn without_channel_term_same_speaker_views_share_mean() {
        let c = build_corpus(&CorpusConfig {
            channel_scale: 0.0,
            ..cfg(2, 3, 2)
        })
        .unwrap();
        // utterances 0 and 2 are speaker 0, recordings 0 and 1
        assert_eq!(c.clean_view(0).unwrap(), c.clean_view(2).unwrap());
        assert_ne!(c.clean_view(0).unwrap(), c.clean_view(6).unwrap());
    }

    #[test]
    fn clean_view_matches_direct_matrix_product() {
        let c = build_corpus(&CorpusConfig {
            speaker_scale: 1.0,
            channel_scale: 1.0,
            ..cfg(3, 2, 1)
        })
        .unwrap();
        for u in &c.utterances {
            let s = Matrix::from_vec(c.config.latent_dim, 1, u.speaker_latent.clone()).unwrap();
            let r = Matrix::from_vec(c.config.latent_dim, 1, u.channel_latent.clone()).unwrap();
            let ws = c.speaker_mixing.matmul(&s).unwrap();
            let wr = c.channel_mixing.matmul(&r).unwrap();
            let view = c.clean_view(u.utterance_id).unwrap();
            for d in 0..c.input_dim() {
                assert!((view[d] - (ws[(d, 0)] + wr[(d, 0)])).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn multicrop_shapes_and_reference_noise() {
        let c = build_corpus(&cfg(2, 2, 2)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let batch = sample_views(
            &c,
            &[0, 1, 2],
            ViewSpec::MultiCrop,
            Some(&[1, 0, 3]),
            &mut rng,
        )
        .unwrap();
        match &batch.views {
            Views::MultiCrop {
                globals,
                locals,
                teacher_globals,
            } => {
                assert!(globals
                    .iter()
                    .chain(locals.iter())
                    .all(|m| m.rows() == 3 && m.cols() == 32));
                assert!(teacher_globals.is_some());
            }
            _ => unreachable!(),
        }
        assert!(sample_views(&c, &[99], ViewSpec::Pair, None, &mut rng).is_err());
    }

    #[test]
    fn channel_dominated_neighbors_share_recording() {
        let c = build_corpus(&CorpusConfig {
            speaker_scale: 0.05,
            channel_scale: 5.0,
            ..cfg(8, 3, 2)
        })
        .unwrap();
        let labels = c.hidden_labels();
        for i in 0..c.len() {
            let vi = c.clean_view(i).unwrap();
            let nn = (0..c.len())
                .filter(|&j| j != i)
                .max_by(|&a, &b| {
                    let ca = crate::linalg::cosine(vi, c.clean_view(a).unwrap());
                    let cb = crate::linalg::cosine(vi, c.clean_view(b).unwrap());
                    ca.total_cmp(&cb)
                })
                .unwrap();
            assert_eq!(labels.recording[nn], labels.recording[i]);
        }
    }

    #[test]
    fn trial_counts_and_labels() {
        let c = build_corpus(&cfg(4, 2, 3)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let trials = build_trials(&c, 10, 10, &mut rng).unwrap();
        assert_eq!(trials.len(), 20);
        assert_eq!(trials.trials.iter().filter(|t| t.is_target).count(), 10);
        let labels = c.hidden_labels();
        for t in &trials.trials {
            assert_ne!(t.a, t.b);
            assert_eq!(t.is_target, labels.speaker[t.a] == labels.speaker[t.b]);
        }
        assert_eq!(TrialList::parse(&trials.to_text()).unwrap(), trials);
    }

    #[test]
    fn single_speaker_has_no_nontarget_pairs() {
        let c = build_corpus(&cfg(1, 2, 2)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        assert!(matches!(
            build_trials(&c, 0, 1, &mut rng),
            Err(Error::Infeasible(_))
        ));
        assert!(matches!(
            build_trials(&c, 100, 0, &mut rng),
            Err(Error::Infeasible(_))
        ));
    }

    #[test]
    fn derived_corpus_has_disjoint_speakers() {
        let train = build_corpus(&cfg(4, 2, 2)).unwrap();
        let eval = train.derive_disjoint(3, 99).unwrap();
        let a = train.hidden_labels().speaker;
        let b = eval.hidden_labels().speaker;
        assert!(b.iter().all(|s| !a.contains(s)));
        assert_eq!(eval.speaker_mixing, train.speaker_mixing);
    }

    #[test]
    fn corpus_text_header_round_trips() {
        let c = build_corpus(&cfg(2, 2, 2)).unwrap();
        let text = c.to_text();
        assert_eq!(parse_corpus_header(&text).unwrap(), c.config);
        assert_eq!(
            text.lines()
                .filter(|l| !l.contains('=') && !l.starts_with('#'))
                .count(),
            8
        );
    }

    #[test]
    fn malformed_trial_lines_are_rejected() {
        assert!(TrialList::parse("2 0 1\n").is_err());
        assert!(TrialList::parse("1 0\n").is_err());
        assert!(TrialList::parse("1 0 1 5\n").is_err());
    }
}
