//! Verification metrics: cosine trial scoring, EER, minDCF, and
//! intra/inter-speaker variance.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, normalized, squared_distance, Matrix};
use crate::nncore::Network;
use crate::parallel;
use crate::synthgen::{Corpus, TrialList};

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredTrials {
    pub scores: Vec<f64>,
    pub labels: Vec<bool>,
}

impl ScoredTrials {
    pub fn new(scores: Vec<f64>, labels: Vec<bool>) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(Error::DimensionMismatch {
                context: "ScoredTrials",
                expected: scores.len(),
                actual: labels.len(),
            });
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::InvalidConfig("trial scores must be finite".into()));
        }
        Ok(ScoredTrials { scores, labels })
    }

    fn counts(&self) -> Result<(usize, usize)> {
        let n_target = self.labels.iter().filter(|&&l| l).count();
        let n_nontarget = self.labels.len() - n_target;
        if n_target == 0 || n_nontarget == 0 {
            return Err(Error::SingleClass);
        }
        Ok((n_target, n_nontarget))
    }

    /// `(P_fa, P_miss)` at every sweep point: one per unique score used as
    /// an accept-if-`score >= t` threshold (ascending), then reject-all.
    fn error_curve(&self) -> Result<Vec<(f64, f64)>> {
        let (n_target, n_nontarget) = self.counts()?;
        let mut order: Vec<usize> = (0..self.scores.len()).collect();
        order.sort_by(|&a, &b| self.scores[a].total_cmp(&self.scores[b]));
        let mut curve = Vec::with_capacity(order.len() + 1);
        // Threshold at the lowest score: everything accepted.
        let mut targets_below = 0usize;
        let mut nontargets_below = 0usize;
        let mut k = 0;
        while k < order.len() {
            let t = self.scores[order[k]];
            curve.push((
                (n_nontarget - nontargets_below) as f64 / n_nontarget as f64,
                targets_below as f64 / n_target as f64,
            ));
            while k < order.len() && self.scores[order[k]] == t {
                if self.labels[order[k]] {
                    targets_below += 1;
                } else {
                    nontargets_below += 1;
                }
                k += 1;
            }
        }
        curve.push((0.0, 1.0));
        Ok(curve)
    }
}

/// Equal error rate, linearly interpolated between the two sweep points
/// that bracket `P_fa = P_miss`.
pub fn compute_eer(st: &ScoredTrials) -> Result<f64> {
    let curve = st.error_curve()?;
    let mut prev = curve[0];
    for &(fa, miss) in &curve {
        let d = miss - fa;
        if d >= 0.0 {
            if d == 0.0 {
                return Ok(fa);
            }
            let d_prev = prev.1 - prev.0;
            let lambda = -d_prev / (d - d_prev);
            return Ok(prev.0 + lambda * (fa - prev.0));
        }
        prev = (fa, miss);
    }
    unreachable!("the reject-all point has P_miss = 1 >= P_fa = 0")
}

/// Normalized minimum detection cost.
pub fn compute_min_dcf(st: &ScoredTrials, p_target: f64, c_miss: f64, c_fa: f64) -> Result<f64> {
    let curve = st.error_curve()?;
    let min_cost = curve
        .iter()
        .map(|&(fa, miss)| c_miss * p_target * miss + c_fa * (1.0 - p_target) * fa)
        .fold(f64::INFINITY, f64::min);
    Ok(min_cost / (c_miss * p_target).min(c_fa * (1.0 - p_target)))
}

/// Standard operating point: `P_target = 0.01`, unit costs.
pub fn compute_min_dcf_default(st: &ScoredTrials) -> Result<f64> {
    compute_min_dcf(st, 0.01, 1.0, 1.0)
}

/// l2-normalized encoder representations of the noise-free views of every
/// utterance in `corpus`.
pub fn embed_corpus(network: &Network, corpus: &Corpus) -> Result<Matrix> {
    let ids: Vec<usize> = (0..corpus.len()).collect();
    let reps = network.encode(&corpus.clean_views(&ids)?)?;
    unit_rows(&reps)
}

fn unit_rows(m: &Matrix) -> Result<Matrix> {
    let mut out = m.clone();
    for i in 0..m.rows() {
        let u = normalized(m.row(i)).ok_or(Error::ZeroNorm {
            context: "evaluation representation",
            row: i,
        })?;
        out.row_mut(i).copy_from_slice(&u);
    }
    Ok(out)
}

/// Cosine scores of trials over precomputed unit representations.
pub fn score_with_representations(unit_reps: &Matrix, trials: &TrialList) -> Result<ScoredTrials> {
    if let Some(t) = trials
        .trials
        .iter()
        .find(|t| t.a >= unit_reps.rows() || t.b >= unit_reps.rows())
    {
        return Err(Error::UnknownUtterance(t.a.max(t.b)));
    }
    let scores = parallel::map_range(trials.len(), |k| {
        let t = trials.trials[k];
        dot(unit_reps.row(t.a), unit_reps.row(t.b)).clamp(-1.0, 1.0)
    });
    ScoredTrials::new(scores, trials.trials.iter().map(|t| t.is_target).collect())
}

/// Encode each evaluation utterance once from its full noise-free view and
/// score every trial by cosine similarity.
pub fn score_trials(
    network: &Network,
    corpus_eval: &Corpus,
    trials: &TrialList,
) -> Result<ScoredTrials> {
    score_with_representations(&embed_corpus(network, corpus_eval)?, trials)
}

/// `(intra, inter)` on l2-normalized representations: mean squared distance
/// to the own-speaker centroid, and mean squared distance between pairs of
/// speaker centroids.
pub fn speaker_variance_stats(
    representations: &Matrix,
    speaker_labels: &[usize],
) -> Result<(f64, f64)> {
    if representations.rows() != speaker_labels.len() {
        return Err(Error::DimensionMismatch {
            context: "speaker_variance_stats labels",
            expected: representations.rows(),
            actual: speaker_labels.len(),
        });
    }
    let unit = unit_rows(representations)?;
    let mut speakers: Vec<usize> = speaker_labels.to_vec();
    speakers.sort_unstable();
    speakers.dedup();
    if speakers.len() < 2 {
        return Err(Error::InvalidConfig(
            "variance statistics need at least two speakers".into(),
        ));
    }
    let d = unit.cols();
    let mut centroids = Matrix::zeros(speakers.len(), d);
    let mut counts = vec![0usize; speakers.len()];
    let slot = |s: usize| speakers.binary_search(&s).expect("speaker present");
    for (i, &s) in speaker_labels.iter().enumerate() {
        let k = slot(s);
        counts[k] += 1;
        for (c, v) in centroids.row_mut(k).iter_mut().zip(unit.row(i)) {
            *c += v;
        }
    }
    if counts.iter().any(|&c| c < 2) {
        return Err(Error::InvalidConfig(
            "variance statistics need at least two utterances per speaker".into(),
        ));
    }
    for (k, &c) in counts.iter().enumerate() {
        centroids.row_mut(k).iter_mut().for_each(|v| *v /= c as f64);
    }
    let intra = speaker_labels
        .iter()
        .enumerate()
        .map(|(i, &s)| squared_distance(unit.row(i), centroids.row(slot(s))))
        .sum::<f64>()
        / speaker_labels.len() as f64;
    let n = speakers.len();
    let mut inter = 0.0;
    for a in 0..n {
        for b in a + 1..n {
            inter += squared_distance(centroids.row(a), centroids.row(b));
        }
    }
    inter /= (n * (n - 1) / 2) as f64;
    Ok((intra, inter))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub eer: f64,
    pub min_dcf: f64,
    pub intra_speaker_variance: f64,
    pub inter_speaker_variance: f64,
    pub n_target: usize,
    pub n_nontarget: usize,
}

/// Full evaluation of `network` on an evaluation corpus.
pub fn evaluate(
    network: &Network,
    corpus_eval: &Corpus,
    trials: &TrialList,
) -> Result<MetricsReport> {
    let reps = embed_corpus(network, corpus_eval)?;
    let scored = score_with_representations(&reps, trials)?;
    let (n_target, n_nontarget) = scored.counts()?;
    let labels = corpus_eval.hidden_labels();
    let (intra, inter) = speaker_variance_stats(&reps, &labels.speaker)?;
    Ok(MetricsReport {
        eer: compute_eer(&scored)?,
        min_dcf: compute_min_dcf_default(&scored)?,
        intra_speaker_variance: intra,
        inter_speaker_variance: inter,
        n_target,
        n_nontarget,
    })
}

/// CSV `utt_id,speaker_id,dim_0..dim_{D-1}` with 17 significant digits.
pub fn export_embeddings(
    representations: &Matrix,
    speaker_labels: &[usize],
    path: &Path,
) -> Result<()> {
    if representations.rows() != speaker_labels.len() {
        return Err(Error::DimensionMismatch {
            context: "export_embeddings labels",
            expected: representations.rows(),
            actual: speaker_labels.len(),
        });
    }
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let io = |e| Error::io(path, e);
    let mut header = String::from("utt_id,speaker_id");
    for d in 0..representations.cols() {
        header.push_str(&format!(",dim_{d}"));
    }
    writeln!(w, "{header}").map_err(io)?;
    for (i, &s) in speaker_labels.iter().enumerate() {
        write!(w, "{i},{s}").map_err(io)?;
        for v in representations.row(i) {
            write!(w, ",{v:.16e}").map_err(io)?;
        }
        writeln!(w).map_err(io)?;
    }
    w.flush().map_err(io)
}
