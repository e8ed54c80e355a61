//! Self-supervised positive sampling.
//!
//! Two memory queues persist across steps: the reference queue holds one
//! un-augmented representation per training utterance and is clustered at
//! the start of every sampling epoch; the positive queue holds the most
//! recent positive embeddings, bounded and FIFO. For an anchor `i`, a
//! cluster is chosen (its own, or one of its `M` nearest by centroid
//! cosine), a different utterance `pos(i)` is drawn uniformly from that
//! cluster, and its queued embedding becomes the pseudo-positive. Missing
//! candidates or queue misses fall back to the ordinary same-utterance
//! positive.

use std::collections::{BTreeMap, VecDeque};

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cosine, dot, normalized, Matrix};
use crate::parallel;

/// Per-utterance vector store with optional FIFO capacity.
///
/// Re-inserting an id overwrites its vector in place and keeps its
/// position in the eviction order.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryQueue {
    dim: usize,
    capacity: usize,
    slots: BTreeMap<usize, Vec<f64>>,
    order: VecDeque<usize>,
}

/// Reference representations, one slot per training utterance.
pub type ReferenceQueue = MemoryQueue;
/// Positive embeddings, capacity-bounded.
pub type PositiveQueue = MemoryQueue;

impl MemoryQueue {
    pub fn new(capacity: usize, dim: usize) -> Self {
        MemoryQueue {
            dim,
            capacity,
            slots: BTreeMap::new(),
            order: VecDeque::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn contains(&self, id: usize) -> bool {
        self.slots.contains_key(&id)
    }

    pub fn get(&self, id: usize) -> Option<&[f64]> {
        self.slots.get(&id).map(Vec::as_slice)
    }

    /// Insert or overwrite; returns the evicted id, if any.
    pub fn enqueue(&mut self, id: usize, vector: &[f64]) -> Result<Option<usize>> {
        if vector.len() != self.dim {
            return Err(Error::DimensionMismatch {
                context: "queue vector",
                expected: self.dim,
                actual: vector.len(),
            });
        }
        if let Some(slot) = self.slots.get_mut(&id) {
            slot.copy_from_slice(vector);
            return Ok(None);
        }
        if self.capacity == 0 {
            return Ok(None);
        }
        self.slots.insert(id, vector.to_vec());
        self.order.push_back(id);
        if self.order.len() > self.capacity {
            let evicted = self.order.pop_front().expect("over capacity");
            self.slots.remove(&evicted);
            return Ok(Some(evicted));
        }
        Ok(None)
    }

    /// Entries in eviction order (oldest first).
    pub fn entries(&self) -> impl Iterator<Item = (usize, &[f64])> {
        self.order.iter().map(|id| (*id, self.slots[id].as_slice()))
    }

    pub fn clear(&mut self) {
        self.slots.clear();
        self.order.clear();
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SspsConfig {
    /// Number of k-means clusters.
    pub k: usize,
    /// Number of neighboring clusters to sample from; 0 means same-cluster.
    pub m: usize,
    #[serde(default = "default_kmeans_iterations")]
    pub kmeans_iterations: usize,
    /// First epoch (0-based) at which sampling is active.
    #[serde(default)]
    pub enable_epoch: usize,
    #[serde(default)]
    pub seed: u64,
    /// Positive-queue capacity; defaults to `k`.
    #[serde(default)]
    pub positive_queue_capacity: Option<usize>,
}

fn default_kmeans_iterations() -> usize {
    10
}

impl SspsConfig {
    pub fn new(k: usize, m: usize) -> Self {
        SspsConfig {
            k,
            m,
            kmeans_iterations: default_kmeans_iterations(),
            enable_epoch: 0,
            seed: 0,
            positive_queue_capacity: None,
        }
    }

    pub fn positive_capacity(&self) -> usize {
        self.positive_queue_capacity.unwrap_or(self.k)
    }

    pub fn validate(&self, n_utterances: usize) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidConfig("ssps.k must be >= 1".into()));
        }
        if self.k > n_utterances {
            return Err(Error::InvalidConfig(format!(
                "ssps.k = {} exceeds the corpus size {n_utterances}",
                self.k
            )));
        }
        if self.m > 0 && self.m >= self.k {
            return Err(Error::InvalidConfig("ssps.m must be below ssps.k".into()));
        }
        Ok(())
    }

    pub fn is_active(&self, epoch: usize) -> bool {
        epoch >= self.enable_epoch
    }
}

/// Result of a fixed-iteration spherical k-means run.
#[derive(Debug, Clone, PartialEq)]
pub struct KmeansResult {
    pub assignments: Vec<usize>,
    pub centroids: Matrix,
    /// Mean cosine to the assigned centroid, recorded after each
    /// assignment step (iterations + 1 entries, the last for the final
    /// assignment).
    pub objective_trace: Vec<f64>,
}

fn argmax_assign(points: &Matrix, centroids: &Matrix) -> (Vec<usize>, f64) {
    let best: Vec<(usize, f64)> = parallel::map_range(points.rows(), |i| {
        let p = points.row(i);
        let mut best = (0, f64::NEG_INFINITY);
        for (k, c) in centroids.row_iter().enumerate() {
            let s = dot(p, c);
            if s > best.1 {
                best = (k, s);
            }
        }
        best
    });
    let objective = best.iter().map(|b| b.1).sum::<f64>() / points.rows().max(1) as f64;
    (best.into_iter().map(|b| b.0).collect(), objective)
}

/// Spherical k-means on unit-norm `points` from the given initial centroids.
///
/// Each iteration assigns points by maximum cosine, reseeds empty clusters
/// with the least-similar member of the largest cluster, and sets every
/// centroid to the normalized mean of its members. A final assignment pass
/// follows the last iteration so assignments are argmax-consistent with the
/// returned centroids.
pub fn spherical_kmeans(points: &Matrix, init: Matrix, iterations: usize) -> Result<KmeansResult> {
    if init.cols() != points.cols() {
        return Err(Error::DimensionMismatch {
            context: "kmeans init",
            expected: points.cols(),
            actual: init.cols(),
        });
    }
    let k = init.rows();
    let mut centroids = init;
    let mut trace = Vec::with_capacity(iterations + 1);
    for _ in 0..iterations {
        let (mut assignments, objective) = argmax_assign(points, &centroids);
        trace.push(objective);

        let mut counts = vec![0usize; k];
        for &a in &assignments {
            counts[a] += 1;
        }
        let mut reseeded = vec![false; k];
        for empty in 0..k {
            if counts[empty] > 0 {
                continue;
            }
            let largest = (0..k)
                .max_by_key(|&c| (counts[c], std::cmp::Reverse(c)))
                .expect("k >= 1");
            if counts[largest] < 2 {
                break;
            }
            let far = (0..points.rows())
                .filter(|&p| assignments[p] == largest)
                .min_by(|&a, &b| {
                    dot(points.row(a), centroids.row(largest))
                        .total_cmp(&dot(points.row(b), centroids.row(largest)))
                })
                .expect("largest cluster is nonempty");
            assignments[far] = empty;
            counts[largest] -= 1;
            counts[empty] = 1;
            centroids.row_mut(empty).copy_from_slice(points.row(far));
            reseeded[empty] = true;
        }

        let mut sums = Matrix::zeros(k, points.cols());
        for (p, &a) in assignments.iter().enumerate() {
            for (s, v) in sums.row_mut(a).iter_mut().zip(points.row(p)) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] == 0 || reseeded[c] {
                continue;
            }
            if let Some(unit) = normalized(sums.row(c)) {
                centroids.row_mut(c).copy_from_slice(&unit);
            }
        }
    }
    let (assignments, objective) = argmax_assign(points, &centroids);
    trace.push(objective);
    Ok(KmeansResult {
        assignments,
        centroids,
        objective_trace: trace,
    })
}

/// Indices of the `m` most cosine-similar other centroids for every
/// cluster, descending similarity, ties broken by ascending index.
pub fn neighbor_clusters(centroids: &Matrix, m: usize) -> Result<Vec<Vec<usize>>> {
    let k = centroids.rows();
    if m > 0 && m >= k {
        return Err(Error::InvalidConfig(format!(
            "M = {m} must be below K = {k}"
        )));
    }
    Ok(parallel::map_range(k, |c| {
        if m == 0 {
            return Vec::new();
        }
        let mut others: Vec<(usize, f64)> = (0..k)
            .filter(|&j| j != c)
            .map(|j| (j, cosine(centroids.row(c), centroids.row(j))))
            .collect();
        others.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        others.into_iter().take(m).map(|(j, _)| j).collect()
    }))
}

/// Clustering of the reference queue published for one epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterState {
    pub k: usize,
    pub m: usize,
    /// Cluster of every utterance id; `None` for ids absent from the queue.
    pub assignments: Vec<Option<usize>>,
    pub centroids: Matrix,
    /// Member utterance ids per cluster, ascending.
    pub members: Vec<Vec<usize>>,
    pub neighbors: Vec<Vec<usize>>,
    pub objective_trace: Vec<f64>,
}

impl ClusterState {
    pub fn cluster_of(&self, id: usize) -> Option<usize> {
        self.assignments.get(id).copied().flatten()
    }

    /// Histogram: cluster size → number of clusters of that size.
    pub fn size_histogram(&self) -> BTreeMap<usize, usize> {
        let mut h = BTreeMap::new();
        for m in &self.members {
            *h.entry(m.len()).or_insert(0) += 1;
        }
        h
    }

    /// Fraction of assigned utterances that share their cluster's majority
    /// label. Evaluation only.
    pub fn purity(&self, labels: &[usize]) -> f64 {
        let mut agree = 0usize;
        let mut total = 0usize;
        for members in &self.members {
            let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
            for &u in members {
                *counts.entry(labels[u]).or_insert(0) += 1;
            }
            agree += counts.values().max().copied().unwrap_or(0);
            total += members.len();
        }
        if total == 0 {
            0.0
        } else {
            agree as f64 / total as f64
        }
    }
}

/// Spherical k-means over the reference queue followed by neighbor lists.
pub fn cluster(reference: &ReferenceQueue, cfg: &SspsConfig) -> Result<ClusterState> {
    let mut ids: Vec<usize> = reference.slots.keys().copied().collect();
    ids.sort_unstable();
    if ids.is_empty() || cfg.k > ids.len() || cfg.k == 0 {
        return Err(Error::Infeasible(format!(
            "cannot form K = {} clusters from {} stored representations",
            cfg.k,
            ids.len()
        )));
    }
    let dim = reference.dim;
    let mut points = Matrix::zeros(ids.len(), dim);
    for (row, id) in ids.iter().enumerate() {
        let v = &reference.slots[id];
        if let Some(unit) = normalized(v) {
            points.row_mut(row).copy_from_slice(&unit);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let seeds = index::sample(&mut rng, ids.len(), cfg.k).into_vec();
    let init = points.select_rows(&seeds);
    let km = spherical_kmeans(&points, init, cfg.kmeans_iterations)?;
    let neighbors = neighbor_clusters(&km.centroids, cfg.m)?;

    let max_id = *ids.last().expect("nonempty");
    let mut assignments = vec![None; max_id + 1];
    let mut members = vec![Vec::new(); cfg.k];
    for (row, &id) in ids.iter().enumerate() {
        let c = km.assignments[row];
        assignments[id] = Some(c);
        members[c].push(id);
    }
    Ok(ClusterState {
        k: cfg.k,
        m: cfg.m,
        assignments,
        centroids: km.centroids,
        members,
        neighbors,
        objective_trace: km.objective_trace,
    })
}

/// Cluster from which to draw the pseudo-positive of utterance `i`.
pub fn choose_cluster(i: usize, state: &ClusterState, rng: &mut ChaCha8Rng) -> Result<usize> {
    let own = state.cluster_of(i).ok_or(Error::UnknownUtterance(i))?;
    if state.m == 0 {
        return Ok(own);
    }
    let candidates = &state.neighbors[own];
    Ok(candidates[rng.random_range(0..candidates.len())])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FallbackReason {
    /// The anchor was not present in the clustered reference queue.
    Unassigned,
    /// The chosen cluster has no member other than the anchor.
    NoCandidate,
    /// `pos(i)` has no embedding in the positive queue.
    NotQueued,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PseudoPositive {
    Found {
        utterance: usize,
        cluster: usize,
        embedding: Vec<f64>,
    },
    Fallback(FallbackReason),
}

/// Draw `pos(i) ≠ i` uniformly from the chosen cluster and look up its
/// queued embedding.
pub fn sample_pseudo_positive(
    i: usize,
    state: &ClusterState,
    positives: &PositiveQueue,
    rng: &mut ChaCha8Rng,
) -> PseudoPositive {
    let Ok(cluster) = choose_cluster(i, state, rng) else {
        return PseudoPositive::Fallback(FallbackReason::Unassigned);
    };
    let members = &state.members[cluster];
    let self_pos = members.binary_search(&i).ok();
    let n_candidates = members.len() - usize::from(self_pos.is_some());
    if n_candidates == 0 {
        return PseudoPositive::Fallback(FallbackReason::NoCandidate);
    }
    let mut pick = rng.random_range(0..n_candidates);
    if let Some(s) = self_pos {
        if pick >= s {
            pick += 1;
        }
    }
    let utterance = members[pick];
    match positives.get(utterance) {
        Some(embedding) => PseudoPositive::Found {
            utterance,
            cluster,
            embedding: embedding.to_vec(),
        },
        None => PseudoPositive::Fallback(FallbackReason::NotQueued),
    }
}

/// Refresh the cluster state at the start of `epoch`; `None` while sampling
/// is still gated off.
pub fn ssps_epoch_begin(
    reference: &ReferenceQueue,
    cfg: &SspsConfig,
    epoch: usize,
) -> Result<Option<ClusterState>> {
    if !cfg.is_active(epoch) {
        return Ok(None);
    }
    cluster(reference, cfg).map(Some)
}

/// One JSON-lines record of per-epoch sampling diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SspsDiagnostics {
    pub epoch: usize,
    pub k: usize,
    pub m: usize,
    pub queries: usize,
    pub fallbacks: usize,
    pub fallback_rate: f64,
    pub fallback_reasons: BTreeMap<String, usize>,
    pub cluster_size_histogram: BTreeMap<usize, usize>,
    /// Cluster purity against hidden speaker labels.
    pub speaker_purity: f64,
    /// Fraction of found pseudo-positives sharing the anchor's speaker.
    pub positive_speaker_precision: f64,
    pub kmeans_objective: Vec<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit(v: &[f64]) -> Vec<f64> {
        normalized(v).unwrap()
    }

    fn queue_of(points: &[Vec<f64>]) -> ReferenceQueue {
        let mut q = MemoryQueue::new(points.len(), points[0].len());
        for (i, p) in points.iter().enumerate() {
            q.enqueue(i, p).unwrap();
        }
        q
    }

    #[test]
    fn reinsert_overwrites_in_place() {
        let mut q = MemoryQueue::new(4, 2);
        q.enqueue(1, &[1.0, 0.0]).unwrap();
        q.enqueue(1, &[0.0, 1.0]).unwrap();
        assert_eq!(q.len(), 1);
        assert_eq!(q.get(1), Some(&[0.0, 1.0][..]));
    }

    #[test]
    fn fifo_eviction() {
        let mut q = MemoryQueue::new(2, 1);
        q.enqueue(1, &[1.0]).unwrap();
        q.enqueue(2, &[2.0]).unwrap();
        assert_eq!(q.enqueue(3, &[3.0]).unwrap(), Some(1));
        assert!(!q.contains(1));
        assert!(q.contains(2) && q.contains(3));
    }

    #[test]
    fn reference_queue_holds_every_utterance() {
        let mut q = MemoryQueue::new(50, 3);
        for i in 0..50 {
            q.enqueue(i, &[i as f64, 0.0, 1.0]).unwrap();
        }
        assert_eq!(q.len(), 50);
        assert!(q.enqueue(0, &[1.0]).is_err());
    }

    #[test]
    fn single_cluster_centroid_is_normalized_mean() {
        let pts = vec![vec![1.0, 0.0], vec![0.0, 2.0], vec![1.0, 1.0]];
        let state = cluster(&queue_of(&pts), &SspsConfig::new(1, 0)).unwrap();
        let mut mean = [0.0; 2];
        for p in &pts {
            let u = unit(p);
            mean[0] += u[0];
            mean[1] += u[1];
        }
        let expected = unit(&mean);
        assert!((state.centroids[(0, 0)] - expected[0]).abs() < 1e-12);
        assert!((state.centroids[(0, 1)] - expected[1]).abs() < 1e-12);
        assert_eq!(state.members[0], vec![0, 1, 2]);
    }

    #[test]
    fn antipodal_points_form_perfect_clusters() {
        let pts = vec![
            vec![1.0, 0.0],
            vec![-1.0, 0.0],
            vec![2.0, 0.0],
            vec![-3.0, 0.0],
        ];
        let state = cluster(&queue_of(&pts), &SspsConfig::new(2, 0)).unwrap();
        assert_eq!(state.cluster_of(0), state.cluster_of(2));
        assert_eq!(state.cluster_of(1), state.cluster_of(3));
        assert_ne!(state.cluster_of(0), state.cluster_of(1));
        assert!((state.objective_trace.last().unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn k_exceeding_stored_count_is_rejected() {
        let q = queue_of(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert!(cluster(&q, &SspsConfig::new(3, 0)).is_err());
        assert!(cluster(&MemoryQueue::new(3, 2), &SspsConfig::new(1, 0)).is_err());
    }

    fn three_centroids() -> Matrix {
        let c = std::f64::consts::FRAC_1_SQRT_2;
        Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![c, c]]).unwrap()
    }

    #[test]
    fn neighbor_lists() {
        let cents = three_centroids();
        assert!(neighbor_clusters(&cents, 0)
            .unwrap()
            .iter()
            .all(Vec::is_empty));
        let n1 = neighbor_clusters(&cents, 1).unwrap();
        assert_eq!(n1[2], vec![0]);
        assert_eq!(n1[0], vec![2]);
        let full = neighbor_clusters(&cents, 2).unwrap();
        for (k, list) in full.iter().enumerate() {
            let mut sorted = list.clone();
            sorted.sort_unstable();
            let expected: Vec<usize> = (0..3).filter(|&j| j != k).collect();
            assert_eq!(sorted, expected);
        }
        assert!(neighbor_clusters(&cents, 3).is_err());
    }

    fn toy_state(m: usize) -> ClusterState {
        // clusters: 0 = {0, 1, 2}, 1 = {3}, 2 = {4, 5}
        let members = vec![vec![0, 1, 2], vec![3], vec![4, 5]];
        let mut assignments = vec![None; 6];
        for (c, ms) in members.iter().enumerate() {
            for &u in ms {
                assignments[u] = Some(c);
            }
        }
        let centroids = three_centroids();
        ClusterState {
            k: 3,
            m,
            assignments,
            neighbors: neighbor_clusters(&centroids, m).unwrap(),
            centroids,
            members,
            objective_trace: vec![],
        }
    }

    #[test]
    fn same_cluster_choice_is_own_cluster() {
        let state = toy_state(0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..20 {
            assert_eq!(choose_cluster(4, &state, &mut rng).unwrap(), 2);
        }
        assert!(choose_cluster(99, &state, &mut rng).is_err());
    }

    #[test]
    fn single_neighbor_is_deterministic() {
        let state = toy_state(1);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..20 {
            assert_eq!(choose_cluster(4, &state, &mut rng).unwrap(), 0);
        }
    }

    #[test]
    fn two_neighbors_are_drawn_uniformly() {
        let state = toy_state(2);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let n = 10_000;
        let hits = (0..n)
            .filter(|_| choose_cluster(0, &state, &mut rng).unwrap() == 1)
            .count();
        let sigma = (n as f64 * 0.25).sqrt();
        assert!(
            (hits as f64 - n as f64 * 0.5).abs() < 3.0 * sigma,
            "hits = {hits}"
        );
    }

    #[test]
    fn singleton_cluster_falls_back() {
        let state = toy_state(0);
        let mut q = MemoryQueue::new(10, 1);
        for i in 0..6 {
            q.enqueue(i, &[i as f64]).unwrap();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(
            sample_pseudo_positive(3, &state, &q, &mut rng),
            PseudoPositive::Fallback(FallbackReason::NoCandidate)
        );
    }

    #[test]
    fn empty_positive_queue_always_falls_back() {
        let state = toy_state(0);
        let q = MemoryQueue::new(10, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for i in 0..6 {
            assert!(matches!(
                sample_pseudo_positive(i, &state, &q, &mut rng),
                PseudoPositive::Fallback(_)
            ));
        }
    }

    #[test]
    fn non_anchor_members_are_drawn_uniformly() {
        let state = toy_state(0);
        let mut q = MemoryQueue::new(10, 1);
        for i in 0..6 {
            q.enqueue(i, &[i as f64]).unwrap();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 10_000;
        let mut counts = [0usize; 3];
        for _ in 0..n {
            match sample_pseudo_positive(1, &state, &q, &mut rng) {
                PseudoPositive::Found {
                    utterance,
                    embedding,
                    ..
                } => {
                    assert_ne!(utterance, 1);
                    assert_eq!(embedding, vec![utterance as f64]);
                    counts[utterance] += 1;
                }
                other => panic!("unexpected {other:?}"),
            }
        }
        let sigma = (n as f64 * 0.25).sqrt();
        for &c in &[counts[0], counts[2]] {
            assert!((c as f64 - n as f64 / 2.0).abs() < 3.0 * sigma);
        }
    }

    #[test]
    fn gating_and_determinism_of_epoch_refresh() {
        let pts: Vec<Vec<f64>> = (0..20)
            .map(|i| vec![(i as f64).cos(), (i as f64).sin(), 0.3])
            .collect();
        let q = queue_of(&pts);
        let cfg = SspsConfig {
            enable_epoch: 3,
            ..SspsConfig::new(4, 1)
        };
        assert!(ssps_epoch_begin(&q, &cfg, 2).unwrap().is_none());
        let a = ssps_epoch_begin(&q, &cfg, 3).unwrap().unwrap();
        let b = ssps_epoch_begin(&q, &cfg, 4).unwrap().unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn purity_and_histogram() {
        let state = toy_state(0);
        let labels = [0, 0, 1, 1, 2, 2];
        assert!((state.purity(&labels) - 5.0 / 6.0).abs() < 1e-15);
        let h = state.size_histogram();
        assert_eq!(h[&1], 1);
        assert_eq!(h[&2], 1);
        assert_eq!(h[&3], 1);
    }

    #[derive(Debug, Clone)]
    enum Op {
        Push(usize, f64),
    }

    proptest! {
        #[test]
        fn queue_matches_reference_model(
            capacity in 0usize..6,
            ops in proptest::collection::vec((0usize..10, -5.0f64..5.0).prop_map(|(i, v)| Op::Push(i, v)), 0..60),
        ) {
            let mut q = MemoryQueue::new(capacity, 1);
            let mut model: Vec<(usize, f64)> = Vec::new();
            for Op::Push(id, v) in ops {
                q.enqueue(id, &[v]).unwrap();
                if let Some(slot) = model.iter_mut().find(|(k, _)| *k == id) {
                    slot.1 = v;
                } else if capacity > 0 {
                    model.push((id, v));
                    if model.len() > capacity {
                        model.remove(0);
                    }
                }
                let got: Vec<(usize, f64)> = q.entries().map(|(k, v)| (k, v[0])).collect();
                prop_assert_eq!(&got, &model);
                prop_assert!(q.len() <= capacity);
            }
        }
    }
}
