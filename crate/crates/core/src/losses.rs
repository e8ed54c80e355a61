//! Contrastive (SimCLR) and self-distillation (DINO) objectives with
//! analytic gradients, plus substitution of queue-sourced pseudo-positives.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::linalg::{dot, log_sum_exp, softmax_into, Matrix};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimclrParams {
    pub temperature: f64,
}

impl SimclrParams {
    pub fn new(temperature: f64) -> Result<Self> {
        if temperature.is_nan() || temperature <= 0.0 {
            return Err(Error::InvalidConfig(
                "SimCLR temperature must be > 0".into(),
            ));
        }
        Ok(SimclrParams { temperature })
    }
}

impl Default for SimclrParams {
    fn default() -> Self {
        SimclrParams { temperature: 0.03 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DinoParams {
    pub student_temperature: f64,
    pub teacher_temperature: f64,
    pub center: Vec<f64>,
    pub center_momentum: f64,
}

impl DinoParams {
    pub fn new(
        student_temperature: f64,
        teacher_temperature: f64,
        dim: usize,
        center_momentum: f64,
    ) -> Result<Self> {
        if !(student_temperature > 0.0 && teacher_temperature > 0.0) {
            return Err(Error::InvalidConfig("DINO temperatures must be > 0".into()));
        }
        if teacher_temperature >= student_temperature {
            return Err(Error::InvalidConfig(
                "DINO teacher temperature must be below the student temperature".into(),
            ));
        }
        if !(0.0..1.0).contains(&center_momentum) {
            return Err(Error::InvalidConfig(
                "DINO center momentum must be in [0, 1)".into(),
            ));
        }
        Ok(DinoParams {
            student_temperature,
            teacher_temperature,
            center: vec![0.0; dim],
            center_momentum,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimclrOutput {
    pub loss: f64,
    pub grad_anchors: Matrix,
    pub grad_positives: Matrix,
}

fn normalize_rows(m: &Matrix, context: &'static str) -> Result<(Matrix, Vec<f64>)> {
    let mut out = m.clone();
    let mut norms = Vec::with_capacity(m.rows());
    for i in 0..m.rows() {
        let row = out.row_mut(i);
        let n = dot(row, row).sqrt();
        if n == 0.0 || !n.is_finite() {
            return Err(Error::ZeroNorm { context, row: i });
        }
        row.iter_mut().for_each(|v| *v /= n);
        norms.push(n);
    }
    Ok((out, norms))
}

/// Chain a gradient w.r.t. unit rows back through `x ↦ x/|x|`.
fn through_normalization(unit: &Matrix, norms: &[f64], grad_unit: &Matrix) -> Matrix {
    let mut out = grad_unit.clone();
    for (i, &n) in norms.iter().enumerate() {
        let u = unit.row(i);
        let proj = dot(u, grad_unit.row(i));
        for (g, &uv) in out.row_mut(i).iter_mut().zip(u) {
            *g = (*g - uv * proj) / n;
        }
    }
    out
}

/// InfoNCE over cosine similarities, in-batch negatives:
///
/// `L = −(1/B) Σ_i log[ exp(cos(z_i, z'_i)/τ) / Σ_j exp(cos(z_i, z'_j)/τ) ]`
pub fn simclr_loss(
    anchors: &Matrix,
    positives: &Matrix,
    params: &SimclrParams,
) -> Result<SimclrOutput> {
    if anchors.rows() != positives.rows() || anchors.cols() != positives.cols() {
        return Err(Error::DimensionMismatch {
            context: "simclr_loss batch shape",
            expected: anchors.rows() * anchors.cols(),
            actual: positives.rows() * positives.cols(),
        });
    }
    let b = anchors.rows();
    if b == 0 {
        return Err(Error::InvalidConfig(
            "simclr_loss needs a nonempty batch".into(),
        ));
    }
    let tau = params.temperature;
    let (a, a_norms) = normalize_rows(anchors, "simclr anchors")?;
    let (p, p_norms) = normalize_rows(positives, "simclr positives")?;
    let mut logits = a.matmul_t(&p)?;
    logits.as_mut_slice().iter_mut().for_each(|v| *v /= tau);

    let inv_b = 1.0 / b as f64;
    let mut loss = 0.0;
    // d loss / d logits
    let mut g = Matrix::zeros(b, b);
    for i in 0..b {
        let row = logits.row(i);
        loss += log_sum_exp(row) - row[i];
        softmax_into(row, g.row_mut(i));
        g[(i, i)] -= 1.0;
    }
    loss *= inv_b;
    g.as_mut_slice().iter_mut().for_each(|v| *v *= inv_b / tau);

    let grad_a_unit = g.matmul(&p)?;
    let grad_p_unit = g.t_matmul(&a)?;
    Ok(SimclrOutput {
        loss,
        grad_anchors: through_normalization(&a, &a_norms, &grad_a_unit),
        grad_positives: through_normalization(&p, &p_norms, &grad_p_unit),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DinoOutput {
    pub loss: f64,
    /// One gradient matrix per student view.
    pub student_grads: Vec<Matrix>,
}

pub const DINO_STUDENT_VIEWS: usize = 6;
pub const DINO_TEACHER_VIEWS: usize = 2;

/// `H(a, b) = −softmax(a)·log softmax(b)`.
pub fn cross_entropy(teacher_logits: &[f64], student_logits: &[f64]) -> f64 {
    let mut pt = vec![0.0; teacher_logits.len()];
    softmax_into(teacher_logits, &mut pt);
    let lse = log_sum_exp(student_logits);
    -pt.iter()
        .zip(student_logits)
        .map(|(p, s)| p * (s - lse))
        .sum::<f64>()
}

/// Teacher distribution `softmax((z' − c)/τ_t)` for every row of `teacher`.
pub fn teacher_probabilities(teacher: &Matrix, params: &DinoParams) -> Matrix {
    let mut probs = Matrix::zeros(teacher.rows(), teacher.cols());
    let mut logits = vec![0.0; teacher.cols()];
    for i in 0..teacher.rows() {
        for ((l, &z), &c) in logits.iter_mut().zip(teacher.row(i)).zip(&params.center) {
            *l = (z - c) / params.teacher_temperature;
        }
        softmax_into(&logits, probs.row_mut(i));
    }
    probs
}

/// Multi-crop self-distillation loss. Student views 0 and 1 are the global
/// crops matching teacher views 0 and 1; the pair `(t, s = t)` is skipped.
///
/// `L = (1/B) Σ_i Σ_t Σ_{s≠t} H((z'_{i,t} − c)/τ_t, z_{i,s}/τ_s)`
pub fn dino_loss(
    student_views: &[Matrix],
    teacher_views: &[Matrix],
    params: &DinoParams,
) -> Result<DinoOutput> {
    if student_views.len() != DINO_STUDENT_VIEWS {
        return Err(Error::DimensionMismatch {
            context: "dino_loss student views",
            expected: DINO_STUDENT_VIEWS,
            actual: student_views.len(),
        });
    }
    if teacher_views.len() != DINO_TEACHER_VIEWS {
        return Err(Error::DimensionMismatch {
            context: "dino_loss teacher views",
            expected: DINO_TEACHER_VIEWS,
            actual: teacher_views.len(),
        });
    }
    let b = student_views[0].rows();
    let d = params.center.len();
    for m in student_views.iter().chain(teacher_views) {
        if m.rows() != b || m.cols() != d {
            return Err(Error::DimensionMismatch {
                context: "dino_loss view shape",
                expected: b * d,
                actual: m.rows() * m.cols(),
            });
        }
    }
    let tau_s = params.student_temperature;
    let inv_b = 1.0 / b.max(1) as f64;
    let teacher_probs: Vec<Matrix> = teacher_views
        .iter()
        .map(|t| teacher_probabilities(t, params))
        .collect();

    let mut loss = 0.0;
    let mut student_grads = Vec::with_capacity(DINO_STUDENT_VIEWS);
    let mut logits = vec![0.0; d];
    let mut q = vec![0.0; d];
    for (s, view) in student_views.iter().enumerate() {
        let mut grad = Matrix::zeros(b, d);
        for i in 0..b {
            for (l, &z) in logits.iter_mut().zip(view.row(i)) {
                *l = z / tau_s;
            }
            let lse = log_sum_exp(&logits);
            softmax_into(&logits, &mut q);
            let g = grad.row_mut(i);
            for (t, probs) in teacher_probs.iter().enumerate() {
                if t == s {
                    continue;
                }
                let pt = probs.row(i);
                loss -= pt
                    .iter()
                    .zip(&logits)
                    .map(|(p, l)| p * (l - lse))
                    .sum::<f64>();
                for ((gv, &qv), &pv) in g.iter_mut().zip(&q).zip(pt) {
                    *gv += (qv - pv) * inv_b / tau_s;
                }
            }
        }
        student_grads.push(grad);
    }
    Ok(DinoOutput {
        loss: loss * inv_b,
        student_grads,
    })
}

/// `c ← ρ·c + (1 − ρ)·mean(teacher outputs)`, mean over all rows of all views.
pub fn update_center(params: &mut DinoParams, teacher_views: &[Matrix]) -> Result<()> {
    let d = params.center.len();
    let mut sum = vec![0.0; d];
    let mut count = 0usize;
    for view in teacher_views {
        if view.cols() != d {
            return Err(Error::DimensionMismatch {
                context: "update_center",
                expected: d,
                actual: view.cols(),
            });
        }
        for (s, c) in sum.iter_mut().zip(view.column_sums()) {
            *s += c;
        }
        count += view.rows();
    }
    if count == 0 {
        return Ok(());
    }
    let rho = params.center_momentum;
    for (c, s) in params.center.iter_mut().zip(sum) {
        *c = rho * *c + (1.0 - rho) * (s / count as f64);
    }
    Ok(())
}

/// Contrastive loss inputs: anchors, positives, and which positive rows
/// are constants (queue-sourced) rather than model outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveInputs {
    pub anchors: Matrix,
    pub positives: Matrix,
    pub detached: Vec<bool>,
}

impl ContrastiveInputs {
    pub fn new(anchors: Matrix, positives: Matrix) -> Self {
        let detached = vec![false; positives.rows()];
        ContrastiveInputs {
            anchors,
            positives,
            detached,
        }
    }

    /// Loss with detached positive rows receiving no gradient.
    pub fn loss(&self, params: &SimclrParams) -> Result<SimclrOutput> {
        let mut out = simclr_loss(&self.anchors, &self.positives, params)?;
        for (i, &d) in self.detached.iter().enumerate() {
            if d {
                out.grad_positives
                    .row_mut(i)
                    .iter_mut()
                    .for_each(|v| *v = 0.0);
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistillationInputs {
    pub student_views: Vec<Matrix>,
    pub teacher_views: Vec<Matrix>,
}

impl DistillationInputs {
    pub fn loss(&self, params: &DinoParams) -> Result<DinoOutput> {
        dino_loss(&self.student_views, &self.teacher_views, params)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LossInputs {
    Contrastive(ContrastiveInputs),
    Distillation(DistillationInputs),
}

/// Replace positive embeddings by pseudo-positives, keyed by batch row.
///
/// Contrastive: the positive row is swapped and detached. Distillation:
/// the single queued teacher embedding replaces the row in both teacher
/// views (teacher outputs never carry gradient).
pub fn apply_pseudo_positive(
    inputs: LossInputs,
    replacements: &BTreeMap<usize, Vec<f64>>,
) -> Result<LossInputs> {
    match inputs {
        LossInputs::Contrastive(mut c) => {
            for (&row, emb) in replacements {
                check_replacement(row, emb, c.positives.rows(), c.positives.cols())?;
                c.positives.row_mut(row).copy_from_slice(emb);
                c.detached[row] = true;
            }
            Ok(LossInputs::Contrastive(c))
        }
        LossInputs::Distillation(mut d) => {
            for (&row, emb) in replacements {
                for view in &mut d.teacher_views {
                    check_replacement(row, emb, view.rows(), view.cols())?;
                    view.row_mut(row).copy_from_slice(emb);
                }
            }
            Ok(LossInputs::Distillation(d))
        }
    }
}

fn check_replacement(row: usize, emb: &[f64], rows: usize, cols: usize) -> Result<()> {
    if row >= rows {
        return Err(Error::DimensionMismatch {
            context: "pseudo-positive row",
            expected: rows,
            actual: row,
        });
    }
    if emb.len() != cols {
        return Err(Error::DimensionMismatch {
            context: "pseudo-positive embedding",
            expected: cols,
            actual: emb.len(),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
        Matrix::from_vec(
            rows,
            cols,
            (0..rows * cols)
                .map(|_| rng.random_range(-1.0..1.0))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn single_item_batch_has_zero_loss() {
        let z = Matrix::from_rows(&[vec![0.3, -1.0, 2.0]]).unwrap();
        let zp = Matrix::from_rows(&[vec![1.0, 1.0, 0.0]]).unwrap();
        let out = simclr_loss(&z, &zp, &SimclrParams::new(0.5).unwrap()).unwrap();
        assert!(out.loss.abs() < 1e-15);
    }

    #[test]
    fn orthonormal_pairs_closed_form() {
        let z = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let out = simclr_loss(&z, &z, &SimclrParams::new(1.0).unwrap()).unwrap();
        let expected = (1.0 + (-1.0f64).exp()).ln();
        assert!((out.loss - expected).abs() < 1e-12);
        assert!((out.loss - 0.3133).abs() < 1e-4);
    }

    #[test]
    fn zero_norm_row_is_rejected() {
        let z = Matrix::from_rows(&[vec![0.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert!(matches!(
            simclr_loss(&z, &z, &SimclrParams::default()),
            Err(Error::ZeroNorm { row: 0, .. })
        ));
    }

    #[test]
    fn uniform_teacher_and_student_gives_log_dim() {
        let params = DinoParams::new(0.1, 0.04, 5, 0.9).unwrap();
        assert!((cross_entropy(&[0.7; 5], &[0.2; 5]) - 5f64.ln()).abs() < 1e-12);
        let p = teacher_probabilities(&Matrix::from_vec(1, 5, vec![0.7; 5]).unwrap(), &params);
        assert!(p.as_slice().iter().all(|&v| (v - 0.2).abs() < 1e-15));
    }

    #[test]
    fn cross_entropy_matches_scalar_oracle() {
        let a = [1.0, 2.0, 0.5];
        let b = [0.3, -0.2, 1.1];
        let ea: Vec<f64> = a.iter().map(|v: &f64| v.exp()).collect();
        let eb: Vec<f64> = b.iter().map(|v: &f64| v.exp()).collect();
        let za: f64 = ea.iter().sum();
        let zb: f64 = eb.iter().sum();
        let expected: f64 = -(0..3).map(|k| ea[k] / za * (eb[k] / zb).ln()).sum::<f64>();
        assert!((cross_entropy(&a, &b) - expected).abs() < 1e-14);
    }

    #[test]
    fn dino_rejects_wrong_view_counts() {
        let params = DinoParams::new(0.1, 0.04, 3, 0.9).unwrap();
        let v = Matrix::zeros(2, 3);
        assert!(dino_loss(&vec![v.clone(); 5], &vec![v.clone(); 2], &params).is_err());
        assert!(dino_loss(&vec![v.clone(); 6], &vec![v; 1], &params).is_err());
    }

    #[test]
    fn dino_params_require_sharpening() {
        assert!(DinoParams::new(0.04, 0.1, 3, 0.9).is_err());
        assert!(DinoParams::new(0.1, 0.04, 3, 1.0).is_err());
    }

    #[test]
    fn center_update_closed_forms() {
        let batch = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let mut p = DinoParams::new(0.1, 0.04, 2, 0.0).unwrap();
        update_center(&mut p, std::slice::from_ref(&batch)).unwrap();
        assert_eq!(p.center, vec![2.0, 3.0]);
        p.center = vec![0.0, 0.0];
        p.center_momentum = 0.9;
        update_center(&mut p, std::slice::from_ref(&batch)).unwrap();
        assert!((p.center[0] - 0.2).abs() < 1e-15 && (p.center[1] - 0.3).abs() < 1e-15);
        // momentum 1 is only reachable by mutating the field directly
        p.center_momentum = 1.0;
        let before = p.center.clone();
        update_center(&mut p, &[batch]).unwrap();
        assert_eq!(p.center, before);
    }

    #[test]
    fn empty_replacement_is_bitwise_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let inputs = ContrastiveInputs::new(random(4, 3, &mut rng), random(4, 3, &mut rng));
        let base = inputs.loss(&SimclrParams::default()).unwrap();
        let LossInputs::Contrastive(replaced) =
            apply_pseudo_positive(LossInputs::Contrastive(inputs), &BTreeMap::new()).unwrap()
        else {
            unreachable!()
        };
        assert_eq!(replaced.loss(&SimclrParams::default()).unwrap(), base);
    }

    #[test]
    fn self_replacement_gives_unit_similarity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let z = random(3, 4, &mut rng);
        let inputs = ContrastiveInputs::new(z.clone(), random(3, 4, &mut rng));
        let mut map = BTreeMap::new();
        map.insert(1, z.row(1).to_vec());
        let LossInputs::Contrastive(r) =
            apply_pseudo_positive(LossInputs::Contrastive(inputs), &map).unwrap()
        else {
            unreachable!()
        };
        assert!((crate::linalg::cosine(r.anchors.row(1), r.positives.row(1)) - 1.0).abs() < 1e-15);
        let out = r.loss(&SimclrParams::default()).unwrap();
        assert!(out.grad_positives.row(1).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn one_replacement_matches_hand_recomputation() {
        let z = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 2.0]]).unwrap();
        let zp = Matrix::from_rows(&[vec![3.0, 0.0], vec![1.0, 1.0]]).unwrap();
        let mut map = BTreeMap::new();
        map.insert(0, vec![1.0, 1.0]);
        let LossInputs::Contrastive(r) =
            apply_pseudo_positive(LossInputs::Contrastive(ContrastiveInputs::new(z, zp)), &map)
                .unwrap()
        else {
            unreachable!()
        };
        let tau = 0.5;
        let out = r.loss(&SimclrParams::new(tau).unwrap()).unwrap();
        // both positives are now (1,1)/√2
        let c = std::f64::consts::FRAC_1_SQRT_2;
        let row = |s_pos: f64, s_other: f64| {
            -(s_pos / tau) + ((s_pos / tau).exp() + (s_other / tau).exp()).ln()
        };
        let expected = (row(c, c) + row(c, c)) / 2.0;
        assert!((out.loss - expected).abs() < 1e-12);
        assert!((out.loss - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn replacement_dimension_mismatch() {
        let inputs = ContrastiveInputs::new(Matrix::zeros(2, 3), Matrix::zeros(2, 3));
        let mut map = BTreeMap::new();
        map.insert(0, vec![1.0]);
        assert!(apply_pseudo_positive(LossInputs::Contrastive(inputs), &map).is_err());
    }

    #[test]
    fn dino_replacement_hits_both_teacher_views() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let inputs = DistillationInputs {
            student_views: (0..6).map(|_| random(2, 3, &mut rng)).collect(),
            teacher_views: (0..2).map(|_| random(2, 3, &mut rng)).collect(),
        };
        let mut map = BTreeMap::new();
        map.insert(1, vec![0.5, 0.5, 0.5]);
        let LossInputs::Distillation(r) =
            apply_pseudo_positive(LossInputs::Distillation(inputs.clone()), &map).unwrap()
        else {
            unreachable!()
        };
        for (orig, new) in inputs.teacher_views.iter().zip(&r.teacher_views) {
            assert_eq!(orig.row(0), new.row(0));
            assert_eq!(new.row(1), &[0.5, 0.5, 0.5]);
        }
    }

    proptest! {
        #[test]
        fn simclr_scale_and_permutation_invariance(seed in any::<u64>(), scale in 0.01f64..100.0, b in 1usize..7) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let z = random(b, 5, &mut rng);
            let zp = random(b, 5, &mut rng);
            let params = SimclrParams::new(0.2).unwrap();
            let base = simclr_loss(&z, &zp, &params).unwrap().loss;
            prop_assert!(base >= 0.0);
            let mut scaled = z.clone();
            let row = rng.random_range(0..b);
            scaled.row_mut(row).iter_mut().for_each(|v| *v *= scale);
            prop_assert!((simclr_loss(&scaled, &zp, &params).unwrap().loss - base).abs() < 1e-12);
            let perm: Vec<usize> = (0..b).rev().collect();
            let lp = simclr_loss(&z.select_rows(&perm), &zp.select_rows(&perm), &params).unwrap().loss;
            prop_assert!((lp - base).abs() < 1e-12);
        }

        #[test]
        fn dino_terms_respect_gibbs_and_softmax_sums(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut params = DinoParams::new(0.1, 0.04, 6, 0.9).unwrap();
            params.center = (0..6).map(|_| rng.random_range(-0.5..0.5)).collect();
            let teacher = random(3, 6, &mut rng);
            let student = random(3, 6, &mut rng);
            let probs = teacher_probabilities(&teacher, &params);
            for i in 0..3 {
                prop_assert!((probs.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
                let entropy: f64 = -probs.row(i).iter().filter(|&&p| p > 0.0).map(|p| p * p.ln()).sum::<f64>();
                let t: Vec<f64> = teacher.row(i).iter().zip(&params.center).map(|(z, c)| (z - c) / 0.04).collect();
                let s: Vec<f64> = student.row(i).iter().map(|z| z / 0.1).collect();
                prop_assert!(cross_entropy(&t, &s) >= entropy - 1e-12);
            }
        }
    }
}
