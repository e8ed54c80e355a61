use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::nncore::{ForwardCache, Gradients, LayerSpec, Mlp};

/// Encoder followed by an optional projector.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub encoder: Mlp,
    pub projector: Option<Mlp>,
}

#[derive(Debug, Clone)]
pub struct NetworkCache {
    encoder: ForwardCache,
    projector: Option<ForwardCache>,
}

/// Output of [`Network::forward`].
#[derive(Debug, Clone)]
pub struct NetworkOutput {
    pub representations: Matrix,
    pub embeddings: Matrix,
    pub cache: NetworkCache,
}

impl Network {
    pub fn random(
        input_dim: usize,
        encoder: &[LayerSpec],
        projector: Option<&[LayerSpec]>,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let encoder = Mlp::random(input_dim, encoder, rng)?;
        let projector = match projector {
            Some(specs) => Some(Mlp::random(encoder.output_dim(), specs, rng)?),
            None => None,
        };
        Ok(Network { encoder, projector })
    }

    pub fn representation_dim(&self) -> usize {
        self.encoder.output_dim()
    }

    pub fn embedding_dim(&self) -> usize {
        self.projector
            .as_ref()
            .map_or(self.encoder.output_dim(), Mlp::output_dim)
    }

    pub fn forward(&self, input: &Matrix) -> Result<NetworkOutput> {
        let (representations, enc_cache) = self.encoder.forward(input)?;
        let (embeddings, proj_cache) = match &self.projector {
            Some(p) => {
                let (z, c) = p.forward(&representations)?;
                (z, Some(c))
            }
            None => (representations.clone(), None),
        };
        Ok(NetworkOutput {
            representations,
            embeddings,
            cache: NetworkCache {
                encoder: enc_cache,
                projector: proj_cache,
            },
        })
    }

    /// Representations only.
    pub fn encode(&self, input: &Matrix) -> Result<Matrix> {
        Ok(self.encoder.forward(input)?.0)
    }

    /// Gradients for encoder then projector blocks, plus the input gradient.
    pub fn backward(
        &self,
        cache: &NetworkCache,
        embedding_grad: &Matrix,
    ) -> Result<(Gradients, Matrix)> {
        let (proj_grads, repr_grad) = match (&self.projector, &cache.projector) {
            (Some(p), Some(c)) => {
                let (g, dy) = p.backward(c, embedding_grad)?;
                (Some(g), dy)
            }
            (None, None) => (None, embedding_grad.clone()),
            _ => {
                return Err(Error::StaleCache { model: 0, cache: 0 });
            }
        };
        let (enc_grads, dx) = self.encoder.backward(&cache.encoder, &repr_grad)?;
        let grads = match proj_grads {
            Some(g) => enc_grads.concat(g),
            None => enc_grads,
        };
        Ok((grads, dx))
    }

    pub fn param_blocks(&self) -> Vec<&[f64]> {
        let mut blocks = self.encoder.param_blocks();
        if let Some(p) = &self.projector {
            blocks.extend(p.param_blocks());
        }
        blocks
    }

    pub fn param_blocks_mut(&mut self) -> Vec<&mut [f64]> {
        let mut blocks = self.encoder.param_blocks_mut();
        if let Some(p) = &mut self.projector {
            blocks.extend(p.param_blocks_mut());
        }
        blocks
    }

    pub fn zero_gradients(&self) -> Gradients {
        Gradients::zeros_like(&self.param_blocks())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BranchMode {
    /// One set of weights shared by both branches (SimCLR).
    Symmetric,
    /// Gradient-free teacher tracking the student by EMA (DINO).
    StudentTeacher,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelPair {
    pub student: Network,
    teacher: Option<Network>,
}

impl ModelPair {
    pub fn symmetric(network: Network) -> Self {
        ModelPair {
            student: network,
            teacher: None,
        }
    }

    /// The teacher starts as an exact copy of the student.
    pub fn student_teacher(student: Network) -> Self {
        let teacher = student.clone();
        ModelPair {
            student,
            teacher: Some(teacher),
        }
    }

    pub fn from_parts(student: Network, teacher: Option<Network>) -> Self {
        ModelPair { student, teacher }
    }

    pub fn mode(&self) -> BranchMode {
        if self.teacher.is_some() {
            BranchMode::StudentTeacher
        } else {
            BranchMode::Symmetric
        }
    }

    /// In symmetric mode this is the student itself.
    pub fn teacher(&self) -> &Network {
        self.teacher.as_ref().unwrap_or(&self.student)
    }

    /// EMA step for the teacher; a no-op in symmetric mode.
    pub fn ema_update(&mut self, momentum: f64) -> Result<()> {
        match &mut self.teacher {
            Some(t) => ema_update(t, &self.student, momentum),
            None => Ok(()),
        }
    }
}

/// `teacher ← m·teacher + (1 − m)·student`, parameter-wise.
pub fn ema_update(teacher: &mut Network, student: &Network, momentum: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&momentum) {
        return Err(Error::OutOfRange {
            what: "EMA momentum",
            value: momentum,
            lo: 0.0,
            hi: 1.0,
        });
    }
    let src = student.param_blocks();
    if src.len() != teacher.param_blocks().len() {
        return Err(Error::DimensionMismatch {
            context: "ema_update blocks",
            expected: src.len(),
            actual: teacher.param_blocks().len(),
        });
    }
    for (t, s) in teacher.param_blocks().iter().zip(&src) {
        if t.len() != s.len() {
            return Err(Error::DimensionMismatch {
                context: "ema_update block length",
                expected: s.len(),
                actual: t.len(),
            });
        }
    }
    for (t, s) in teacher.param_blocks_mut().into_iter().zip(src) {
        for (tv, &sv) in t.iter_mut().zip(s) {
            *tv = momentum * *tv + (1.0 - momentum) * sv;
        }
    }
    Ok(())
}
