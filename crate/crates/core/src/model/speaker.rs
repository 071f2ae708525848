use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::encoder::{uniform, Encoder, EncoderCache};
use crate::features::FrontendConfig;
use crate::matrix::{l2_norm, Matrix};
use crate::{Error, Result};

/// Fixed-dimensional speaker vector with its L2 norm.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    vector: Vec<f64>,
    norm: f64,
}

impl Embedding {
    pub fn new(vector: Vec<f64>) -> Result<Self> {
        let norm = l2_norm(&vector);
        if !norm.is_finite() {
            return Err(Error::Numeric {
                iteration: 0,
                what: "non-finite embedding".into(),
            });
        }
        if norm == 0.0 {
            return Err(Error::DegenerateInput("embedding has zero norm".into()));
        }
        Ok(Self { vector, norm })
    }

    pub fn vector(&self) -> &[f64] {
        &self.vector
    }

    pub fn norm(&self) -> f64 {
        self.norm
    }

    pub fn dim(&self) -> usize {
        self.vector.len()
    }
}

/// d-vector style speaker model: [`Encoder`], mean pooling over time, a
/// linear projection to the embedding, and a classification head used only
/// during training.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerModel {
    pub(crate) frontend: FrontendConfig,
    pub(crate) seed: u64,
    pub(crate) speakers: Vec<String>,
    pub(crate) encoder: Encoder,
    pub(crate) w_emb: Matrix,
    pub(crate) b_emb: Matrix,
    pub(crate) w_head: Matrix,
    pub(crate) b_head: Matrix,
}

#[derive(Debug, Clone)]
pub struct SidPass {
    pub(crate) cache: EncoderCache,
    pub(crate) pooled: Vec<f64>,
    pub embedding: Vec<f64>,
    pub head_logits: Vec<f64>,
}

impl SpeakerModel {
    pub fn new(
        frontend: FrontendConfig,
        hidden: usize,
        embed_dim: usize,
        speakers: Vec<String>,
        seed: u64,
    ) -> Result<Self> {
        if embed_dim < 2 {
            return Err(Error::Config("embedding dimension must be >= 2".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = Encoder::new(frontend.n_mels, hidden, &mut rng);
        let n = speakers.len();
        Ok(Self {
            w_emb: uniform(&mut rng, embed_dim, hidden, (1.0 / hidden as f64).sqrt()),
            b_emb: Matrix::zeros(embed_dim, 1),
            w_head: uniform(&mut rng, n, embed_dim, (1.0 / embed_dim as f64).sqrt()),
            b_head: Matrix::zeros(n, 1),
            frontend,
            seed,
            speakers,
            encoder,
        })
    }

    pub fn frontend(&self) -> &FrontendConfig {
        &self.frontend
    }

    /// Replace the recorded front end; `n_mels` must stay the same.
    pub fn set_frontend(&mut self, frontend: FrontendConfig) -> Result<()> {
        if frontend.n_mels != self.frontend.n_mels {
            return Err(Error::Contract(format!(
                "model expects {} mel bands, front end has {}",
                self.frontend.n_mels, frontend.n_mels
            )));
        }
        frontend.validate()?;
        self.frontend = frontend;
        Ok(())
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn speakers(&self) -> &[String] {
        &self.speakers
    }

    pub fn embed_dim(&self) -> usize {
        self.w_emb.rows()
    }

    pub fn hidden(&self) -> usize {
        self.encoder.hidden()
    }

    pub fn encoder_mut(&mut self) -> &mut Encoder {
        &mut self.encoder
    }

    pub fn forward(&self, features: &Matrix) -> Result<SidPass> {
        if features.rows() == 0 {
            return Err(Error::DegenerateInput("feature matrix has no frames".into()));
        }
        let cache = self.encoder.forward(features)?;
        let t_len = features.rows() as f64;
        let mut pooled = vec![0.0; self.hidden()];
        for row in cache.h.iter_rows() {
            crate::matrix::axpy(1.0 / t_len, row, &mut pooled);
        }
        let mut embedding = self.b_emb.as_slice().to_vec();
        self.w_emb.mul_vec_add(&pooled, &mut embedding);
        let mut head_logits = self.b_head.as_slice().to_vec();
        self.w_head.mul_vec_add(&embedding, &mut head_logits);
        Ok(SidPass {
            cache,
            pooled,
            embedding,
            head_logits,
        })
    }

    pub fn embed(&self, features: &Matrix) -> Result<Embedding> {
        Embedding::new(self.forward(features)?.embedding)
    }

    /// Index of the highest-scoring training speaker.
    pub fn classify(&self, features: &Matrix) -> Result<usize> {
        let pass = self.forward(features)?;
        Ok(argmax(&pass.head_logits))
    }

    /// Accumulate parameter gradients of a loss with gradient `grad_head` on
    /// the classification logits.
    pub fn backward_params(
        &self,
        pass: &SidPass,
        grad_head: &[f64],
        grads: &mut SpeakerModel,
    ) -> Result<()> {
        if grad_head.len() != self.b_head.rows() {
            return Err(Error::Contract("head gradient width".into()));
        }
        grads.w_head.add_outer(grad_head, &pass.embedding);
        crate::matrix::axpy(1.0, grad_head, grads.b_head.as_mut_slice());
        let mut g_emb = vec![0.0; self.embed_dim()];
        self.w_head.tr_mul_vec_add(grad_head, &mut g_emb);
        grads.w_emb.add_outer(&g_emb, &pass.pooled);
        crate::matrix::axpy(1.0, &g_emb, grads.b_emb.as_mut_slice());
        let mut g_pool = vec![0.0; self.hidden()];
        self.w_emb.tr_mul_vec_add(&g_emb, &mut g_pool);
        let t_len = pass.cache.h.rows();
        let scale = 1.0 / t_len as f64;
        let mut gh = Matrix::zeros(t_len, self.hidden());
        for t in 0..t_len {
            for (g, p) in gh.row_mut(t).iter_mut().zip(&g_pool) {
                *g = p * scale;
            }
        }
        self.encoder
            .backward(&pass.cache, &gh, Some(&mut grads.encoder), false)?;
        Ok(())
    }

    pub(crate) fn zeros_like(&self) -> Self {
        let z = |m: &Matrix| Matrix::zeros(m.rows(), m.cols());
        Self {
            frontend: self.frontend,
            seed: self.seed,
            speakers: self.speakers.clone(),
            encoder: self.encoder.zeros_like(),
            w_emb: z(&self.w_emb),
            b_emb: z(&self.b_emb),
            w_head: z(&self.w_head),
            b_head: z(&self.b_head),
        }
    }

    pub(crate) fn trainable(&self) -> Vec<&Matrix> {
        let mut v = self.encoder.trainable();
        v.extend([&self.w_emb, &self.b_emb, &self.w_head, &self.b_head]);
        v
    }

    pub(crate) fn trainable_mut(&mut self) -> Vec<&mut Matrix> {
        let mut v = self.encoder.trainable_mut();
        v.extend([
            &mut self.w_emb,
            &mut self.b_emb,
            &mut self.w_head,
            &mut self.b_head,
        ]);
        v
    }

    pub(crate) fn all_tensors(&self) -> Vec<&Matrix> {
        let mut v = self.encoder.all_tensors();
        v.extend([&self.w_emb, &self.b_emb, &self.w_head, &self.b_head]);
        v
    }

    pub(crate) fn all_tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut v = self.encoder.all_tensors_mut();
        v.extend([
            &mut self.w_emb,
            &mut self.b_emb,
            &mut self.w_head,
            &mut self.b_head,
        ]);
        v
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |b, (i, &x)| if x > b.1 { (i, x) } else { b })
        .0
}

/// Softmax cross-entropy and its gradient with respect to the logits.
pub(crate) fn cross_entropy(logits: &[f64], label: usize) -> (f64, Vec<f64>) {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = logits.iter().map(|v| (v - m).exp()).sum();
    let lse = m + z.ln();
    let mut grad: Vec<f64> = logits.iter().map(|v| (v - lse).exp()).collect();
    grad[label] -= 1.0;
    (lse - logits[label], grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn model() -> SpeakerModel {
        let fe = FrontendConfig {
            n_mels: 4,
            ..FrontendConfig::default()
        };
        SpeakerModel::new(fe, 5, 3, vec!["a".into(), "b".into(), "c".into()], 8).unwrap()
    }

    #[test]
    fn constant_features_pool_to_the_frame_vector() {
        let m = model();
        let one = Matrix::from_rows(&[vec![0.3, -0.2, 1.0, 0.5]]);
        // zero recurrence so every frame's hidden state is identical
        let mut m0 = m.clone();
        m0.encoder.w_h.fill(0.0);
        let many = Matrix::from_rows(&vec![vec![0.3, -0.2, 1.0, 0.5]; 6]);
        let a = m0.embed(&one).unwrap();
        let b = m0.embed(&many).unwrap();
        for (x, y) in a.vector().iter().zip(b.vector()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn repeated_calls_are_identical() {
        let m = model();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = Matrix::from_vec(5, 4, (0..20).map(|_| rng.random_range(-1.0..1.0)).collect());
        assert_eq!(m.embed(&f).unwrap(), m.embed(&f).unwrap());
        assert_eq!(model().embed(&f).unwrap(), m.embed(&f).unwrap());
    }

    #[test]
    fn empty_features_are_degenerate() {
        assert!(matches!(
            model().embed(&Matrix::zeros(0, 4)),
            Err(Error::DegenerateInput(_))
        ));
    }

    #[test]
    fn zero_norm_embedding_rejected() {
        assert!(matches!(Embedding::new(vec![0.0, 0.0]), Err(Error::DegenerateInput(_))));
        assert_eq!(Embedding::new(vec![3.0, 4.0]).unwrap().norm(), 5.0);
    }

    #[test]
    fn parameter_gradient_matches_central_differences() {
        let m = model();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let f = Matrix::from_vec(4, 4, (0..16).map(|_| rng.random_range(-1.0..1.0)).collect());
        let loss = |mm: &SpeakerModel| cross_entropy(&mm.forward(&f).unwrap().head_logits, 1).0;
        let pass = m.forward(&f).unwrap();
        let (_, g) = cross_entropy(&pass.head_logits, 1);
        let mut grads = m.zeros_like();
        m.backward_params(&pass, &g, &mut grads).unwrap();
        let h = 1e-5;
        for (ti, t) in grads.trainable().iter().enumerate() {
            for i in 0..t.as_slice().len() {
                let mut p = m.clone();
                p.trainable_mut()[ti].as_mut_slice()[i] += h;
                let mut q = m.clone();
                q.trainable_mut()[ti].as_mut_slice()[i] -= h;
                let fd = (loss(&p) - loss(&q)) / (2.0 * h);
                let a = t.as_slice()[i];
                assert!((fd - a).abs() / fd.abs().max(a.abs()).max(1e-3) < 1e-4, "tensor {ti} entry {i}");
            }
        }
    }
}
