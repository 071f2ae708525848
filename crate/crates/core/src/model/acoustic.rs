use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::encoder::{uniform, Encoder, EncoderCache};
use crate::ctc::{LogitMatrix, Vocabulary};
use crate::features::FrontendConfig;
use crate::matrix::Matrix;
use crate::{Error, Result};

/// Character-level CTC acoustic model: [`Encoder`] followed by a linear
/// projection to `blank + vocabulary` logits per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct AcousticModel {
    pub(crate) vocab: Vocabulary,
    pub(crate) frontend: FrontendConfig,
    pub(crate) seed: u64,
    pub(crate) encoder: Encoder,
    pub(crate) w_out: Matrix,
    pub(crate) b_out: Matrix,
}

/// Logits plus everything needed to backpropagate from them.
#[derive(Debug, Clone)]
pub struct AsrPass {
    pub logits: LogitMatrix,
    pub(crate) cache: EncoderCache,
}

impl AcousticModel {
    pub fn new(vocab: Vocabulary, frontend: FrontendConfig, hidden: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = Encoder::new(frontend.n_mels, hidden, &mut rng);
        let width = vocab.output_width();
        Self {
            w_out: uniform(&mut rng, width, hidden, (1.0 / hidden as f64).sqrt()),
            b_out: Matrix::zeros(width, 1),
            vocab,
            frontend,
            seed,
            encoder,
        }
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
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

    pub fn hidden(&self) -> usize {
        self.encoder.hidden()
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn encoder_mut(&mut self) -> &mut Encoder {
        &mut self.encoder
    }

    pub fn forward(&self, features: &Matrix) -> Result<AsrPass> {
        let cache = self.encoder.forward(features)?;
        let mut logits = Matrix::zeros(features.rows(), self.w_out.rows());
        for t in 0..features.rows() {
            let row = logits.row_mut(t);
            row.copy_from_slice(self.b_out.as_slice());
            self.w_out.mul_vec_add(cache.h.row(t), row);
        }
        Ok(AsrPass {
            logits: LogitMatrix::new(logits)?,
            cache,
        })
    }

    fn hidden_grad(&self, pass: &AsrPass, grad_logits: &Matrix) -> Result<Matrix> {
        if grad_logits.shape() != pass.logits.values().shape() {
            return Err(Error::Contract(format!(
                "logit gradient {:?} does not match forward pass {:?}",
                grad_logits.shape(),
                pass.logits.values().shape()
            )));
        }
        let mut gh = Matrix::zeros(pass.cache.h.rows(), self.hidden());
        for t in 0..gh.rows() {
            self.w_out.tr_mul_vec_add(grad_logits.row(t), gh.row_mut(t));
        }
        Ok(gh)
    }

    /// Gradient with respect to the input log-mel features.
    pub fn backward_to_features(&self, pass: &AsrPass, grad_logits: &Matrix) -> Result<Matrix> {
        let gh = self.hidden_grad(pass, grad_logits)?;
        Ok(self
            .encoder
            .backward(&pass.cache, &gh, None, true)?
            .expect("input gradient requested"))
    }

    /// Accumulate parameter gradients into `grads` (a model of equal shape).
    pub fn backward_params(
        &self,
        pass: &AsrPass,
        grad_logits: &Matrix,
        grads: &mut AcousticModel,
    ) -> Result<()> {
        let gh = self.hidden_grad(pass, grad_logits)?;
        for t in 0..gh.rows() {
            grads.w_out.add_outer(grad_logits.row(t), pass.cache.h.row(t));
            crate::matrix::axpy(1.0, grad_logits.row(t), grads.b_out.as_mut_slice());
        }
        self.encoder
            .backward(&pass.cache, &gh, Some(&mut grads.encoder), false)?;
        Ok(())
    }

    pub(crate) fn zeros_like(&self) -> Self {
        Self {
            vocab: self.vocab.clone(),
            frontend: self.frontend,
            seed: self.seed,
            encoder: self.encoder.zeros_like(),
            w_out: Matrix::zeros(self.w_out.rows(), self.w_out.cols()),
            b_out: Matrix::zeros(self.b_out.rows(), 1),
        }
    }

    pub(crate) fn trainable(&self) -> Vec<&Matrix> {
        let mut v = self.encoder.trainable();
        v.extend([&self.w_out, &self.b_out]);
        v
    }

    pub(crate) fn trainable_mut(&mut self) -> Vec<&mut Matrix> {
        let mut v = self.encoder.trainable_mut();
        v.extend([&mut self.w_out, &mut self.b_out]);
        v
    }

    pub(crate) fn all_tensors(&self) -> Vec<&Matrix> {
        let mut v = self.encoder.all_tensors();
        v.extend([&self.w_out, &self.b_out]);
        v
    }

    pub(crate) fn all_tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut v = self.encoder.all_tensors_mut();
        v.extend([&mut self.w_out, &mut self.b_out]);
        v
    }

    pub fn all_finite(&self) -> bool {
        self.all_tensors().iter().all(|m| m.all_finite())
    }
}
