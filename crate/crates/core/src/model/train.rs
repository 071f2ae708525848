use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::acoustic::AcousticModel;
use super::speaker::{argmax, cross_entropy, SpeakerModel};
use crate::ctc::{ctc_loss, Transcript, Vocabulary};
use crate::features::FrontendConfig;
use crate::matrix::Matrix;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub grad_clip: f64,
    pub hidden: usize,
    pub embed_dim: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            grad_clip: 5.0,
            hidden: 64,
            embed_dim: 32,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: Option<f64>,
}

pub fn write_curve_csv(curve: &[EpochRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    let with_acc = curve.iter().any(|r| r.accuracy.is_some());
    out.push_str(if with_acc { "epoch,loss,accuracy\n" } else { "epoch,loss\n" });
    for r in curve {
        match r.accuracy {
            Some(a) if with_acc => out.push_str(&format!("{},{},{}\n", r.epoch, r.loss, a)),
            _ if with_acc => out.push_str(&format!("{},{},\n", r.epoch, r.loss)),
            _ => out.push_str(&format!("{},{}\n", r.epoch, r.loss)),
        }
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(out.as_bytes()))
        .map_err(|e| Error::io(path, e))
}

/// Adam with bias correction over a list of parameter tensors.
struct Adam {
    cfg: TrainConfig,
    step: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    fn new(cfg: TrainConfig, shapes: &[&Matrix]) -> Self {
        let zeros = || shapes.iter().map(|t| vec![0.0; t.as_slice().len()]).collect();
        Self {
            cfg,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// Clip `grads` to global norm `grad_clip`, then take one step.
    fn update(&mut self, params: Vec<&mut Matrix>, grads: Vec<&Matrix>) {
        let norm = grads
            .iter()
            .flat_map(|g| g.as_slice())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt();
        let clip = if norm > self.cfg.grad_clip {
            self.cfg.grad_clip / norm
        } else {
            1.0
        };
        self.step += 1;
        let c = &self.cfg;
        let bc1 = 1.0 - c.beta1.powi(self.step);
        let bc2 = 1.0 - c.beta2.powi(self.step);
        for (i, (p, g)) in params.into_iter().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, (w, &gj)) in p.as_mut_slice().iter_mut().zip(g.as_slice()).enumerate() {
                let gj = gj * clip;
                m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * gj;
                v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * gj * gj;
                *w -= c.lr * (m[j] / bc1) / ((v[j] / bc2).sqrt() + c.eps);
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct AsrItem {
    pub id: String,
    pub features: Matrix,
    pub transcript: Transcript,
}

#[derive(Debug, Clone)]
pub struct SidItem {
    pub id: String,
    pub features: Matrix,
    pub speaker: String,
}

fn epoch_order(rng: &mut ChaCha8Rng, n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order
}

/// Train an acoustic model by per-utterance Adam steps on the CTC loss.
pub fn train_asr(
    items: &[AsrItem],
    vocab: &Vocabulary,
    frontend: &FrontendConfig,
    cfg: &TrainConfig,
) -> Result<(AcousticModel, Vec<EpochRecord>)> {
    if items.is_empty() {
        return Err(Error::Data("training corpus is empty".into()));
    }
    for it in items {
        if it.features.rows() < it.transcript.min_frames() {
            return Err(Error::Data(format!(
                "item {}: {} frames cannot align {:?}",
                it.id,
                it.features.rows(),
                it.transcript.text()
            )));
        }
        if it.features.cols() != frontend.n_mels {
            return Err(Error::Data(format!(
                "item {}: {} feature columns, expected {}",
                it.id,
                it.features.cols(),
                frontend.n_mels
            )));
        }
    }
    let mut model = AcousticModel::new(vocab.clone(), *frontend, cfg.hidden, cfg.seed);
    model
        .encoder_mut()
        .fit_normalization(items.iter().map(|i| &i.features));
    let mut adam = Adam::new(*cfg, &model.trainable());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x5eed));
    let mut curve = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut total = 0.0;
        for idx in epoch_order(&mut rng, items.len()) {
            let it = &items[idx];
            let pass = model.forward(&it.features)?;
            let (loss, grad) = ctc_loss(&pass.logits, &it.transcript).map_err(|e| match e {
                Error::Numeric { what, .. } => Error::Numeric {
                    iteration: epoch,
                    what: format!("item {}: {what}", it.id),
                },
                other => other,
            })?;
            total += loss;
            let mut grads = model.zeros_like();
            model.backward_params(&pass, &grad, &mut grads)?;
            adam.update(model.trainable_mut(), grads.trainable());
        }
        let mean = total / items.len() as f64;
        log::debug!("asr epoch {epoch}: mean CTC loss {mean:.4}");
        curve.push(EpochRecord {
            epoch,
            loss: mean,
            accuracy: None,
        });
    }
    Ok((model, curve))
}

/// Train a speaker model by cross-entropy over the training speakers.
pub fn train_sid(
    items: &[SidItem],
    frontend: &FrontendConfig,
    cfg: &TrainConfig,
) -> Result<(SpeakerModel, Vec<EpochRecord>)> {
    let mut per_speaker: BTreeMap<&str, usize> = BTreeMap::new();
    for it in items {
        *per_speaker.entry(it.speaker.as_str()).or_default() += 1;
    }
    if per_speaker.len() < 2 {
        return Err(Error::Data(format!(
            "need at least 2 speakers, corpus has {}",
            per_speaker.len()
        )));
    }
    if let Some((s, n)) = per_speaker.iter().find(|(_, &n)| n < 2) {
        return Err(Error::Data(format!(
            "speaker {s} has {n} utterance(s), need at least 2"
        )));
    }
    if let Some(it) = items.iter().find(|i| i.features.rows() == 0) {
        return Err(Error::Data(format!("item {} has no frames", it.id)));
    }
    let speakers: Vec<String> = per_speaker.keys().map(|s| s.to_string()).collect();
    let labels: Vec<usize> = items
        .iter()
        .map(|i| speakers.binary_search(&i.speaker).expect("collected above"))
        .collect();
    let mut model = SpeakerModel::new(*frontend, cfg.hidden, cfg.embed_dim, speakers, cfg.seed)?;
    model
        .encoder_mut()
        .fit_normalization(items.iter().map(|i| &i.features));
    let mut adam = Adam::new(*cfg, &model.trainable());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x5eed));
    let mut curve = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let (mut total, mut correct) = (0.0, 0usize);
        for idx in epoch_order(&mut rng, items.len()) {
            let pass = model.forward(&items[idx].features)?;
            let (loss, grad) = cross_entropy(&pass.head_logits, labels[idx]);
            total += loss;
            correct += usize::from(argmax(&pass.head_logits) == labels[idx]);
            let mut grads = model.zeros_like();
            model.backward_params(&pass, &grad, &mut grads)?;
            adam.update(model.trainable_mut(), grads.trainable());
        }
        let n = items.len() as f64;
        log::debug!("sid epoch {epoch}: loss {:.4}", total / n);
        curve.push(EpochRecord {
            epoch,
            loss: total / n,
            accuracy: Some(correct as f64 / n),
        });
    }
    Ok((model, curve))
}
