use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::synth::SynthConfig;
use crate::attack::AttackConfig;
use crate::features::FrontendConfig;
use crate::model::TrainConfig;
use crate::{Error, Result};

/// Flat run configuration. Every key is optional in the TOML file; the
/// defaults reproduce the documented synthetic experiment.
///
/// ```toml
/// corpus_dir = "corpus"
/// out_dir = "runs/seed0"
/// seed = 0
/// targets = "T1,T2,T6"
/// sid_seeds = [0, 1]
/// attack_max_iters = 3000
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub corpus_dir: PathBuf,
    pub out_dir: PathBuf,
    pub seed: u64,
    /// Generate the synthetic corpus when `corpus_dir` has no manifest.
    pub generate_corpus: bool,
    /// Train missing models instead of failing.
    pub train: bool,
    pub asr_model: Option<PathBuf>,
    /// One speaker model per seed; each becomes a `model` row group.
    pub sid_seeds: Vec<u64>,

    /// `all`, or comma-separated ids from T1..T16.
    pub targets: String,
    /// Optional CSV with `target_id,text` rows used instead of `targets`.
    pub targets_file: Option<PathBuf>,
    /// `speaker_id -> utt_id` replacements for the clean source choice.
    pub source_overrides: BTreeMap<String, String>,
    /// Score only successful attacks instead of every attempted source.
    pub successful_only: bool,

    pub n_speakers: usize,
    pub utterances_per_speaker: usize,
    pub char_duration_ms: f64,
    pub noise_rms: f64,
    pub words_min: usize,
    pub words_max: usize,

    pub asr_epochs: usize,
    pub sid_epochs: usize,
    pub hidden: usize,
    pub embed_dim: usize,
    pub train_lr: f64,

    pub attack_c: f64,
    pub attack_lr: f64,
    pub attack_max_iters: usize,
    pub attack_check_every: usize,
    pub attack_c_growth: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let synth = SynthConfig::default();
        let attack = AttackConfig::default();
        let train = TrainConfig::default();
        Self {
            corpus_dir: PathBuf::from("corpus"),
            out_dir: PathBuf::from("run"),
            seed: 0,
            generate_corpus: true,
            train: true,
            asr_model: None,
            sid_seeds: vec![0],
            targets: "all".into(),
            targets_file: None,
            source_overrides: BTreeMap::new(),
            successful_only: false,
            n_speakers: synth.n_speakers,
            utterances_per_speaker: synth.utterances_per_speaker,
            char_duration_ms: synth.char_duration_ms,
            noise_rms: synth.noise_rms,
            words_min: synth.words_per_utterance.0,
            words_max: synth.words_per_utterance.1,
            asr_epochs: 40,
            sid_epochs: 60,
            hidden: train.hidden,
            embed_dim: train.embed_dim,
            train_lr: train.lr,
            attack_c: attack.c,
            attack_lr: attack.lr,
            attack_max_iters: attack.max_iters,
            attack_check_every: attack.success_check_every,
            attack_c_growth: attack.c_growth,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn synth(&self) -> SynthConfig {
        SynthConfig {
            n_speakers: self.n_speakers,
            utterances_per_speaker: self.utterances_per_speaker,
            char_duration_ms: self.char_duration_ms,
            noise_rms: self.noise_rms,
            words_per_utterance: (self.words_min, self.words_max),
            seed: self.seed,
            ..SynthConfig::default()
        }
    }

    pub fn frontend(&self) -> FrontendConfig {
        FrontendConfig::default()
    }

    pub fn asr_training(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.asr_epochs,
            lr: self.train_lr,
            hidden: self.hidden,
            embed_dim: self.embed_dim,
            seed: self.seed,
            ..TrainConfig::default()
        }
    }

    pub fn sid_training(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.sid_epochs,
            seed,
            ..self.asr_training()
        }
    }

    pub fn attack(&self) -> AttackConfig {
        AttackConfig {
            c: self.attack_c,
            lr: self.attack_lr,
            max_iters: self.attack_max_iters,
            success_check_every: self.attack_check_every,
            c_growth: self.attack_c_growth,
            seed: self.seed,
            ..AttackConfig::default()
        }
    }

    pub fn asr_model_path(&self) -> PathBuf {
        self.asr_model
            .clone()
            .unwrap_or_else(|| self.out_dir.join("models").join("asr.vxdm"))
    }

    pub fn sid_model_path(&self, seed: u64) -> PathBuf {
        self.out_dir.join("models").join(format!("sid_s{seed}.vxdm"))
    }

    pub fn validate(&self) -> Result<()> {
        self.synth().validate()?;
        self.attack().validate()?;
        if self.sid_seeds.is_empty() {
            return Err(Error::Config("sid_seeds must name at least one model".into()));
        }
        let mut seeds = self.sid_seeds.clone();
        seeds.sort_unstable();
        seeds.dedup();
        if seeds.len() != self.sid_seeds.len() {
            return Err(Error::Config("sid_seeds must be distinct".into()));
        }
        if self.hidden == 0 || self.embed_dim < 2 {
            return Err(Error::Config("hidden must be >= 1 and embed_dim >= 2".into()));
        }
        Ok(())
    }
}

/// Model label used in summary rows.
pub fn sid_label(seed: u64) -> String {
    format!("sid-s{seed}")
}
