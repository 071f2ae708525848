//! Deterministic tone-template "speech".
//!
//! Each character is a short tone at a fixed frequency from
//! [`char_tone_hz`] with a few harmonics, under a raised-cosine envelope so
//! that consecutive characters are separated by an energy dip. Speaker
//! identity lives in a continuous harmonic voice bed whose fundamental is
//! scaled by the speaker's pitch factor, and in a spectral tilt applied to
//! both the bed and the character harmonics.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::manifest::{Manifest, ManifestRow};
use crate::audio::{write_wav, Waveform, CANONICAL_RATE_HZ};
use crate::phonetics::targets::TARGETS;
use crate::{Error, Result};

/// Characters that have a tone, in table order.
pub const TONE_ALPHABET: &str = " abcdefghijklmnopqrstuvwxyz";
pub const TONE_LOW_HZ: f64 = 300.0;
pub const TONE_HIGH_HZ: f64 = 3000.0;

const BED_F0_HZ: f64 = 150.0;
const BED_CEILING_HZ: f64 = 4000.0;
const BED_RMS: f64 = 0.05;
const TONE_RMS: f64 = 0.15;
const TONE_HARMONICS: usize = 3;
const PAD_MS: f64 = 100.0;

/// Log-spaced tone frequency of `c`, `TONE_LOW_HZ` for the space up to
/// `TONE_HIGH_HZ` for `z`.
pub fn char_tone_hz(c: char) -> Option<f64> {
    let i = TONE_ALPHABET.chars().position(|a| a == c)?;
    let steps = (TONE_ALPHABET.len() - 1) as f64;
    Some(TONE_LOW_HZ * (TONE_HIGH_HZ / TONE_LOW_HZ).powf(i as f64 / steps))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_speakers: usize,
    pub utterances_per_speaker: usize,
    pub char_duration_ms: f64,
    pub noise_rms: f64,
    pub f0_factor_range: (f64, f64),
    pub tilt_db_per_octave_range: (f64, f64),
    pub words_per_utterance: (usize, usize),
    pub sample_rate_hz: u32,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_speakers: 20,
            utterances_per_speaker: 5,
            char_duration_ms: 80.0,
            noise_rms: 0.01,
            f0_factor_range: (0.8, 1.25),
            tilt_db_per_octave_range: (-6.0, 6.0),
            words_per_utterance: (3, 6),
            sample_rate_hz: CANONICAL_RATE_HZ,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.n_speakers == 0 || self.utterances_per_speaker == 0 {
            return bad("corpus needs at least one speaker and one utterance");
        }
        if !(self.char_duration_ms > 0.0) || !(self.noise_rms >= 0.0) {
            return bad("char_duration_ms must be > 0 and noise_rms >= 0");
        }
        let (lo, hi) = self.f0_factor_range;
        if !(lo > 0.0 && lo <= hi) {
            return bad("f0_factor_range must be positive and ordered");
        }
        let (lo, hi) = self.tilt_db_per_octave_range;
        if !(lo <= hi) {
            return bad("tilt_db_per_octave_range must be ordered");
        }
        let (lo, hi) = self.words_per_utterance;
        if lo == 0 || lo > hi {
            return bad("words_per_utterance must be positive and ordered");
        }
        if f64::from(self.sample_rate_hz) < 2.0 * TONE_HIGH_HZ * 1.2 {
            return bad("sample rate too low for the tone table");
        }
        Ok(())
    }
}

/// Per-speaker voice parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Voice {
    pub speaker_id: String,
    pub f0_factor: f64,
    pub tilt_db_per_octave: f64,
    phases: Vec<f64>,
}

impl Voice {
    fn gain(&self, harmonic: usize) -> f64 {
        10f64.powf(self.tilt_db_per_octave * (harmonic as f64).log2() / 20.0)
    }

    pub fn bed_f0_hz(&self) -> f64 {
        BED_F0_HZ * self.f0_factor
    }
}

pub fn speaker_id(i: usize) -> String {
    format!("spk{i:03}")
}

/// Voices stratified over both ranges: speaker `i` takes pitch stratum
/// `perm[i]` and tilt stratum `i`, each jittered inside its stratum.
pub fn voices(cfg: &SynthConfig) -> Vec<Voice> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x766f_6963_6573);
    let n = cfg.n_speakers;
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng);
    let (f_lo, f_hi) = cfg.f0_factor_range;
    let (t_lo, t_hi) = cfg.tilt_db_per_octave_range;
    (0..n)
        .map(|i| {
            let u = (perm[i] as f64 + rng.random_range(0.2..0.8)) / n as f64;
            let v = (i as f64 + rng.random_range(0.2..0.8)) / n as f64;
            let harmonics = (BED_CEILING_HZ / (BED_F0_HZ * f_lo)) as usize + 1;
            Voice {
                speaker_id: speaker_id(i),
                f0_factor: f_lo * (f_hi / f_lo).powf(u),
                tilt_db_per_octave: t_lo + (t_hi - t_lo) * v,
                phases: (0..harmonics).map(|_| rng.random_range(0.0..2.0 * PI)).collect(),
            }
        })
        .collect()
}

/// Render `text` in `voice`. Characters outside [`TONE_ALPHABET`] are an
/// error. `rng` supplies the additive noise.
pub fn render(
    text: &str,
    voice: &Voice,
    cfg: &SynthConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Waveform> {
    let rate = f64::from(cfg.sample_rate_hz);
    let char_len = (cfg.char_duration_ms * rate / 1000.0).round() as usize;
    let pad = (PAD_MS * rate / 1000.0).round() as usize;
    let tones: Vec<f64> = text
        .chars()
        .map(|c| {
            char_tone_hz(c)
                .ok_or_else(|| Error::Data(format!("character {c:?} has no tone template")))
        })
        .collect::<Result<_>>()?;
    if tones.is_empty() {
        return Err(Error::Data("cannot render an empty transcript".into()));
    }
    let n = 2 * pad + tones.len() * char_len;
    let nyquist = rate / 2.0;

    let f0 = voice.bed_f0_hz();
    let bed: Vec<(f64, f64, f64)> = (1..)
        .map(|k| (k, k as f64 * f0))
        .take_while(|&(_, f)| f < BED_CEILING_HZ)
        .map(|(k, f)| (f, voice.gain(k), voice.phases[(k - 1) % voice.phases.len()]))
        .collect();
    let bed_scale = BED_RMS / (bed.iter().map(|b| b.1 * b.1).sum::<f64>() / 2.0).sqrt();

    let mut s = vec![0.0; n];
    for (i, v) in s.iter_mut().enumerate() {
        let t = i as f64 / rate;
        *v = bed_scale
            * bed
                .iter()
                .map(|&(f, g, p)| g * (2.0 * PI * f * t + p).sin())
                .sum::<f64>();
    }
    for (ci, &fc) in tones.iter().enumerate() {
        let partials: Vec<(f64, f64)> = (1..=TONE_HARMONICS)
            .map(|k| (k as f64 * fc, voice.gain(k)))
            .filter(|&(f, _)| f < 0.9 * nyquist)
            .collect();
        let scale = TONE_RMS / (partials.iter().map(|p| p.1 * p.1).sum::<f64>() / 2.0).sqrt();
        let start = pad + ci * char_len;
        for j in 0..char_len {
            let env = (PI * (j as f64 + 0.5) / char_len as f64).sin().powi(2);
            let t = j as f64 / rate;
            let tone: f64 = partials
                .iter()
                .map(|&(f, g)| g * (2.0 * PI * f * t).sin())
                .sum();
            s[start + j] += env * scale * tone;
        }
    }
    if cfg.noise_rms > 0.0 {
        let noise = Normal::new(0.0, cfg.noise_rms).expect("validated noise level");
        for v in &mut s {
            *v += noise.sample(rng);
        }
    }
    for v in &mut s {
        *v = v.clamp(-1.0, 1.0);
    }
    Waveform::new(s, cfg.sample_rate_hz)
}

/// Distinct words of the sixteen target phrases, sorted.
pub fn word_pool() -> Vec<&'static str> {
    let mut words: Vec<&str> = TARGETS
        .iter()
        .flat_map(|t| t.text.split_whitespace())
        .collect();
    words.sort_unstable();
    words.dedup();
    words
}

/// Transcript for every (speaker, utterance) slot, drawn from
/// [`word_pool`].
pub fn transcripts(cfg: &SynthConfig) -> Vec<Vec<String>> {
    let pool = word_pool();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7465_7874);
    let (lo, hi) = cfg.words_per_utterance;
    (0..cfg.n_speakers)
        .map(|_| {
            (0..cfg.utterances_per_speaker)
                .map(|_| {
                    let k = rng.random_range(lo..=hi);
                    (0..k)
                        .map(|_| *pool.choose(&mut rng).expect("non-empty pool"))
                        .collect::<Vec<_>>()
                        .join(" ")
                })
                .collect()
        })
        .collect()
}

pub fn utterance_id(speaker: usize, utterance: usize) -> String {
    format!("{}_u{utterance:02}", speaker_id(speaker))
}

/// Render the whole corpus into `out_dir/wav/` and write
/// `out_dir/manifest.csv`.
pub fn gen_corpus(cfg: &SynthConfig, out_dir: impl AsRef<Path>) -> Result<Manifest> {
    cfg.validate()?;
    let out = out_dir.as_ref();
    let wav_dir = out.join("wav");
    fs::create_dir_all(&wav_dir).map_err(|e| Error::io(&wav_dir, e))?;
    let voices = voices(cfg);
    let texts = transcripts(cfg);
    let mut rows = Vec::with_capacity(cfg.n_speakers * cfg.utterances_per_speaker);
    for (si, voice) in voices.iter().enumerate() {
        for (ui, text) in texts[si].iter().enumerate() {
            let id = utterance_id(si, ui);
            let seed = cfg.seed ^ ((si as u64) << 32 | ui as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let w = render(text, voice, cfg, &mut rng)?;
            let rel = format!("wav/{id}.wav");
            write_wav(&w, out.join(&rel))?;
            rows.push(ManifestRow {
                utt_id: id,
                speaker_id: voice.speaker_id.clone(),
                wav_path: rel,
                transcript: text.clone(),
            });
        }
    }
    let voices_path = out.join("voices.json");
    let json = serde_json::to_string_pretty(&voices)?;
    fs::write(&voices_path, json).map_err(|e| Error::io(&voices_path, e))?;
    let manifest = Manifest::new(rows, out)?;
    manifest.write(out.join("manifest.csv"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{forward, FrontendConfig};

    #[test]
    fn tone_table_is_distinct_and_in_range() {
        let f: Vec<f64> = TONE_ALPHABET.chars().map(|c| char_tone_hz(c).unwrap()).collect();
        assert!((f[0] - TONE_LOW_HZ).abs() < 1e-9);
        assert!((f[26] - TONE_HIGH_HZ).abs() < 1e-9);
        assert!(f.windows(2).all(|w| w[1] > w[0] * 1.05));
        assert_eq!(char_tone_hz('?'), None);
    }

    #[test]
    fn voices_cover_the_ranges() {
        let cfg = SynthConfig::default();
        let v = voices(&cfg);
        assert_eq!(v.len(), 20);
        for x in &v {
            assert!((0.8..=1.25).contains(&x.f0_factor));
            assert!((-6.0..=6.0).contains(&x.tilt_db_per_octave));
        }
        let mut f: Vec<f64> = v.iter().map(|x| x.f0_factor).collect();
        f.sort_by(f64::total_cmp);
        assert!(f[0] < 0.85 && f[19] > 1.2);
    }

    #[test]
    fn rendering_is_deterministic_and_boxed() {
        let cfg = SynthConfig::default();
        let v = &voices(&cfg)[3];
        let a = render("do go", v, &cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = render("do go", v, &cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 2 * 1600 + 5 * 1280);
        assert!(a.samples().iter().all(|s| s.abs() <= 1.0));
        assert!(render("", v, &cfg, &mut ChaCha8Rng::seed_from_u64(1)).is_err());
        assert!(render("a1", v, &cfg, &mut ChaCha8Rng::seed_from_u64(1)).is_err());
    }

    #[test]
    fn speakers_differ_in_mean_log_mel() {
        let cfg = SynthConfig::default();
        let v = voices(&cfg);
        let fe = FrontendConfig::default();
        let mean = |w: &Waveform| {
            let fm = forward(w, &fe).unwrap();
            let mut m = vec![0.0; fe.n_mels];
            for row in fm.values().iter_rows() {
                for (a, b) in m.iter_mut().zip(row) {
                    *a += b / fm.frames() as f64;
                }
            }
            m
        };
        let a = mean(&render("open the door", &v[0], &cfg, &mut ChaCha8Rng::seed_from_u64(5)).unwrap());
        let b = mean(&render("open the door", &v[1], &cfg, &mut ChaCha8Rng::seed_from_u64(5)).unwrap());
        let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(dot / (na * nb) < 0.99, "cosine {}", dot / (na * nb));
    }

    #[test]
    fn corpus_defaults_and_reproducibility() {
        let cfg = SynthConfig {
            n_speakers: 3,
            utterances_per_speaker: 2,
            ..SynthConfig::default()
        };
        let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let m = gen_corpus(&cfg, d1.path()).unwrap();
        gen_corpus(&cfg, d2.path()).unwrap();
        assert_eq!(m.rows().len(), 6);
        for r in m.rows() {
            let a = fs::read(d1.path().join(&r.wav_path)).unwrap();
            let b = fs::read(d2.path().join(&r.wav_path)).unwrap();
            assert_eq!(a, b, "{}", r.utt_id);
        }
    }
}
