//! Mono waveforms in the normalized float domain, PCM16 WAV I/O, amplitude
//! clipping and the power-ratio SNR used to report perturbation strength.

use std::fs;
use std::path::Path;

use crate::{Error, Result};

pub const CANONICAL_RATE_HZ: u32 = 16_000;

/// Full-scale amplitude after PCM16 normalization. Adversarial waveforms are
/// kept inside `[-MAX_AMPLITUDE, MAX_AMPLITUDE]`.
pub const MAX_AMPLITUDE: f64 = 1.0;

const PCM16_SCALE: f64 = 32768.0;
const WAVE_FORMAT_PCM: u16 = 1;

/// Mono audio at a fixed sample rate. Samples are `f64` in the normalized
/// domain where `1.0` is PCM16 full scale.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate_hz: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate_hz: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::DegenerateInput("waveform has no samples".into()));
        }
        if sample_rate_hz == 0 {
            return Err(Error::DegenerateInput("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::DegenerateInput(format!("sample {i} is not finite")));
        }
        Ok(Self {
            samples,
            sample_rate_hz,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|s| s * s).sum()
    }

    /// Same samples rounded to the PCM16 grid, i.e. exactly what
    /// `read_wav(write_wav(self))` yields.
    pub fn quantized(&self) -> Waveform {
        Waveform {
            samples: self
                .samples
                .iter()
                .map(|&s| f64::from(to_pcm16(s)) / PCM16_SCALE)
                .collect(),
            sample_rate_hz: self.sample_rate_hz,
        }
    }

    fn check_compatible(&self, other: &Waveform) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::Contract(format!(
                "length mismatch: {} vs {}",
                self.len(),
                other.len()
            )));
        }
        if self.sample_rate_hz != other.sample_rate_hz {
            return Err(Error::Contract(format!(
                "sample rate mismatch: {} vs {} (no resampling)",
                self.sample_rate_hz, other.sample_rate_hz
            )));
        }
        Ok(())
    }
}

fn to_pcm16(s: f64) -> i16 {
    (s * PCM16_SCALE).round().clamp(-32768.0, 32767.0) as i16
}

/// Replace each sample by `min(bound, max(-bound, s))`.
pub fn clip(w: &Waveform, bound: f64) -> Waveform {
    debug_assert!(bound > 0.0);
    Waveform {
        samples: w.samples.iter().map(|s| s.clamp(-bound, bound)).collect(),
        sample_rate_hz: w.sample_rate_hz,
    }
}

/// Signal-to-noise ratio in dB over the whole utterance:
/// `10 log10(sum x^2 / sum delta^2)`.
///
/// A zero-energy perturbation yields [`Error::NoPerturbation`], which callers
/// read as `+inf`.
pub fn snr_db(clean: &Waveform, perturbation: &Waveform) -> Result<f64> {
    clean.check_compatible(perturbation)?;
    let p_clean = clean.energy();
    let p_delta = perturbation.energy();
    if p_delta == 0.0 {
        return Err(Error::NoPerturbation);
    }
    if p_clean == 0.0 {
        return Err(Error::DegenerateInput("clean signal has zero energy".into()));
    }
    Ok(10.0 * (p_clean / p_delta).log10())
}

/// [`snr_db`] with the no-perturbation case mapped to `f64::INFINITY`.
pub fn snr_db_or_inf(clean: &Waveform, perturbation: &Waveform) -> Result<f64> {
    match snr_db(clean, perturbation) {
        Err(Error::NoPerturbation) => Ok(f64::INFINITY),
        other => other,
    }
}

/// Elementwise `a - b`.
pub fn difference(a: &Waveform, b: &Waveform) -> Result<Waveform> {
    a.check_compatible(b)?;
    Ok(Waveform {
        samples: a.samples.iter().zip(&b.samples).map(|(x, y)| x - y).collect(),
        sample_rate_hz: a.sample_rate_hz,
    })
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_wav(&bytes)
}

fn u16_at(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

/// Parse an in-memory RIFF/WAVE PCM16 mono file.
pub fn parse_wav(bytes: &[u8]) -> Result<Waveform> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(Error::Format("missing RIFF/WAVE header".into()));
    }
    let mut pos = 12;
    let mut fmt: Option<(u16, u16, u32, u16)> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32_at(bytes, pos + 4) as usize;
        let body = pos + 8;
        if id == b"fmt " {
            if size < 16 || body + size > bytes.len() {
                return Err(Error::Format("fmt chunk truncated".into()));
            }
            fmt = Some((
                u16_at(bytes, body),
                u16_at(bytes, body + 2),
                u32_at(bytes, body + 4),
                u16_at(bytes, body + 14),
            ));
        } else if id == b"data" {
            let (tag, channels, rate, bits) =
                fmt.ok_or_else(|| Error::Format("data chunk before fmt chunk".into()))?;
            if tag != WAVE_FORMAT_PCM || bits != 16 {
                return Err(Error::UnsupportedFormat(format!(
                    "format tag {tag}, {bits} bits per sample (need PCM16)"
                )));
            }
            if channels != 1 {
                return Err(Error::UnsupportedFormat(format!(
                    "{channels} channels (need mono)"
                )));
            }
            if body + size > bytes.len() || size % 2 != 0 {
                return Err(Error::Format(format!(
                    "data chunk declares {size} bytes, {} available",
                    bytes.len().saturating_sub(body)
                )));
            }
            let samples = bytes[body..body + size]
                .chunks_exact(2)
                .map(|c| f64::from(i16::from_le_bytes([c[0], c[1]])) / PCM16_SCALE)
                .collect::<Vec<_>>();
            if samples.is_empty() {
                return Err(Error::Format("data chunk is empty".into()));
            }
            return Waveform::new(samples, rate).map_err(|e| Error::Format(e.to_string()));
        }
        // chunks are word aligned
        pos = body + size + (size & 1);
    }
    Err(Error::Format("no data chunk".into()))
}

/// Serialize as RIFF/WAVE PCM16 mono.
pub fn encode_wav(w: &Waveform) -> Vec<u8> {
    let data_len = (w.len() * 2) as u32;
    let rate = w.sample_rate_hz;
    let mut out = Vec::with_capacity(44 + data_len as usize);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&WAVE_FORMAT_PCM.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&rate.to_le_bytes());
    out.extend_from_slice(&(rate * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for &s in &w.samples {
        out.extend_from_slice(&to_pcm16(s).to_le_bytes());
    }
    out
}

pub fn write_wav(w: &Waveform, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_wav(w)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn wav(s: &[f64]) -> Waveform {
        Waveform::new(s.to_vec(), CANONICAL_RATE_HZ).unwrap()
    }

    fn pcm_bytes(samples: &[i16], channels: u16, tag: u16, bits: u16) -> Vec<u8> {
        let data: Vec<u8> = samples.iter().flat_map(|s| s.to_le_bytes()).collect();
        let mut out = Vec::new();
        out.extend_from_slice(b"RIFF");
        out.extend_from_slice(&(36 + data.len() as u32).to_le_bytes());
        out.extend_from_slice(b"WAVEfmt ");
        out.extend_from_slice(&16u32.to_le_bytes());
        out.extend_from_slice(&tag.to_le_bytes());
        out.extend_from_slice(&channels.to_le_bytes());
        out.extend_from_slice(&16000u32.to_le_bytes());
        out.extend_from_slice(&(16000u32 * 2 * channels as u32).to_le_bytes());
        out.extend_from_slice(&(2 * channels).to_le_bytes());
        out.extend_from_slice(&bits.to_le_bytes());
        out.extend_from_slice(b"data");
        out.extend_from_slice(&(data.len() as u32).to_le_bytes());
        out.extend_from_slice(&data);
        out
    }

    #[test]
    fn reads_fixed_point_values() {
        let w = parse_wav(&pcm_bytes(&[0, 16384, -32768], 1, 1, 16)).unwrap();
        assert_eq!(w.samples(), &[0.0, 0.5, -1.0]);
        assert_eq!(w.sample_rate_hz(), 16000);
    }

    #[test]
    fn reads_frame_count_from_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("n.wav");
        std::fs::write(&path, pcm_bytes(&vec![7; 1600], 1, 1, 16)).unwrap();
        let w = read_wav(&path).unwrap();
        assert_eq!(w.len(), 1600);
        assert_eq!(w.sample_rate_hz(), 16000);
    }

    #[test]
    fn truncated_data_chunk_is_format_error() {
        let mut b = pcm_bytes(&[1, 2, 3], 1, 1, 16);
        b.pop();
        assert!(matches!(parse_wav(&b), Err(Error::Format(_))));
        assert!(matches!(parse_wav(b"RIFF"), Err(Error::Format(_))));
    }

    #[test]
    fn stereo_and_non_pcm16_are_rejected() {
        let stereo = pcm_bytes(&[1, 2, 3, 4], 2, 1, 16);
        assert!(matches!(parse_wav(&stereo), Err(Error::UnsupportedFormat(_))));
        let float = pcm_bytes(&[1, 2], 1, 3, 16);
        assert!(matches!(parse_wav(&float), Err(Error::UnsupportedFormat(_))));
        let eight = pcm_bytes(&[1, 2], 1, 1, 8);
        assert!(matches!(parse_wav(&eight), Err(Error::UnsupportedFormat(_))));
    }

    #[test]
    fn write_then_read_exact_for_representable_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.wav");
        write_wav(&wav(&[0.0, 0.5]), &path).unwrap();
        assert_eq!(read_wav(&path).unwrap().samples(), &[0.0, 0.5]);
    }

    #[test]
    fn unwritable_path_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("missing").join("x.wav");
        assert!(matches!(write_wav(&wav(&[0.1]), &path), Err(Error::Io { .. })));
    }

    #[test]
    fn snr_examples() {
        let x = wav(&[0.3, -0.2, 0.5, 0.1]);
        let tenth = wav(&x.samples().iter().map(|s| s / 10.0).collect::<Vec<_>>());
        assert!((snr_db(&x, &tenth).unwrap() - 20.0).abs() < 1e-12);
        assert!(snr_db(&x, &x).unwrap().abs() < 1e-12);
        let d = snr_db(&wav(&[1.0, 0.0]), &wav(&[0.1, 0.1])).unwrap();
        assert!((d - 16.989_700_043_360_19).abs() < 1e-9);
    }

    #[test]
    fn snr_degenerate_cases() {
        let x = wav(&[0.3, 0.1]);
        assert!(matches!(snr_db(&x, &wav(&[0.0, 0.0])), Err(Error::NoPerturbation)));
        assert_eq!(snr_db_or_inf(&x, &wav(&[0.0, 0.0])).unwrap(), f64::INFINITY);
        assert!(matches!(
            snr_db(&wav(&[0.0, 0.0]), &x),
            Err(Error::DegenerateInput(_))
        ));
        let other_rate = Waveform::new(vec![0.1, 0.1], 8000).unwrap();
        assert!(matches!(snr_db(&x, &other_rate), Err(Error::Contract(_))));
    }

    #[test]
    fn clip_examples() {
        assert_eq!(clip(&wav(&[1.5, -2.0, 0.3]), 1.0).samples(), &[1.0, -1.0, 0.3]);
        assert_eq!(clip(&wav(&[0.2, -0.7]), 1.0).samples(), &[0.2, -0.7]);
        assert_eq!(clip(&wav(&[0.9]), 0.5).samples(), &[0.5]);
    }

    fn signal() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (1usize..64).prop_flat_map(|n| {
            (
                prop::collection::vec(-1.0f64..1.0, n),
                prop::collection::vec(-1.0f64..1.0, n),
            )
        })
    }

    proptest! {
        #[test]
        fn snr_scaling_laws((x, d) in signal(), alpha in 0.01f64..100.0) {
            let x = wav(&x);
            let d = wav(&d);
            prop_assume!(x.energy() > 1e-12 && d.energy() > 1e-12);
            let base = snr_db(&x, &d).unwrap();
            let scaled_d = wav(&d.samples().iter().map(|s| s * alpha).collect::<Vec<_>>());
            let scaled_x = wav(&x.samples().iter().map(|s| s * alpha).collect::<Vec<_>>());
            prop_assert!((snr_db(&x, &scaled_d).unwrap() - (base - 20.0 * alpha.log10())).abs() < 1e-9);
            prop_assert!((snr_db(&scaled_x, &scaled_d).unwrap() - base).abs() < 1e-9);
        }

        #[test]
        fn clip_is_idempotent(s in prop::collection::vec(-3.0f64..3.0, 1..32), b in 0.1f64..2.0) {
            let once = clip(&wav(&s), b);
            prop_assert_eq!(clip(&once, b), once.clone());
            prop_assert!(once.samples().iter().all(|v| v.abs() <= b));
        }

        #[test]
        fn wav_round_trip_within_one_step(s in prop::collection::vec(-1.0f64..=1.0, 1..256)) {
            let w = wav(&s);
            let back = parse_wav(&encode_wav(&w)).unwrap();
            prop_assert_eq!(back.len(), w.len());
            for (a, b) in w.samples().iter().zip(back.samples()) {
                prop_assert!((a - b).abs() <= 1.0 / 32768.0);
            }
            prop_assert_eq!(back.clone(), w.quantized());
        }
    }
}
