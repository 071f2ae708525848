//! Differentiable log-mel front end.
//!
//! Pipeline: pre-emphasis, non-centered framing, periodic Hann window,
//! zero-padded real DFT, power spectrum, HTK-mel triangular filterbank,
//! `ln(energy + floor)`. [`Frontend::backward`] propagates a gradient on the
//! log-mel values back to the waveform samples through every stage.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::audio::Waveform;
use crate::matrix::Matrix;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrontendConfig {
    pub frame_len: usize,
    pub hop: usize,
    pub n_fft: usize,
    pub n_mels: usize,
    pub preemph: f64,
    pub floor: f64,
}

impl Default for FrontendConfig {
    fn default() -> Self {
        Self {
            frame_len: 400,
            hop: 160,
            n_fft: 512,
            n_mels: 40,
            preemph: 0.97,
            floor: 1e-10,
        }
    }
}

impl FrontendConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("frontend: {m}")));
        if self.hop < 1 {
            return bad("hop must be >= 1");
        }
        if self.frame_len < 1 || self.frame_len > self.n_fft {
            return bad("need 1 <= frame_len <= n_fft");
        }
        if !self.n_fft.is_power_of_two() {
            return bad("n_fft must be a power of two");
        }
        if self.n_mels < 2 {
            return bad("n_mels must be >= 2");
        }
        if !(self.floor > 0.0) {
            return bad("floor must be > 0");
        }
        Ok(())
    }

    /// Number of frames produced for `len` samples, if any.
    pub fn frame_count(&self, len: usize) -> Option<usize> {
        (len >= self.frame_len).then(|| 1 + (len - self.frame_len) / self.hop)
    }

    /// Smallest waveform length accepted by [`Frontend::forward`].
    pub fn min_samples(&self) -> usize {
        self.frame_len + 1
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular HTK-mel filters over DFT bins `0..=n_fft/2`, spanning 0 Hz to
/// Nyquist. Returned as an `n_mels x (n_fft/2 + 1)` weight matrix.
pub fn mel_filterbank(n_mels: usize, n_fft: usize, sample_rate_hz: u32) -> Matrix {
    let n_bins = n_fft / 2 + 1;
    let nyquist = f64::from(sample_rate_hz) / 2.0;
    let top = hz_to_mel(nyquist);
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(top * i as f64 / (n_mels + 1) as f64))
        .collect();
    let mut w = Matrix::zeros(n_mels, n_bins);
    for m in 0..n_mels {
        let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        for k in 0..n_bins {
            let f = k as f64 * f64::from(sample_rate_hz) / n_fft as f64;
            let v = if f > lo && f <= mid {
                (f - lo) / (mid - lo)
            } else if f > mid && f < hi {
                (hi - f) / (hi - mid)
            } else {
                0.0
            };
            w[(m, k)] = v;
        }
    }
    w
}

/// Center frequency of each mel filter in Hz.
pub fn mel_centers_hz(n_mels: usize, sample_rate_hz: u32) -> Vec<f64> {
    let top = hz_to_mel(f64::from(sample_rate_hz) / 2.0);
    (1..=n_mels)
        .map(|i| mel_to_hz(top * i as f64 / (n_mels + 1) as f64))
        .collect()
}

/// Log-mel features plus the intermediates needed by the backward pass.
#[derive(Debug, Clone)]
pub struct FeatureMatrix {
    values: Matrix,
    spectra: Vec<Complex<f64>>,
    energies: Matrix,
    n_samples: usize,
}

impl FeatureMatrix {
    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn frames(&self) -> usize {
        self.values.rows()
    }

    pub fn n_mels(&self) -> usize {
        self.values.cols()
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }
}

/// A configured front end for one sample rate. Holds the filterbank, window
/// and FFT plans; cheap to share across threads.
#[derive(Clone)]
pub struct Frontend {
    cfg: FrontendConfig,
    sample_rate_hz: u32,
    window: Vec<f64>,
    filters: Matrix,
    fft: Arc<dyn Fft<f64>>,
    ifft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Frontend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Frontend")
            .field("cfg", &self.cfg)
            .field("sample_rate_hz", &self.sample_rate_hz)
            .finish()
    }
}

impl Frontend {
    pub fn new(cfg: FrontendConfig, sample_rate_hz: u32) -> Result<Self> {
        cfg.validate()?;
        let mut planner = FftPlanner::new();
        let window = (0..cfg.frame_len)
            .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / cfg.frame_len as f64).cos())
            .collect();
        Ok(Self {
            cfg,
            sample_rate_hz,
            window,
            filters: mel_filterbank(cfg.n_mels, cfg.n_fft, sample_rate_hz),
            fft: planner.plan_fft_forward(cfg.n_fft),
            ifft: planner.plan_fft_inverse(cfg.n_fft),
        })
    }

    pub fn config(&self) -> &FrontendConfig {
        &self.cfg
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn window(&self) -> &[f64] {
        &self.window
    }

    pub fn filters(&self) -> &Matrix {
        &self.filters
    }

    pub fn forward(&self, w: &Waveform) -> Result<FeatureMatrix> {
        let cfg = &self.cfg;
        if w.sample_rate_hz() != self.sample_rate_hz {
            return Err(Error::Contract(format!(
                "front end built for {} Hz, waveform is {} Hz",
                self.sample_rate_hz,
                w.sample_rate_hz()
            )));
        }
        let s = w.samples();
        if s.len() < cfg.min_samples() {
            return Err(Error::DegenerateInput(format!(
                "{} samples, need at least {}",
                s.len(),
                cfg.min_samples()
            )));
        }
        let emphasized = preemphasize(s, cfg.preemph);
        let frames = cfg.frame_count(s.len()).expect("length checked above");
        let n_bins = cfg.n_fft / 2 + 1;

        let mut spectra = Vec::with_capacity(frames * n_bins);
        let mut energies = Matrix::zeros(frames, cfg.n_mels);
        let mut values = Matrix::zeros(frames, cfg.n_mels);
        let mut buf = vec![Complex::new(0.0, 0.0); cfg.n_fft];
        let mut power = vec![0.0; n_bins];
        for f in 0..frames {
            let start = f * cfg.hop;
            buf.fill(Complex::new(0.0, 0.0));
            for (n, b) in buf.iter_mut().take(cfg.frame_len).enumerate() {
                b.re = emphasized[start + n] * self.window[n];
            }
            self.fft.process(&mut buf);
            for (p, x) in power.iter_mut().zip(&buf[..n_bins]) {
                *p = x.norm_sqr();
            }
            spectra.extend_from_slice(&buf[..n_bins]);
            self.filters.mul_vec_into(&power, energies.row_mut(f));
            for (v, &e) in values.row_mut(f).iter_mut().zip(energies.row(f)) {
                *v = (e + cfg.floor).ln();
            }
        }
        Ok(FeatureMatrix {
            values,
            spectra,
            energies,
            n_samples: s.len(),
        })
    }

    /// Gradient of `sum(grad_out * fm.values)` with respect to the waveform
    /// samples that produced `fm`.
    pub fn backward(&self, fm: &FeatureMatrix, grad_out: &Matrix) -> Result<Vec<f64>> {
        let cfg = &self.cfg;
        if grad_out.shape() != fm.values.shape() {
            return Err(Error::Contract(format!(
                "gradient shape {:?} does not match features {:?}",
                grad_out.shape(),
                fm.values.shape()
            )));
        }
        let n_bins = cfg.n_fft / 2 + 1;
        if fm.spectra.len() != fm.frames() * n_bins || fm.n_mels() != cfg.n_mels {
            return Err(Error::Contract(
                "feature cache does not belong to this front end".into(),
            ));
        }
        let mut g_emph = vec![0.0; fm.n_samples];
        let mut g_energy = vec![0.0; cfg.n_mels];
        let mut g_power = vec![0.0; n_bins];
        let mut buf = vec![Complex::new(0.0, 0.0); cfg.n_fft];
        for f in 0..fm.frames() {
            let g = grad_out.row(f);
            if g.iter().all(|&v| v == 0.0) {
                continue;
            }
            for ((ge, &gv), &e) in g_energy.iter_mut().zip(g).zip(fm.energies.row(f)) {
                *ge = gv / (e + cfg.floor);
            }
            g_power.fill(0.0);
            self.filters.tr_mul_vec_add(&g_energy, &mut g_power);
            // d|X_k|^2 / dy_n = 2 Re(X_k e^{+i 2 pi k n / N}), so the frame
            // gradient is the real part of an inverse DFT of 2 g_k X_k.
            buf.fill(Complex::new(0.0, 0.0));
            let spectrum = &fm.spectra[f * n_bins..(f + 1) * n_bins];
            for ((b, x), &gp) in buf.iter_mut().zip(spectrum).zip(&g_power) {
                *b = x * (2.0 * gp);
            }
            self.ifft.process(&mut buf);
            let start = f * cfg.hop;
            for n in 0..cfg.frame_len {
                g_emph[start + n] += buf[n].re * self.window[n];
            }
        }
        Ok(preemphasis_backward(&g_emph, cfg.preemph))
    }
}

/// One-shot forward pass; builds a [`Frontend`] for the waveform's rate.
pub fn forward(w: &Waveform, cfg: &FrontendConfig) -> Result<FeatureMatrix> {
    Frontend::new(*cfg, w.sample_rate_hz())?.forward(w)
}

fn preemphasize(s: &[f64], a: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(s.len());
    out.push(s[0]);
    out.extend(s.windows(2).map(|p| p[1] - a * p[0]));
    out
}

fn preemphasis_backward(g: &[f64], a: f64) -> Vec<f64> {
    (0..g.len())
        .map(|t| g[t] - g.get(t + 1).map_or(0.0, |next| a * next))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Straight-line O(n^2) reimplementation of the forward pipeline.
    fn reference_log_mel(s: &[f64], cfg: &FrontendConfig, rate: u32) -> Vec<Vec<f64>> {
        let mut e = vec![s[0]];
        for t in 1..s.len() {
            e.push(s[t] - cfg.preemph * s[t - 1]);
        }
        let filters = mel_filterbank(cfg.n_mels, cfg.n_fft, rate);
        let n_bins = cfg.n_fft / 2 + 1;
        let mut out = Vec::new();
        let mut start = 0;
        while start + cfg.frame_len <= s.len() {
            let mut power = vec![0.0; n_bins];
            for (k, p) in power.iter_mut().enumerate() {
                let (mut re, mut im) = (0.0, 0.0);
                for n in 0..cfg.frame_len {
                    let win = 0.5 - 0.5 * (2.0 * PI * n as f64 / cfg.frame_len as f64).cos();
                    let y = e[start + n] * win;
                    let ang = 2.0 * PI * (k * n) as f64 / cfg.n_fft as f64;
                    re += y * ang.cos();
                    im -= y * ang.sin();
                }
                *p = re * re + im * im;
            }
            out.push(
                (0..cfg.n_mels)
                    .map(|m| {
                        let en: f64 = (0..n_bins).map(|k| filters[(m, k)] * power[k]).sum();
                        (en + cfg.floor).ln()
                    })
                    .collect(),
            );
            start += cfg.hop;
        }
        out
    }

    fn small_cfg() -> FrontendConfig {
        FrontendConfig {
            frame_len: 24,
            hop: 10,
            n_fft: 32,
            n_mels: 6,
            preemph: 0.97,
            floor: 1e-10,
        }
    }

    fn random_wave(rng: &mut ChaCha8Rng, n: usize, rate: u32) -> Waveform {
        Waveform::new((0..n).map(|_| rng.random_range(-0.5..0.5)).collect(), rate).unwrap()
    }

    #[test]
    fn zero_waveform_hits_the_floor() {
        let w = Waveform::new(vec![0.0; 560], 16000).unwrap();
        let fm = forward(&w, &FrontendConfig::default()).unwrap();
        assert_eq!(fm.frames(), 2);
        assert!(fm.values().as_slice().iter().all(|&v| v == 1e-10f64.ln()));
    }

    #[test]
    fn too_short_is_degenerate() {
        let w = Waveform::new(vec![0.1; 399], 16000).unwrap();
        assert!(matches!(
            forward(&w, &FrontendConfig::default()),
            Err(Error::DegenerateInput(_))
        ));
    }

    #[test]
    fn matches_straight_line_dft() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cfg = FrontendConfig::default();
        let w = random_wave(&mut rng, 1200, 16000);
        let fm = forward(&w, &cfg).unwrap();
        let reference = reference_log_mel(w.samples(), &cfg, 16000);
        assert_eq!(reference.len(), fm.frames());
        for (f, row) in reference.iter().enumerate() {
            for (m, v) in row.iter().enumerate() {
                assert!((fm.values()[(f, m)] - v).abs() < 1e-8, "frame {f} mel {m}");
            }
        }
    }

    #[test]
    fn sine_at_filter_center_dominates_distant_filters() {
        let cfg = FrontendConfig::default();
        let target = 12;
        let freq = mel_centers_hz(cfg.n_mels, 16000)[target];
        let s: Vec<f64> = (0..3200)
            .map(|t| 0.5 * (2.0 * PI * freq * t as f64 / 16000.0).sin())
            .collect();
        let reference = reference_log_mel(&s, &cfg, 16000);
        let fm = forward(&Waveform::new(s, 16000).unwrap(), &cfg).unwrap();
        for (f, row) in reference.iter().enumerate() {
            for m in (0..cfg.n_mels).filter(|m| m.abs_diff(target) >= 2) {
                assert!(row[target] > row[m], "reference frame {f} filter {m}");
                assert!(fm.values()[(f, target)] > fm.values()[(f, m)]);
            }
        }
    }

    #[test]
    fn zero_gradient_maps_to_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let fe = Frontend::new(small_cfg(), 8000).unwrap();
        let w = random_wave(&mut rng, 64, 8000);
        let fm = fe.forward(&w).unwrap();
        let g = fe.backward(&fm, &Matrix::zeros(fm.frames(), fm.n_mels())).unwrap();
        assert_eq!(g.len(), 64);
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shape_mismatch_is_contract_error() {
        let fe = Frontend::new(small_cfg(), 8000).unwrap();
        let fm = fe.forward(&Waveform::new(vec![0.1; 64], 8000).unwrap()).unwrap();
        assert!(matches!(
            fe.backward(&fm, &Matrix::zeros(1, 1)),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let fe = Frontend::new(small_cfg(), 8000).unwrap();
        let w = random_wave(&mut rng, 64, 8000);
        let fm = fe.forward(&w).unwrap();
        let mut grad_out = Matrix::zeros(fm.frames(), fm.n_mels());
        grad_out
            .as_mut_slice()
            .iter_mut()
            .for_each(|g| *g = rng.random_range(-1.0..1.0));
        let analytic = fe.backward(&fm, &grad_out).unwrap();
        let objective = |s: &[f64]| {
            let fm = fe.forward(&Waveform::new(s.to_vec(), 8000).unwrap()).unwrap();
            crate::matrix::dot(fm.values().as_slice(), grad_out.as_slice())
        };
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for i in 0..w.len() {
            let mut plus = w.samples().to_vec();
            let mut minus = plus.clone();
            plus[i] += h;
            minus[i] -= h;
            let fd = (objective(&plus) - objective(&minus)) / (2.0 * h);
            let rel = (fd - analytic[i]).abs() / fd.abs().max(analytic[i].abs()).max(1e-2);
            worst = worst.max(rel);
        }
        assert!(worst < 1e-4, "max relative error {worst}");
    }

    #[test]
    fn overlapping_frames_sum_their_contributions() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let fe = Frontend::new(small_cfg(), 8000).unwrap();
        let w = random_wave(&mut rng, 64, 8000);
        let fm = fe.forward(&w).unwrap();
        let mut only0 = Matrix::zeros(fm.frames(), fm.n_mels());
        let mut only1 = only0.clone();
        for m in 0..fm.n_mels() {
            only0[(0, m)] = rng.random_range(-1.0..1.0);
            only1[(1, m)] = rng.random_range(-1.0..1.0);
        }
        let mut both = only0.clone();
        both.row_mut(1).copy_from_slice(only1.row(1));
        let g0 = fe.backward(&fm, &only0).unwrap();
        let g1 = fe.backward(&fm, &only1).unwrap();
        let g = fe.backward(&fm, &both).unwrap();
        // samples 10..24 are shared by frames 0 and 1 (hop 10, length 24)
        for t in 10..24 {
            assert!(g0[t] != 0.0 && g1[t] != 0.0);
            assert!((g[t] - (g0[t] + g1[t])).abs() < 1e-12);
        }
    }

    #[test]
    fn forward_is_deterministic_and_monotone_in_gain() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cfg = FrontendConfig::default();
        let w = random_wave(&mut rng, 2000, 16000);
        let a = forward(&w, &cfg).unwrap();
        let b = forward(&w, &cfg).unwrap();
        assert_eq!(a.values(), b.values());
        let louder =
            Waveform::new(w.samples().iter().map(|s| s * 1.5).collect(), 16000).unwrap();
        let c = forward(&louder, &cfg).unwrap();
        for (x, y) in a.values().as_slice().iter().zip(c.values().as_slice()) {
            assert!(y >= x);
        }
    }
}
