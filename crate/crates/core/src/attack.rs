//! Targeted white-box attack: projected gradient descent on an additive
//! perturbation `δ` minimising `‖δ‖² + c · CTC(x + δ, target)` inside the
//! amplitude box `[-M, M]`.

use std::collections::HashSet;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::audio::{difference, snr_db_or_inf, write_wav, Waveform, MAX_AMPLITUDE};
use crate::ctc::{ctc_loss, greedy_decode, Transcript};
use crate::features::Frontend;
use crate::model::AcousticModel;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackConfig {
    pub c: f64,
    pub lr: f64,
    pub max_iters: usize,
    pub clip_bound: f64,
    pub success_check_every: usize,
    /// Multiplier applied once to `c` when half the budget passes without
    /// success.
    pub c_growth: f64,
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            c: 1.0,
            lr: 1e-3,
            max_iters: 3000,
            clip_bound: MAX_AMPLITUDE,
            success_check_every: 10,
            c_growth: 10.0,
            seed: 0,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::Config(format!("c must be positive, got {}", self.c)));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.max_iters == 0 {
            return Err(Error::Config("max_iters must be at least 1".into()));
        }
        if self.success_check_every == 0 {
            return Err(Error::Config("success_check_every must be at least 1".into()));
        }
        if !(self.clip_bound > 0.0) {
            return Err(Error::Config("clip_bound must be positive".into()));
        }
        if !(self.c_growth >= 1.0) {
            return Err(Error::Config("c_growth must be >= 1".into()));
        }
        Ok(())
    }
}

/// One row per success check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub c: f64,
    pub ctc_loss: f64,
    pub distortion: f64,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackResult {
    /// `x′`, on the PCM16 grid so that a written WAV reproduces it exactly.
    pub adversarial: Waveform,
    /// `x′ − x`.
    pub delta: Waveform,
    pub success: bool,
    pub iterations_used: usize,
    pub final_ctc_loss: f64,
    /// `+inf` when `δ = 0`.
    pub snr_db: f64,
    pub decoded_text: String,
    pub loss_trace: Vec<TraceRow>,
}

pub fn write_trace_csv(trace: &[TraceRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    for r in trace {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_io(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Format(format!("{}: {other:?}", path.display())),
    }
}

struct Evaluation {
    loss: f64,
    grad: Vec<f64>,
}

fn evaluate(
    fe: &Frontend,
    asr: &AcousticModel,
    w: &Waveform,
    target: &Transcript,
    iteration: usize,
) -> Result<Evaluation> {
    let fm = fe.forward(w)?;
    let pass = asr.forward(fm.values())?;
    let (loss, g_logits) = ctc_loss(&pass.logits, target).map_err(|e| match e {
        Error::Numeric { what, .. } => Error::Numeric { iteration, what },
        other => other,
    })?;
    if !loss.is_finite() {
        return Err(Error::Numeric {
            iteration,
            what: format!("CTC loss {loss}"),
        });
    }
    let g_feat = asr.backward_to_features(&pass, &g_logits)?;
    let grad = fe.backward(&fm, &g_feat)?;
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::Numeric {
            iteration,
            what: "non-finite waveform gradient".into(),
        });
    }
    Ok(Evaluation { loss, grad })
}

fn decode(fe: &Frontend, asr: &AcousticModel, w: &Waveform) -> Result<String> {
    let fm = fe.forward(w)?;
    let pass = asr.forward(fm.values())?;
    Ok(greedy_decode(&pass.logits, asr.vocab())?.text().to_string())
}

/// `clip(x + δ)` on the PCM16 grid; `x` itself while `δ` is zero.
fn candidate(x: &Waveform, delta: &[f64], bound: f64) -> Result<Waveform> {
    if delta.iter().all(|&d| d == 0.0) {
        return Ok(x.clone());
    }
    let s = x
        .samples()
        .iter()
        .zip(delta)
        .map(|(a, d)| (a + d).clamp(-bound, bound))
        .collect();
    Ok(Waveform::new(s, x.sample_rate_hz())?.quantized())
}

/// Drive `x` toward `target`.
///
/// Success is an exact greedy-decode match of the quantized candidate,
/// checked every `success_check_every` iterations and after the last one.
pub fn run_attack(
    x: &Waveform,
    target: &Transcript,
    asr: &AcousticModel,
    cfg: &AttackConfig,
) -> Result<AttackResult> {
    cfg.validate()?;
    let bound = cfg.clip_bound;
    if x.samples().iter().any(|s| s.abs() > bound) {
        return Err(Error::Contract(format!(
            "source waveform exceeds the amplitude bound {bound}"
        )));
    }
    let fe = Frontend::new(*asr.frontend(), x.sample_rate_hz())?;
    let frames = asr.frontend().frame_count(x.len()).unwrap_or(0);
    if frames < target.min_frames() {
        return Err(Error::Infeasible {
            frames,
            labels: target.labels().len(),
            repeats: target.repeats(),
        });
    }

    let mut delta = vec![0.0; x.len()];
    let mut c = cfg.c;
    let mut escalated = false;
    let mut trace = Vec::new();
    let mut success = false;
    let mut iterations_used = cfg.max_iters;
    for it in 0..=cfg.max_iters {
        if it % cfg.success_check_every == 0 || it == cfg.max_iters {
            let cand = candidate(x, &delta, bound)?;
            if decode(&fe, asr, &cand)? == target.text() {
                success = true;
                iterations_used = it;
                break;
            }
        }
        if it == cfg.max_iters {
            break;
        }
        if !escalated && 2 * it >= cfg.max_iters && cfg.c_growth > 1.0 {
            c *= cfg.c_growth;
            escalated = true;
            log::debug!("no success by iteration {it}; c raised to {c}");
        }
        let current = Waveform::new(
            x.samples().iter().zip(&delta).map(|(a, d)| a + d).collect(),
            x.sample_rate_hz(),
        )?;
        let ev = evaluate(&fe, asr, &current, target, it)?;
        let distortion: f64 = delta.iter().map(|d| d * d).sum();
        if it % cfg.success_check_every == 0 {
            trace.push(TraceRow {
                iteration: it,
                c,
                ctc_loss: ev.loss,
                distortion,
                objective: distortion + c * ev.loss,
            });
        }
        for ((d, g), xs) in delta.iter_mut().zip(&ev.grad).zip(x.samples()) {
            let stepped = *d - cfg.lr * (c * g + 2.0 * *d);
            *d = (xs + stepped).clamp(-bound, bound) - xs;
        }
    }

    let adversarial = candidate(x, &delta, bound)?;
    let delta = difference(&adversarial, x)?;
    let final_ctc_loss = evaluate(&fe, asr, &adversarial, target, iterations_used)?.loss;
    let decoded_text = decode(&fe, asr, &adversarial)?;
    Ok(AttackResult {
        snr_db: snr_db_or_inf(x, &delta)?,
        adversarial,
        delta,
        success,
        iterations_used,
        final_ctc_loss,
        decoded_text,
        loss_trace: trace,
    })
}

/// Per-run seed: the first eight bytes of `SHA-256(seed ‖ source ‖ 0 ‖ target)`.
pub fn derive_seed(seed: u64, source_id: &str, target_id: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(source_id.as_bytes());
    h.update([0u8]);
    h.update(target_id.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

/// One JSONL row of a batch run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackRow {
    pub source_id: String,
    pub target_id: String,
    pub success: bool,
    pub iterations: usize,
    /// `None` for an unperturbed result (infinite SNR) or a failed run.
    pub snr_db: Option<f64>,
    pub final_ctc_loss: Option<f64>,
    pub decoded_text: String,
    pub wav_path_adv: Option<String>,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Attack source for a batch.
#[derive(Debug, Clone)]
pub struct Source {
    pub id: String,
    pub waveform: Waveform,
}

/// Named target transcript for a batch.
#[derive(Debug, Clone)]
pub struct Target {
    pub id: String,
    pub transcript: Transcript,
}

#[derive(Debug, Clone)]
pub struct BatchOutcome {
    /// All rows in source-major product order.
    pub rows: Vec<AttackRow>,
    pub executed: usize,
}

pub const ATTACKS_FILE: &str = "attacks.jsonl";

pub fn read_rows(path: impl AsRef<Path>) -> Result<Vec<AttackRow>> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        rows.push(serde_json::from_str(&line).map_err(|e| {
            Error::Format(format!("{} line {}: {e}", path.display(), i + 1))
        })?);
    }
    Ok(rows)
}

fn adv_name(source: &str, target: &str) -> String {
    format!("{source}__{target}")
}

/// Attack every (source, target) pair, appending rows to
/// `out_dir/attacks.jsonl`. Pairs already present in that file are skipped;
/// adversarial WAVs go to `out_dir/adv/` and loss traces to
/// `out_dir/traces/`. A failing pair is recorded with its error and the
/// batch continues.
pub fn attack_batch(
    sources: &[Source],
    targets: &[Target],
    asr: &AcousticModel,
    cfg: &AttackConfig,
    out_dir: impl AsRef<Path>,
) -> Result<BatchOutcome> {
    cfg.validate()?;
    if sources.is_empty() {
        return Err(Error::Data("no attack sources".into()));
    }
    let out = out_dir.as_ref();
    let adv_dir = out.join("adv");
    let trace_dir = out.join("traces");
    for d in [&adv_dir, &trace_dir] {
        fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let jsonl = out.join(ATTACKS_FILE);
    let mut existing = if jsonl.exists() {
        read_rows(&jsonl)?
    } else {
        Vec::new()
    };
    let done: HashSet<(String, String)> = existing
        .iter()
        .map(|r| (r.source_id.clone(), r.target_id.clone()))
        .collect();
    let mut file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&jsonl)
        .map_err(|e| Error::io(&jsonl, e))?;

    let mut executed = 0;
    for s in sources {
        for t in targets {
            if done.contains(&(s.id.clone(), t.id.clone())) {
                continue;
            }
            let seed = derive_seed(cfg.seed, &s.id, &t.id);
            let run_cfg = AttackConfig { seed, ..*cfg };
            let name = adv_name(&s.id, &t.id);
            log::info!("attack {} -> {} ({:?})", s.id, t.id, t.transcript.text());
            let row = match run_one(s, t, asr, &run_cfg, &adv_dir, &trace_dir, &name) {
                Ok(row) => row,
                Err(e) => {
                    log::warn!("attack {} -> {} failed: {e}", s.id, t.id);
                    AttackRow {
                        source_id: s.id.clone(),
                        target_id: t.id.clone(),
                        success: false,
                        iterations: 0,
                        snr_db: None,
                        final_ctc_loss: None,
                        decoded_text: String::new(),
                        wav_path_adv: None,
                        seed,
                        error: Some(e.to_string()),
                    }
                }
            };
            let line = serde_json::to_string(&row)?;
            writeln!(file, "{line}").map_err(|e| Error::io(&jsonl, e))?;
            file.flush().map_err(|e| Error::io(&jsonl, e))?;
            existing.push(row);
            executed += 1;
        }
    }

    let mut rows = Vec::with_capacity(sources.len() * targets.len());
    for s in sources {
        for t in targets {
            if let Some(r) = existing
                .iter()
                .find(|r| r.source_id == s.id && r.target_id == t.id)
            {
                rows.push(r.clone());
            }
        }
    }
    Ok(BatchOutcome { rows, executed })
}

fn run_one(
    s: &Source,
    t: &Target,
    asr: &AcousticModel,
    cfg: &AttackConfig,
    adv_dir: &Path,
    trace_dir: &Path,
    name: &str,
) -> Result<AttackRow> {
    let r = run_attack(&s.waveform, &t.transcript, asr, cfg)?;
    let rel: PathBuf = Path::new("adv").join(format!("{name}.wav"));
    write_wav(&r.adversarial, adv_dir.join(format!("{name}.wav")))?;
    write_trace_csv(&r.loss_trace, trace_dir.join(format!("{name}.csv")))?;
    Ok(AttackRow {
        source_id: s.id.clone(),
        target_id: t.id.clone(),
        success: r.success,
        iterations: r.iterations_used,
        snr_db: r.snr_db.is_finite().then_some(r.snr_db),
        final_ctc_loss: Some(r.final_ctc_loss),
        decoded_text: r.decoded_text,
        wav_path_adv: Some(rel.to_string_lossy().into_owned()),
        seed: cfg.seed,
        error: None,
    })
}
