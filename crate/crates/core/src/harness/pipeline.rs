//! Train, attack, embed, score and analyse, writing everything under the
//! run's output directory:
//!
//! ```text
//! models/            asr.vxdm, sid_s<seed>.vxdm and training curves
//! attacks/           attacks.jsonl, adv/*.wav, traces/*.csv
//! stats/<T>.json     per-target statistics
//! scores/<T>__<model>.csv
//! confusion/<T>.csv  phoneme confusion of target vs decoded text
//! summary.csv        one row per (target, model)
//! charts/            SVG charts and their CSVs
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{sid_label, RunConfig};
use super::manifest::{Manifest, ManifestRow};
use super::report::{report, SUMMARY_FILE, SUMMARY_HEADER};
use super::synth::gen_corpus;
use crate::attack::{attack_batch, AttackRow, BatchOutcome, Source, Target};
use crate::audio::read_wav;
use crate::ctc::{greedy_decode, Transcript, Vocabulary};
use crate::features::{Frontend, FrontendConfig};
use crate::matrix::Matrix;
use crate::model::{
    train_asr, train_sid, write_curve_csv, AcousticModel, AsrItem, Embedding, SidItem,
    SpeakerModel,
};
use crate::phonetics::targets::select;
use crate::phonetics::{
    confusion_matrix, profile_target, wer_cer, ConfusionSummary, Lexicon, PhonemeSequence,
};
use crate::verify::{d_prime, make_pairs, tmr_at_fmr};
use crate::{Error, Result};

pub const FMR_TARGET: f64 = 0.001;

/// Lowercase and drop apostrophes, the only normalisation applied to
/// transcripts before they meet the vocabulary.
pub fn normalize_text(text: &str) -> String {
    text.to_lowercase().replace(['\'', '’'], "")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetSpec {
    pub target_id: String,
    pub text: String,
}

pub fn resolve_targets(cfg: &RunConfig) -> Result<Vec<TargetSpec>> {
    if let Some(path) = &cfg.targets_file {
        let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::Config(format!(
            "targets file {}: {e}",
            path.display()
        )))?;
        let specs = rdr
            .deserialize::<TargetSpec>()
            .map(|r| {
                r.map(|t| TargetSpec {
                    text: normalize_text(&t.text),
                    ..t
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        if specs.is_empty() {
            return Err(Error::Config(format!("targets file {} is empty", path.display())));
        }
        return Ok(specs);
    }
    Ok(select(&cfg.targets)?
        .into_iter()
        .map(|t| TargetSpec {
            target_id: t.id.to_string(),
            text: t.text.to_string(),
        })
        .collect())
}

/// Load the manifest under `corpus_dir`, generating the synthetic corpus
/// first when allowed and absent.
pub fn prepare_corpus(cfg: &RunConfig) -> Result<Manifest> {
    let path = cfg.corpus_dir.join("manifest.csv");
    if !path.exists() {
        if !cfg.generate_corpus {
            return Err(Error::Config(format!("no manifest at {}", path.display())));
        }
        log::info!("generating synthetic corpus in {}", cfg.corpus_dir.display());
        gen_corpus(&cfg.synth(), &cfg.corpus_dir)?;
    }
    Manifest::load(path)
}

fn features(fe: &Frontend, manifest: &Manifest, row: &ManifestRow) -> Result<Matrix> {
    let w = manifest.read(row)?;
    Ok(fe.forward(&w)?.values().clone())
}

fn frontend_for(cfg: &FrontendConfig, manifest: &Manifest) -> Result<Frontend> {
    let rate = match manifest.rows().first() {
        Some(r) => manifest.read(r)?.sample_rate_hz(),
        None => return Err(Error::Data("manifest is empty".into())),
    };
    Frontend::new(*cfg, rate)
}

pub fn train_asr_on(
    manifest: &Manifest,
    rows: &[&ManifestRow],
    cfg: &RunConfig,
) -> Result<(AcousticModel, Vec<crate::model::EpochRecord>)> {
    let vocab = Vocabulary::english();
    let fe = frontend_for(&cfg.frontend(), manifest)?;
    let items = rows
        .iter()
        .map(|r| {
            let transcript = Transcript::new(&normalize_text(&r.transcript), &vocab)
                .map_err(|e| Error::Data(format!("item {}: {e}", r.utt_id)))?;
            Ok(AsrItem {
                id: r.utt_id.clone(),
                features: features(&fe, manifest, r)?,
                transcript,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    train_asr(&items, &vocab, &cfg.frontend(), &cfg.asr_training())
}

pub fn train_sid_on(
    manifest: &Manifest,
    rows: &[&ManifestRow],
    cfg: &RunConfig,
    seed: u64,
) -> Result<(SpeakerModel, Vec<crate::model::EpochRecord>)> {
    let fe = frontend_for(&cfg.frontend(), manifest)?;
    let items = rows
        .iter()
        .map(|r| {
            Ok(SidItem {
                id: r.utt_id.clone(),
                features: features(&fe, manifest, r)?,
                speaker: r.speaker_id.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    train_sid(&items, &cfg.frontend(), &cfg.sid_training(seed))
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(p) = path.parent() {
        fs::create_dir_all(p).map_err(|e| Error::io(p, e))?;
    }
    Ok(())
}

fn curve_path(model_path: &Path) -> PathBuf {
    let stem = model_path.file_stem().and_then(|s| s.to_str()).unwrap_or("model");
    model_path.with_file_name(format!("{stem}_curve.csv"))
}

pub struct Models {
    pub asr: AcousticModel,
    /// `(label, model)` in `sid_seeds` order.
    pub sids: Vec<(String, SpeakerModel)>,
}

/// Load every model the run needs, training the missing ones on the whole
/// manifest when `cfg.train` is set. Missing models without training is a
/// configuration error.
pub fn load_or_train(manifest: &Manifest, cfg: &RunConfig) -> Result<Models> {
    let asr_path = cfg.asr_model_path();
    let sid_paths: Vec<(u64, PathBuf)> = cfg
        .sid_seeds
        .iter()
        .map(|&s| (s, cfg.sid_model_path(s)))
        .collect();
    if !cfg.train {
        let missing: Vec<String> = std::iter::once(&asr_path)
            .chain(sid_paths.iter().map(|p| &p.1))
            .filter(|p| !p.is_file())
            .map(|p| p.display().to_string())
            .collect();
        if !missing.is_empty() {
            return Err(Error::Config(format!(
                "missing models and training disabled: {}",
                missing.join(", ")
            )));
        }
    }
    let rows: Vec<&ManifestRow> = manifest.rows().iter().collect();
    let asr = if asr_path.is_file() {
        AcousticModel::load(&asr_path)?
    } else {
        log::info!("training acoustic model ({} utterances)", rows.len());
        let (m, curve) = train_asr_on(manifest, &rows, cfg)?;
        ensure_parent(&asr_path)?;
        m.save(&asr_path)?;
        write_curve_csv(&curve, curve_path(&asr_path))?;
        m
    };
    let mut sids = Vec::new();
    for (seed, path) in sid_paths {
        let m = if path.is_file() {
            SpeakerModel::load(&path)?
        } else {
            log::info!("training speaker model seed {seed}");
            let (m, curve) = train_sid_on(manifest, &rows, cfg, seed)?;
            ensure_parent(&path)?;
            m.save(&path)?;
            write_curve_csv(&curve, curve_path(&path))?;
            m
        };
        sids.push((sid_label(seed), m));
    }
    Ok(Models { asr, sids })
}

pub fn attack_dir(cfg: &RunConfig) -> PathBuf {
    cfg.out_dir.join("attacks")
}

/// Attack each speaker's clean source toward every configured target.
pub fn run_attacks(
    manifest: &Manifest,
    asr: &AcousticModel,
    cfg: &RunConfig,
) -> Result<BatchOutcome> {
    let vocab = asr.vocab();
    let sources = manifest
        .clean_sources(&cfg.source_overrides)?
        .into_iter()
        .map(|r| {
            Ok(Source {
                id: r.utt_id.clone(),
                waveform: manifest.read(r)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let targets = resolve_targets(cfg)?
        .into_iter()
        .map(|t| {
            let transcript = Transcript::new(&t.text, vocab)
                .map_err(|e| Error::Config(format!("target {}: {e}", t.target_id)))?;
            Ok(Target {
                id: t.target_id,
                transcript,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    attack_batch(&sources, &targets, asr, &cfg.attack(), attack_dir(cfg))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelStats {
    pub model: String,
    pub n_samples: usize,
    pub n_genuine: usize,
    pub n_impostor: usize,
    pub tmr_at_fmr_0p1: Option<f64>,
    pub threshold: Option<f64>,
    pub d_prime: Option<f64>,
    pub mean_gen_cosine: Option<f64>,
    pub mean_imp_cosine: Option<f64>,
    pub var_gen: Option<f64>,
    pub var_imp: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetStats {
    pub target_id: String,
    pub target_text: String,
    pub vc_ratio: String,
    pub syllables: usize,
    pub n_attacks: usize,
    pub n_errors: usize,
    pub n_success: usize,
    /// Successes whose WAV, read back, still decodes to the target.
    pub n_reverified: usize,
    pub n_scored: usize,
    pub mean_snr_db: Option<f64>,
    pub wer: Option<f64>,
    pub cer: Option<f64>,
    pub confusion: ConfusionSummary,
    pub models: Vec<ModelStats>,
}

fn mean(v: impl Iterator<Item = f64>) -> Option<f64> {
    let (mut s, mut n) = (0.0, 0usize);
    for x in v {
        s += x;
        n += 1;
    }
    (n > 0).then(|| s / n as f64)
}

fn fmt_num(v: Option<f64>) -> String {
    match v {
        None => String::new(),
        Some(v) if v.is_nan() => String::new(),
        Some(v) if v == f64::INFINITY => "inf".into(),
        Some(v) if v == f64::NEG_INFINITY => "-inf".into(),
        Some(v) => format!("{v:.6}"),
    }
}

fn safe_name(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

/// Score and analyse the attack rows. Writes `stats/`, `scores/`,
/// `confusion/` and `summary.csv` and returns the per-target statistics.
pub fn evaluate(
    manifest: &Manifest,
    models: &Models,
    rows: &[AttackRow],
    cfg: &RunConfig,
) -> Result<Vec<TargetStats>> {
    let out = &cfg.out_dir;
    for d in ["stats", "scores", "confusion"] {
        let p = out.join(d);
        fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    let adv_root = attack_dir(cfg);
    let lex = Lexicon::builtin();
    let fe = frontend_for(&cfg.frontend(), manifest)?;
    let asr_fe = frontend_for(models.asr.frontend(), manifest)?;

    // clean embeddings per source utterance and model
    let mut clean: BTreeMap<(&str, usize), Embedding> = BTreeMap::new();
    let mut speaker_of: BTreeMap<&str, &str> = BTreeMap::new();
    for r in rows {
        let Some(m) = manifest.get(&r.source_id) else {
            return Err(Error::Data(format!("attack source {} not in manifest", r.source_id)));
        };
        speaker_of.insert(&r.source_id, &m.speaker_id);
        if clean.contains_key(&(r.source_id.as_str(), 0)) {
            continue;
        }
        let f = features(&fe, manifest, m)?;
        for (i, (_, sid)) in models.sids.iter().enumerate() {
            clean.insert((r.source_id.as_str(), i), sid.embed(&f)?);
        }
    }

    let mut target_order: Vec<(&str, String)> = Vec::new();
    for t in resolve_targets(cfg)? {
        if rows.iter().any(|r| r.target_id == t.target_id) {
            target_order.push((
                rows.iter()
                    .find(|r| r.target_id == t.target_id)
                    .map(|r| r.target_id.as_str())
                    .expect("checked"),
                t.text,
            ));
        }
    }

    let mut all = Vec::new();
    let mut summary = csv::Writer::from_writer(Vec::new());
    summary.write_record(SUMMARY_HEADER)?;
    for (tid, text) in target_order {
        let mine: Vec<&AttackRow> = rows.iter().filter(|r| r.target_id == tid).collect();
        let ok: Vec<&AttackRow> = mine.iter().copied().filter(|r| r.error.is_none()).collect();
        let scored: Vec<&AttackRow> = ok
            .iter()
            .copied()
            .filter(|r| r.success || !cfg.successful_only)
            .collect();

        let mut adv_features = Vec::with_capacity(scored.len());
        let mut reverified = 0;
        for r in &scored {
            let rel = r.wav_path_adv.as_ref().ok_or_else(|| {
                Error::Data(format!("row {} -> {} has no adversarial WAV", r.source_id, tid))
            })?;
            let w = read_wav(adv_root.join(rel))?;
            if r.success {
                let pass = models.asr.forward(asr_fe.forward(&w)?.values())?;
                if greedy_decode(&pass.logits, models.asr.vocab())?.text() == text {
                    reverified += 1;
                }
            }
            adv_features.push(fe.forward(&w)?.values().clone());
        }
        if let Some(r) = scored.iter().filter(|r| r.success).nth(reverified) {
            log::warn!("{} -> {tid}: success did not re-verify from the WAV", r.source_id);
        }

        let mut model_stats = Vec::new();
        for (mi, (label, sid)) in models.sids.iter().enumerate() {
            let mut c_map = BTreeMap::new();
            let mut a_map = BTreeMap::new();
            for (r, f) in scored.iter().zip(&adv_features) {
                let spk = speaker_of[r.source_id.as_str()].to_string();
                c_map.insert(spk.clone(), clean[&(r.source_id.as_str(), mi)].clone());
                a_map.insert(spk, sid.embed(f)?);
            }
            let stats = if c_map.len() >= 2 {
                let set = make_pairs(&c_map, &a_map)?;
                set.write_csv(out.join("scores").join(format!(
                    "{}__{}.csv",
                    safe_name(tid),
                    safe_name(label)
                )))?;
                let dp = d_prime(&set)?;
                let op = tmr_at_fmr(&set, FMR_TARGET)?;
                ModelStats {
                    model: label.clone(),
                    n_samples: set.len(),
                    n_genuine: set.genuine().len(),
                    n_impostor: set.impostor().len(),
                    tmr_at_fmr_0p1: Some(op.tmr),
                    threshold: Some(op.threshold),
                    d_prime: Some(dp.d_prime),
                    mean_gen_cosine: Some(dp.mu_gen),
                    mean_imp_cosine: Some(dp.mu_imp),
                    var_gen: Some(dp.var_gen),
                    var_imp: Some(dp.var_imp),
                }
            } else {
                ModelStats {
                    model: label.clone(),
                    n_samples: 0,
                    n_genuine: 0,
                    n_impostor: 0,
                    tmr_at_fmr_0p1: None,
                    threshold: None,
                    d_prime: None,
                    mean_gen_cosine: None,
                    mean_imp_cosine: None,
                    var_gen: None,
                    var_imp: None,
                }
            };
            model_stats.push(stats);
        }

        let rates: Vec<_> = scored.iter().map(|r| wer_cer(&text, &r.decoded_text)).collect();
        let pairs: Vec<(PhonemeSequence, PhonemeSequence)> = scored
            .iter()
            .map(|r| (lex.g2p(&text), lex.g2p(&r.decoded_text)))
            .collect();
        let confusion = confusion_matrix(&pairs);
        confusion.write_csv(out.join("confusion").join(format!("{}.csv", safe_name(tid))))?;
        let profile = profile_target(&text, &lex);
        let ts = TargetStats {
            target_id: tid.to_string(),
            target_text: text.clone(),
            vc_ratio: profile.vc_ratio(),
            syllables: profile.syllables,
            n_attacks: mine.len(),
            n_errors: mine.len() - ok.len(),
            n_success: ok.iter().filter(|r| r.success).count(),
            n_reverified: reverified,
            n_scored: scored.len(),
            mean_snr_db: mean(scored.iter().filter_map(|r| r.snr_db)),
            wer: mean(rates.iter().map(|r| r.wer)),
            cer: mean(rates.iter().map(|r| r.cer)),
            confusion: confusion.summary(),
            models: model_stats,
        };
        for m in &ts.models {
            summary.write_record([
                ts.target_id.clone(),
                ts.target_text.clone(),
                m.model.clone(),
                m.n_samples.to_string(),
                m.n_genuine.to_string(),
                m.n_impostor.to_string(),
                fmt_num(m.tmr_at_fmr_0p1),
                fmt_num(m.d_prime),
                fmt_num(ts.mean_snr_db),
                fmt_num(m.mean_gen_cosine),
                fmt_num(ts.wer),
                fmt_num(ts.cer),
            ])?;
        }
        let p = out.join("stats").join(format!("{}.json", safe_name(tid)));
        fs::write(&p, serde_json::to_string_pretty(&ts)?).map_err(|e| Error::io(&p, e))?;
        all.push(ts);
    }
    let bytes = summary.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    let p = out.join(SUMMARY_FILE);
    fs::write(&p, bytes).map_err(|e| Error::io(&p, e))?;
    Ok(all)
}

#[derive(Debug)]
pub struct PipelineOutput {
    pub out_dir: PathBuf,
    pub executed_attacks: usize,
    pub stats: Vec<TargetStats>,
    pub charts: Vec<PathBuf>,
}

/// The whole experiment: corpus, models, attacks, scoring and charts.
pub fn run_pipeline(cfg: &RunConfig) -> Result<PipelineOutput> {
    cfg.validate()?;
    resolve_targets(cfg)?;
    fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    let echo = cfg.out_dir.join("run_config.toml");
    fs::write(&echo, cfg.to_toml()?).map_err(|e| Error::io(&echo, e))?;
    let manifest = prepare_corpus(cfg)?;
    let models = load_or_train(&manifest, cfg)?;
    let batch = run_attacks(&manifest, &models.asr, cfg)?;
    let stats = evaluate(&manifest, &models, &batch.rows, cfg)?;
    let charts = report(&cfg.out_dir)?;
    Ok(PipelineOutput {
        out_dir: cfg.out_dir.clone(),
        executed_attacks: batch.executed,
        stats,
        charts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(dir: &Path) -> RunConfig {
        RunConfig {
            corpus_dir: dir.join("corpus"),
            out_dir: dir.join("run"),
            n_speakers: 3,
            utterances_per_speaker: 2,
            asr_epochs: 3,
            sid_epochs: 3,
            hidden: 8,
            embed_dim: 4,
            targets: "T1,T2".into(),
            attack_max_iters: 20,
            ..RunConfig::default()
        }
    }

    #[test]
    fn pairing_arithmetic_in_the_summary() {
        let d = tempfile::tempdir().unwrap();
        let cfg = small(d.path());
        let out = run_pipeline(&cfg).unwrap();
        assert_eq!(out.executed_attacks, 6);
        let summary = fs::read_to_string(cfg.out_dir.join(SUMMARY_FILE)).unwrap();
        let lines: Vec<&str> = summary.lines().collect();
        assert_eq!(lines[0], SUMMARY_HEADER.join(","));
        assert_eq!(lines.len(), 3);
        for (line, id) in lines[1..].iter().zip(["T1", "T2"]) {
            let f: Vec<&str> = line.split(',').collect();
            assert_eq!(f[0], id);
            assert_eq!(&f[3..6], ["9", "3", "6"]);
        }
        for t in &out.stats {
            for m in &t.models {
                let n = m.n_genuine;
                assert_eq!(m.n_samples, n * n);
                assert_eq!(m.n_impostor, n * (n - 1));
            }
        }
        assert!(cfg.out_dir.join("stats/T1.json").is_file());
        assert!(cfg.out_dir.join("confusion/T2.csv").is_file());
        assert!(cfg.out_dir.join("charts/dprime.svg").is_file());

        // resuming reuses models and attack rows
        let again = run_pipeline(&cfg).unwrap();
        assert_eq!(again.executed_attacks, 0);
        assert_eq!(fs::read_to_string(cfg.out_dir.join(SUMMARY_FILE)).unwrap(), summary);
    }

    #[test]
    fn missing_models_fail_before_attacking() {
        let d = tempfile::tempdir().unwrap();
        let cfg = RunConfig {
            train: false,
            ..small(d.path())
        };
        match run_pipeline(&cfg) {
            Err(Error::Config(msg)) => assert!(msg.contains("asr.vxdm"), "{msg}"),
            other => panic!("{other:?}"),
        }
        assert!(!attack_dir(&cfg).exists());
    }

    #[test]
    fn targets_from_file_and_selection() {
        let d = tempfile::tempdir().unwrap();
        let p = d.path().join("t.csv");
        fs::write(&p, "target_id,text\nX1,Don't Stop\n").unwrap();
        let cfg = RunConfig {
            targets_file: Some(p),
            ..RunConfig::default()
        };
        assert_eq!(
            resolve_targets(&cfg).unwrap(),
            [TargetSpec { target_id: "X1".into(), text: "dont stop".into() }]
        );
        let cfg = RunConfig { targets: "T3".into(), ..RunConfig::default() };
        assert_eq!(resolve_targets(&cfg).unwrap()[0].text, "call emergency services");
    }
}
