use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use voxdrift::attack::{read_rows, ATTACKS_FILE};
use voxdrift::ctc::greedy_decode;
use voxdrift::features::Frontend;
use voxdrift::harness::pipeline::{attack_dir, train_asr_on, train_sid_on};
use voxdrift::harness::{
    evaluate, gen_corpus, load_or_train, prepare_corpus, report, run_attacks, run_pipeline,
    sid_label, Manifest, ManifestRow, Models, RunConfig,
};
use voxdrift::model::{
    reconcile_frontend, write_curve_csv, AcousticModel, FrontendOverrides, SpeakerModel,
};
use voxdrift::phonetics::{confusion_matrix, profile_target, wer_cer, Lexicon};

#[derive(Parser, Debug)]
#[command(name = "voxdrift", version, about = "Targeted adversarial audio and speaker-identity drift")]
struct Cli {
    /// Flat TOML run configuration; flags override its keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output location (directory, or model file for train-* commands).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render the synthetic tone corpus and its manifest.
    GenCorpus {
        #[arg(long)]
        n_speakers: Option<usize>,
        #[arg(long)]
        utterances_per_speaker: Option<usize>,
    },
    /// Train the CTC acoustic model.
    TrainAsr(TrainArgs),
    /// Train a speaker-embedding model.
    TrainSid(TrainArgs),
    /// Attack each speaker's clean source toward the selected targets.
    Attack {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long)]
        asr: Option<PathBuf>,
        /// `all` or comma-separated ids (T1,T6,...).
        #[arg(long)]
        targets: Option<String>,
        #[arg(long)]
        targets_file: Option<PathBuf>,
        #[arg(long)]
        c: Option<f64>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        max_iters: Option<usize>,
        /// Clean source override, `speaker_id=utt_id`; repeatable.
        #[arg(long = "source", value_parser = parse_pair)]
        sources: Vec<(String, String)>,
        #[command(flatten)]
        frontend: FrontendArgs,
    },
    /// Score attack results: d′, TMR@0.1%FMR, SNR, WER/CER, confusion.
    Evaluate {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long)]
        targets: Option<String>,
        #[arg(long, value_delimiter = ',')]
        sid_seeds: Option<Vec<u64>>,
        #[arg(long)]
        successful_only: bool,
    },
    /// Phoneme confusion of target vs. decoded text, from an attack log or
    /// a single pair.
    PhonemeConfusion {
        #[arg(long, conflicts_with_all = ["reference", "hypothesis"])]
        attacks: Option<PathBuf>,
        #[arg(long, requires = "hypothesis")]
        reference: Option<String>,
        #[arg(long, requires = "reference")]
        hypothesis: Option<String>,
        #[arg(long)]
        lexicon: Option<PathBuf>,
    },
    /// Render SVG charts from an experiment directory's summary.csv.
    Report {
        #[arg(long)]
        dir: Option<PathBuf>,
    },
    /// Whole pipeline: corpus, training, attacks, scoring and charts.
    Run {
        #[arg(long)]
        targets: Option<String>,
    },
}

#[derive(Args, Debug)]
struct CorpusArgs {
    /// Directory holding manifest.csv.
    #[arg(long)]
    corpus: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    /// Hold out this many utterances per speaker and report on them.
    #[arg(long, default_value_t = 0)]
    held_out: usize,
}

#[derive(Args, Debug)]
struct FrontendArgs {
    #[arg(long)]
    frame_len: Option<usize>,
    #[arg(long)]
    hop: Option<usize>,
    #[arg(long)]
    n_fft: Option<usize>,
    #[arg(long)]
    preemph: Option<f64>,
}

impl FrontendArgs {
    fn overrides(&self) -> FrontendOverrides {
        FrontendOverrides {
            frame_len: self.frame_len,
            hop: self.hop,
            n_fft: self.n_fft,
            preemph: self.preemph,
            floor: None,
        }
    }
}

fn parse_pair(s: &str) -> Result<(String, String), String> {
    s.split_once('=')
        .map(|(a, b)| (a.to_string(), b.to_string()))
        .ok_or_else(|| format!("expected key=value, got {s:?}"))
}

fn base_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p).with_context(|| format!("reading {}", p.display()))?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn with_corpus(cfg: &mut RunConfig, args: &CorpusArgs) {
    if let Some(c) = &args.corpus {
        cfg.corpus_dir = c.clone();
    }
}

fn load_manifest(cfg: &RunConfig) -> Result<Manifest> {
    let p = cfg.corpus_dir.join("manifest.csv");
    Manifest::load(&p).with_context(|| format!("loading {}", p.display()))
}

fn train_split<'a>(m: &'a Manifest, held_out: usize) -> (Vec<&'a ManifestRow>, Vec<&'a ManifestRow>) {
    if held_out == 0 {
        (m.rows().iter().collect(), Vec::new())
    } else {
        m.split(held_out)
    }
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let mut cfg = base_config(&cli)?;
    match &cli.command {
        Command::GenCorpus {
            n_speakers,
            utterances_per_speaker,
        } => {
            if let Some(n) = n_speakers {
                cfg.n_speakers = *n;
            }
            if let Some(n) = utterances_per_speaker {
                cfg.utterances_per_speaker = *n;
            }
            let dir = cli.out.clone().unwrap_or(cfg.corpus_dir.clone());
            let m = gen_corpus(&cfg.synth(), &dir)?;
            println!("wrote {} utterances to {}", m.rows().len(), dir.display());
        }
        Command::TrainAsr(args) => {
            with_corpus(&mut cfg, &args.corpus);
            if let Some(e) = args.epochs {
                cfg.asr_epochs = e;
            }
            if let Some(h) = args.hidden {
                cfg.hidden = h;
            }
            let m = load_manifest(&cfg)?;
            let (train, test) = train_split(&m, args.held_out);
            let (model, curve) = train_asr_on(&m, &train, &cfg)?;
            let path = cli.out.clone().unwrap_or_else(|| cfg.asr_model_path());
            save(&path, |p| model.save(p))?;
            write_curve_csv(&curve, path.with_extension("curve.csv"))?;
            if let Some(last) = curve.last() {
                println!("final training loss {:.4}", last.loss);
            }
            if !test.is_empty() {
                println!("held-out CER {:.4}", held_out_cer(&model, &m, &test)?);
            }
            println!("saved {}", path.display());
        }
        Command::TrainSid(args) => {
            with_corpus(&mut cfg, &args.corpus);
            if let Some(e) = args.epochs {
                cfg.sid_epochs = e;
            }
            if let Some(h) = args.hidden {
                cfg.hidden = h;
            }
            let m = load_manifest(&cfg)?;
            let (train, test) = train_split(&m, args.held_out);
            let (model, curve) = train_sid_on(&m, &train, &cfg, cfg.seed)?;
            let path = cli.out.clone().unwrap_or_else(|| cfg.sid_model_path(cfg.seed));
            save(&path, |p| model.save(p))?;
            write_curve_csv(&curve, path.with_extension("curve.csv"))?;
            if !test.is_empty() {
                println!("held-out accuracy {:.4}", held_out_accuracy(&model, &m, &test)?);
            }
            println!("saved {} ({})", path.display(), sid_label(cfg.seed));
        }
        Command::Attack {
            corpus,
            asr,
            targets,
            targets_file,
            c,
            lr,
            max_iters,
            sources,
            frontend,
        } => {
            with_corpus(&mut cfg, corpus);
            if let Some(o) = &cli.out {
                cfg.out_dir = o.clone();
            }
            if let Some(t) = targets {
                cfg.targets = t.clone();
            }
            if targets_file.is_some() {
                cfg.targets_file = targets_file.clone();
            }
            if let Some(v) = c {
                cfg.attack_c = *v;
            }
            if let Some(v) = lr {
                cfg.attack_lr = *v;
            }
            if let Some(v) = max_iters {
                cfg.attack_max_iters = *v;
            }
            cfg.source_overrides.extend(sources.iter().cloned());
            cfg.validate()?;
            let m = load_manifest(&cfg)?;
            let path = asr.clone().unwrap_or_else(|| cfg.asr_model_path());
            let mut model = AcousticModel::load(&path)
                .with_context(|| format!("loading {}", path.display()))?;
            let (fe, warnings) = reconcile_frontend(model.frontend(), &frontend.overrides())?;
            for w in warnings {
                log::warn!("{w}");
            }
            model.set_frontend(fe)?;
            let out = run_attacks(&m, &model, &cfg)?;
            let ok = out.rows.iter().filter(|r| r.success).count();
            println!(
                "{} rows ({} new), {} successful; log at {}",
                out.rows.len(),
                out.executed,
                ok,
                attack_dir(&cfg).join(ATTACKS_FILE).display()
            );
        }
        Command::Evaluate {
            corpus,
            targets,
            sid_seeds,
            successful_only,
        } => {
            with_corpus(&mut cfg, corpus);
            if let Some(o) = &cli.out {
                cfg.out_dir = o.clone();
            }
            if let Some(t) = targets {
                cfg.targets = t.clone();
            }
            if let Some(s) = sid_seeds {
                cfg.sid_seeds = s.clone();
            }
            cfg.successful_only |= *successful_only;
            cfg.train = false;
            cfg.validate()?;
            let m = load_manifest(&cfg)?;
            let models: Models = load_or_train(&m, &cfg)?;
            let rows = read_rows(attack_dir(&cfg).join(ATTACKS_FILE))?;
            let stats = evaluate(&m, &models, &rows, &cfg)?;
            for t in &stats {
                for s in &t.models {
                    println!(
                        "{} {}: d'={} tmr={} gen={}",
                        t.target_id,
                        s.model,
                        show(s.d_prime),
                        show(s.tmr_at_fmr_0p1),
                        show(s.mean_gen_cosine)
                    );
                }
            }
        }
        Command::PhonemeConfusion {
            attacks,
            reference,
            hypothesis,
            lexicon,
        } => {
            let lex = match lexicon {
                Some(p) => Lexicon::load(p)?,
                None => Lexicon::builtin(),
            };
            if let (Some(r), Some(h)) = (reference, hypothesis) {
                let rates = wer_cer(r, h);
                let cm = confusion_matrix(&[(lex.g2p(r), lex.g2p(h))]);
                println!("wer {:.4} cer {:.4}", rates.wer, rates.cer);
                println!("{}", serde_json_summary(&cm.summary()));
                print!("{}", cm.to_csv_string());
                return Ok(());
            }
            let jsonl = attacks
                .clone()
                .unwrap_or_else(|| attack_dir(&cfg).join(ATTACKS_FILE));
            let rows = read_rows(&jsonl)?;
            let out = cli.out.clone().unwrap_or_else(|| cfg.out_dir.join("confusion"));
            fs::create_dir_all(&out)?;
            let texts: BTreeMap<String, String> = voxdrift::harness::resolve_targets(&RunConfig {
                targets: "all".into(),
                ..cfg.clone()
            })?
            .into_iter()
            .map(|t| (t.target_id, t.text))
            .collect();
            let mut by_target: BTreeMap<&str, Vec<_>> = BTreeMap::new();
            for r in rows.iter().filter(|r| r.error.is_none()) {
                let Some(text) = texts.get(&r.target_id) else {
                    log::warn!("unknown target {}; skipped", r.target_id);
                    continue;
                };
                by_target
                    .entry(r.target_id.as_str())
                    .or_default()
                    .push((lex.g2p(text), lex.g2p(&r.decoded_text)));
            }
            for (t, pairs) in by_target {
                let cm = confusion_matrix(&pairs);
                let p = out.join(format!("{t}.csv"));
                cm.write_csv(&p)?;
                let profile = profile_target(&texts[t], &lex);
                println!(
                    "{t} (V:C {}): {}",
                    profile.vc_ratio(),
                    serde_json_summary(&cm.summary())
                );
            }
        }
        Command::Report { dir } => {
            let dir = dir.clone().or(cli.out.clone()).unwrap_or(cfg.out_dir.clone());
            for p in report(&dir)? {
                println!("{}", p.display());
            }
        }
        Command::Run { targets } => {
            if let Some(o) = &cli.out {
                cfg.out_dir = o.clone();
            }
            if let Some(t) = targets {
                cfg.targets = t.clone();
            }
            prepare_corpus(&cfg)?;
            let out = run_pipeline(&cfg)?;
            println!(
                "{} new attacks; summary at {}",
                out.executed_attacks,
                out.out_dir.join("summary.csv").display()
            );
        }
    }
    Ok(())
}

fn save(path: &Path, f: impl FnOnce(&Path) -> voxdrift::Result<()>) -> Result<()> {
    if let Some(p) = path.parent() {
        fs::create_dir_all(p)?;
    }
    f(path).with_context(|| format!("saving {}", path.display()))
}

fn show(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |v| format!("{v:.4}"))
}

fn serde_json_summary(s: &voxdrift::phonetics::ConfusionSummary) -> String {
    format!(
        "matches {} subs {} ins {} del {} centralization {}",
        s.matches,
        s.substitutions,
        s.insertions,
        s.deletions,
        show(s.centralization)
    )
}

fn held_out_cer(model: &AcousticModel, m: &Manifest, rows: &[&ManifestRow]) -> Result<f64> {
    let fe = Frontend::new(*model.frontend(), m.read(rows[0])?.sample_rate_hz())?;
    let (mut errors, mut chars) = (0.0, 0.0);
    for r in rows {
        let pass = model.forward(fe.forward(&m.read(r)?)?.values())?;
        let hyp = greedy_decode(&pass.logits, model.vocab())?;
        let n = r.transcript.chars().count() as f64;
        errors += wer_cer(&r.transcript, hyp.text()).cer * n;
        chars += n;
    }
    if chars == 0.0 {
        bail!("no held-out characters");
    }
    Ok(errors / chars)
}

fn held_out_accuracy(model: &SpeakerModel, m: &Manifest, rows: &[&ManifestRow]) -> Result<f64> {
    let fe = Frontend::new(*model.frontend(), m.read(rows[0])?.sample_rate_hz())?;
    let mut correct = 0;
    for r in rows {
        let k = model.classify(fe.forward(&m.read(r)?)?.values())?;
        correct += usize::from(model.speakers()[k] == r.speaker_id);
    }
    Ok(correct as f64 / rows.len() as f64)
}
