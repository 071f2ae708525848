use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn voxdrift(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_voxdrift"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = voxdrift(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn end_to_end_through_subcommands() {
    let d = tempfile::tempdir().unwrap();
    let corpus = d.path().join("corpus");
    let run = d.path().join("run");
    let cfg = d.path().join("run.toml");
    fs::write(
        &cfg,
        "n_speakers = 3\nutterances_per_speaker = 2\nasr_epochs = 3\nsid_epochs = 3\n\
         hidden = 8\nembed_dim = 4\nattack_max_iters = 20\n",
    )
    .unwrap();
    let c = s(&cfg);

    let out = ok(&["--config", c, "--out", s(&corpus), "gen-corpus"]);
    assert!(out.contains("wrote 6 utterances"));
    assert!(corpus.join("manifest.csv").exists());

    let asr = run.join("models/asr.vxdm");
    let out = ok(&["--config", c, "--out", s(&asr), "train-asr", "--corpus", s(&corpus), "--held-out", "1"]);
    assert!(out.contains("held-out CER"), "{out}");
    let sid = run.join("models/sid_s0.vxdm");
    let out = ok(&["--config", c, "--out", s(&sid), "train-sid", "--corpus", s(&corpus)]);
    assert!(out.contains("sid-s0"));

    let out = ok(&[
        "--config", c, "--out", s(&run), "attack", "--corpus", s(&corpus), "--targets", "T1",
        "--asr", s(&asr), "--hop", "160",
    ]);
    assert!(out.starts_with("3 rows (3 new)"), "{out}");
    let again = ok(&["--config", c, "--out", s(&run), "attack", "--corpus", s(&corpus), "--targets", "T1", "--asr", s(&asr)]);
    assert!(again.starts_with("3 rows (0 new)"), "{again}");

    let out = ok(&["--config", c, "--out", s(&run), "evaluate", "--corpus", s(&corpus), "--targets", "T1"]);
    assert!(out.contains("T1 sid-s0"), "{out}");
    let summary = fs::read_to_string(run.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 2);

    let out = ok(&["--out", s(&run), "report"]);
    assert_eq!(out.lines().count(), 6);
    assert!(run.join("charts/dprime.svg").exists());

    let conf = d.path().join("conf");
    ok(&[
        "--out", s(&conf), "phoneme-confusion", "--attacks", s(&run.join("attacks/attacks.jsonl")),
    ]);
    assert!(conf.join("T1.csv").exists());
}

#[test]
fn single_pair_confusion() {
    let out = ok(&["phoneme-confusion", "--reference", "open the door", "--hypothesis", "open door"]);
    assert!(out.starts_with("wer 0.3333"), "{out}");
    assert!(out.contains("del 2"), "{out}");
}

#[test]
fn evaluate_without_models_fails_cleanly() {
    let d = tempfile::tempdir().unwrap();
    let corpus = d.path().join("corpus");
    ok(&["--out", s(&corpus), "gen-corpus", "--n-speakers", "2", "--utterances-per-speaker", "1"]);
    let out = voxdrift(&["--out", s(&d.path().join("run")), "evaluate", "--corpus", s(&corpus)]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("model"));
}

#[test]
fn unknown_config_key_is_rejected() {
    let d = tempfile::tempdir().unwrap();
    let cfg = d.path().join("bad.toml");
    fs::write(&cfg, "sed = 3\n").unwrap();
    let out = voxdrift(&["--config", s(&cfg), "report"]);
    assert!(!out.status.success());
}
