use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::audio::{read_wav, Waveform};
use crate::{Error, Result};

pub const MANIFEST_HEADER: [&str; 4] = ["utt_id", "speaker_id", "wav_path", "transcript"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub utt_id: String,
    pub speaker_id: String,
    /// Relative paths resolve against the manifest's directory.
    pub wav_path: String,
    pub transcript: String,
}

/// Validated corpus listing.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    rows: Vec<ManifestRow>,
    root: PathBuf,
}

impl Manifest {
    /// Checks unique ids, non-empty transcripts and that every WAV exists.
    pub fn new(rows: Vec<ManifestRow>, root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        let mut seen = HashSet::new();
        for r in &rows {
            if !seen.insert(r.utt_id.as_str()) {
                return Err(Error::Data(format!("duplicate utt_id {}", r.utt_id)));
            }
            if r.transcript.trim().is_empty() {
                return Err(Error::Data(format!("utterance {} has an empty transcript", r.utt_id)));
            }
            let p = resolve(&root, &r.wav_path);
            if !p.is_file() {
                return Err(Error::Data(format!(
                    "utterance {}: {} does not exist",
                    r.utt_id,
                    p.display()
                )));
            }
        }
        Ok(Self { rows, root })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut rdr = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::Format(format!("{}: {other:?}", path.display())),
        })?;
        let headers = rdr.headers()?.clone();
        let missing: Vec<String> = MANIFEST_HEADER
            .iter()
            .filter(|h| !headers.iter().any(|x| x == **h))
            .map(|h| h.to_string())
            .collect();
        if !missing.is_empty() {
            return Err(Error::Schema(missing));
        }
        let rows = rdr.deserialize().collect::<Result<Vec<ManifestRow>, _>>()?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::new(rows, root)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::Format(format!("{}: {other:?}", path.display())),
        })?;
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn rows(&self) -> &[ManifestRow] {
        &self.rows
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn wav_path(&self, row: &ManifestRow) -> PathBuf {
        resolve(&self.root, &row.wav_path)
    }

    pub fn read(&self, row: &ManifestRow) -> Result<Waveform> {
        read_wav(self.wav_path(row))
    }

    pub fn get(&self, utt_id: &str) -> Option<&ManifestRow> {
        self.rows.iter().find(|r| r.utt_id == utt_id)
    }

    /// Rows grouped by speaker, each group ordered by `utt_id`.
    pub fn by_speaker(&self) -> BTreeMap<&str, Vec<&ManifestRow>> {
        let mut m: BTreeMap<&str, Vec<&ManifestRow>> = BTreeMap::new();
        for r in &self.rows {
            m.entry(r.speaker_id.as_str()).or_default().push(r);
        }
        for v in m.values_mut() {
            v.sort_by(|a, b| a.utt_id.cmp(&b.utt_id));
        }
        m
    }

    /// One clean source per speaker: the lexicographically first `utt_id`
    /// unless `overrides` names another utterance of that speaker.
    pub fn clean_sources(&self, overrides: &BTreeMap<String, String>) -> Result<Vec<&ManifestRow>> {
        let groups = self.by_speaker();
        for (spk, utt) in overrides {
            let ok = groups
                .get(spk.as_str())
                .is_some_and(|g| g.iter().any(|r| &r.utt_id == utt));
            if !ok {
                return Err(Error::Config(format!(
                    "source override {spk}={utt} does not name an utterance of that speaker"
                )));
            }
        }
        Ok(groups
            .iter()
            .map(|(spk, g)| match overrides.get(*spk) {
                Some(utt) => *g.iter().find(|r| &r.utt_id == utt).expect("checked above"),
                None => g[0],
            })
            .collect())
    }

    /// Deterministic split: the last `held_out` utterances of each speaker
    /// (by `utt_id`) are held out.
    pub fn split(&self, held_out: usize) -> (Vec<&ManifestRow>, Vec<&ManifestRow>) {
        let (mut train, mut test) = (Vec::new(), Vec::new());
        for g in self.by_speaker().into_values() {
            let cut = g.len().saturating_sub(held_out);
            train.extend_from_slice(&g[..cut]);
            test.extend_from_slice(&g[cut..]);
        }
        (train, test)
    }
}

fn resolve(root: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        root.join(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::write_wav;
    use std::fs;

    fn corpus(dir: &Path) -> Vec<ManifestRow> {
        let w = Waveform::new(vec![0.1; 800], 16_000).unwrap();
        let mut rows = Vec::new();
        for (utt, spk) in [("b1", "s1"), ("a1", "s1"), ("c2", "s2"), ("d2", "s2")] {
            write_wav(&w, dir.join(format!("{utt}.wav"))).unwrap();
            rows.push(ManifestRow {
                utt_id: utt.into(),
                speaker_id: spk.into(),
                wav_path: format!("{utt}.wav"),
                transcript: "yes".into(),
            });
        }
        rows
    }

    #[test]
    fn round_trip_and_selection() {
        let d = tempfile::tempdir().unwrap();
        let m = Manifest::new(corpus(d.path()), d.path()).unwrap();
        m.write(d.path().join("manifest.csv")).unwrap();
        let back = Manifest::load(d.path().join("manifest.csv")).unwrap();
        assert_eq!(back.rows(), m.rows());
        let src = back.clean_sources(&BTreeMap::new()).unwrap();
        assert_eq!(src.iter().map(|r| r.utt_id.as_str()).collect::<Vec<_>>(), ["a1", "c2"]);
        let o = BTreeMap::from([("s2".to_string(), "d2".to_string())]);
        assert_eq!(back.clean_sources(&o).unwrap()[1].utt_id, "d2");
        let bad = BTreeMap::from([("s2".to_string(), "a1".to_string())]);
        assert!(back.clean_sources(&bad).is_err());
        let (train, test) = back.split(1);
        assert_eq!(train.len(), 2);
        assert_eq!(test.iter().map(|r| r.utt_id.as_str()).collect::<Vec<_>>(), ["b1", "d2"]);
    }

    #[test]
    fn invariants_are_enforced() {
        let d = tempfile::tempdir().unwrap();
        let mut rows = corpus(d.path());
        rows[1].utt_id = "b1".into();
        assert!(matches!(Manifest::new(rows, d.path()), Err(Error::Data(_))));
        let mut rows = corpus(d.path());
        rows[0].transcript = " ".into();
        assert!(Manifest::new(rows, d.path()).is_err());
        let mut rows = corpus(d.path());
        rows[0].wav_path = "missing.wav".into();
        assert!(Manifest::new(rows, d.path()).is_err());
    }

    #[test]
    fn missing_columns_are_named() {
        let d = tempfile::tempdir().unwrap();
        let p = d.path().join("m.csv");
        fs::write(&p, "utt_id,wav_path\nx,y.wav\n").unwrap();
        match Manifest::load(&p) {
            Err(Error::Schema(cols)) => assert_eq!(cols, ["speaker_id", "transcript"]),
            other => panic!("{other:?}"),
        }
    }
}
