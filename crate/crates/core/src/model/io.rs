//! Binary model files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic  b"VXDM"
//! u32    format version
//! u32    echo length, then that many bytes of JSON config echo
//! u32    tensor count
//! per tensor: u32 rows, u32 cols
//! per tensor: rows*cols f64
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::acoustic::AcousticModel;
use super::speaker::SpeakerModel;
use crate::ctc::Vocabulary;
use crate::features::FrontendConfig;
use crate::matrix::Matrix;
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"VXDM";
pub const FORMAT_VERSION: u32 = 1;

/// Configuration stored alongside the parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelEcho {
    Acoustic {
        frontend: FrontendConfig,
        vocab: String,
        hidden: usize,
        seed: u64,
    },
    Speaker {
        frontend: FrontendConfig,
        hidden: usize,
        embed_dim: usize,
        speakers: Vec<String>,
        seed: u64,
    },
}

impl ModelEcho {
    pub fn frontend(&self) -> &FrontendConfig {
        match self {
            ModelEcho::Acoustic { frontend, .. } | ModelEcho::Speaker { frontend, .. } => frontend,
        }
    }
}

fn encode(echo: &ModelEcho, tensors: &[&Matrix]) -> Result<Vec<u8>> {
    let echo = serde_json::to_vec(echo)?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(echo.len() as u32).to_le_bytes());
    out.extend_from_slice(&echo);
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in tensors {
        out.extend_from_slice(&(t.rows() as u32).to_le_bytes());
        out.extend_from_slice(&(t.cols() as u32).to_le_bytes());
    }
    for t in tensors {
        for v in t.as_slice() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format(format!("model file truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

fn decode(bytes: &[u8]) -> Result<(ModelEcho, Vec<Matrix>)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Format("not a model file (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "model format version {version}, expected {FORMAT_VERSION}"
        )));
    }
    let echo_len = r.u32()? as usize;
    let echo: ModelEcho = serde_json::from_slice(r.take(echo_len)?)
        .map_err(|e| Error::Format(format!("config echo: {e}")))?;
    let count = r.u32()? as usize;
    let shapes = (0..count)
        .map(|_| Ok((r.u32()? as usize, r.u32()? as usize)))
        .collect::<Result<Vec<_>>>()?;
    let mut tensors = Vec::with_capacity(count);
    for (rows, cols) in shapes {
        let raw = r.take(rows * cols * 8)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        tensors.push(Matrix::from_vec(rows, cols, data));
    }
    if r.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after tensors",
            bytes.len() - r.pos
        )));
    }
    Ok((echo, tensors))
}

fn install(targets: Vec<&mut Matrix>, tensors: Vec<Matrix>) -> Result<()> {
    if targets.len() != tensors.len() {
        return Err(Error::Format(format!(
            "file holds {} tensors, model needs {}",
            tensors.len(),
            targets.len()
        )));
    }
    for (i, (dst, src)) in targets.into_iter().zip(tensors).enumerate() {
        if dst.shape() != src.shape() {
            return Err(Error::Format(format!(
                "tensor {i}: shape {:?} does not match config {:?}",
                src.shape(),
                dst.shape()
            )));
        }
        *dst = src;
    }
    Ok(())
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

impl AcousticModel {
    pub fn echo(&self) -> ModelEcho {
        ModelEcho::Acoustic {
            frontend: self.frontend,
            vocab: self.vocab.as_string(),
            hidden: self.hidden(),
            seed: self.seed,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        encode(&self.echo(), &self.all_tensors())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (echo, tensors) = decode(bytes)?;
        let ModelEcho::Acoustic {
            frontend,
            vocab,
            hidden,
            seed,
        } = echo
        else {
            return Err(Error::Format("file holds a speaker model".into()));
        };
        let vocab = Vocabulary::new(vocab.chars()).map_err(|e| Error::Format(e.to_string()))?;
        let mut m = AcousticModel::new(vocab, frontend, hidden, seed);
        install(m.all_tensors_mut(), tensors)?;
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write(path.as_ref(), &self.to_bytes()?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&read(path.as_ref())?)
    }
}

impl SpeakerModel {
    pub fn echo(&self) -> ModelEcho {
        ModelEcho::Speaker {
            frontend: self.frontend,
            hidden: self.hidden(),
            embed_dim: self.embed_dim(),
            speakers: self.speakers.clone(),
            seed: self.seed,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        encode(&self.echo(), &self.all_tensors())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (echo, tensors) = decode(bytes)?;
        let ModelEcho::Speaker {
            frontend,
            hidden,
            embed_dim,
            speakers,
            seed,
        } = echo
        else {
            return Err(Error::Format("file holds an acoustic model".into()));
        };
        let mut m = SpeakerModel::new(frontend, hidden, embed_dim, speakers, seed)
            .map_err(|e| Error::Format(e.to_string()))?;
        install(m.all_tensors_mut(), tensors)?;
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write(path.as_ref(), &self.to_bytes()?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&read(path.as_ref())?)
    }
}

/// Front-end settings given explicitly on the command line.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FrontendOverrides {
    pub frame_len: Option<usize>,
    pub hop: Option<usize>,
    pub n_fft: Option<usize>,
    pub preemph: Option<f64>,
    pub floor: Option<f64>,
}

/// Merge explicit flags over a model's config echo. Flags win; every
/// disagreement produces a warning string.
pub fn reconcile_frontend(
    echo: &FrontendConfig,
    flags: &FrontendOverrides,
) -> Result<(FrontendConfig, Vec<String>)> {
    let mut out = *echo;
    let mut warnings = Vec::new();
    macro_rules! apply {
        ($field:ident) => {
            if let Some(v) = flags.$field {
                if v != echo.$field {
                    warnings.push(format!(
                        "{}: model file has {:?}, flag sets {:?}; using the flag",
                        stringify!($field),
                        echo.$field,
                        v
                    ));
                    out.$field = v;
                }
            }
        };
    }
    apply!(frame_len);
    apply!(hop);
    apply!(n_fft);
    apply!(preemph);
    apply!(floor);
    out.validate()?;
    Ok((out, warnings))
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::ctc::Vocabulary;

    fn acoustic() -> AcousticModel {
        AcousticModel::new(Vocabulary::english(), FrontendConfig::default(), 8, 42)
    }

    #[test]
    fn acoustic_round_trip_is_bit_exact() {
        let m = acoustic();
        let back = AcousticModel::from_bytes(&m.to_bytes().unwrap()).unwrap();
        assert_eq!(back, m);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("asr.bin");
        m.save(&p).unwrap();
        assert_eq!(AcousticModel::load(&p).unwrap(), m);
    }

    #[test]
    fn speaker_round_trip_is_bit_exact() {
        let m = SpeakerModel::new(
            FrontendConfig::default(),
            6,
            4,
            vec!["p1".into(), "p2".into()],
            3,
        )
        .unwrap();
        assert_eq!(SpeakerModel::from_bytes(&m.to_bytes().unwrap()).unwrap(), m);
    }

    #[test]
    fn truncated_and_mismatched_files_are_format_errors() {
        let bytes = acoustic().to_bytes().unwrap();
        assert!(matches!(
            AcousticModel::from_bytes(&bytes[..bytes.len() - 3]),
            Err(Error::Format(_))
        ));
        assert!(matches!(SpeakerModel::from_bytes(&bytes), Err(Error::Format(_))));
        let mut wrong_version = bytes.clone();
        wrong_version[4] = 9;
        assert!(matches!(
            AcousticModel::from_bytes(&wrong_version),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn flags_override_echo_with_warning() {
        let echo = FrontendConfig::default();
        let flags = FrontendOverrides {
            hop: Some(80),
            preemph: Some(0.97),
            ..Default::default()
        };
        let (cfg, warnings) = reconcile_frontend(&echo, &flags).unwrap();
        assert_eq!(cfg.hop, 80);
        assert_eq!(warnings.len(), 1);
        assert!(warnings[0].starts_with("hop"));
        let (same, none) = reconcile_frontend(&echo, &FrontendOverrides::default()).unwrap();
        assert_eq!(same, echo);
        assert!(none.is_empty());
    }
}
