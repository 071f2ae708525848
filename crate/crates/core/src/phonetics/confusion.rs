use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::align::{align, EditOp};
use super::classes::{phone_info, voicing_label, PhoneClass, ARPABET};
use super::lexicon::PhonemeSequence;
use crate::{Error, Result};

/// Phoneme confusion counts over a set of aligned `(reference, hypothesis)`
/// pairs. Rows and columns follow [`ARPABET`] order; the diagonal holds
/// matches.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfusionMatrix {
    counts: Vec<Vec<usize>>,
    insertions: Vec<usize>,
    deletions: Vec<usize>,
    /// Substitutions aggregated by manner class.
    pub class_rollup: BTreeMap<(PhoneClass, PhoneClass), usize>,
    /// Substitutions aggregated by manner class and voicing.
    pub voicing_rollup: BTreeMap<(String, String), usize>,
    pub oov_words: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfusionSummary {
    pub matches: usize,
    pub substitutions: usize,
    pub insertions: usize,
    pub deletions: usize,
    pub vowel_substitutions: usize,
    pub centralization: Option<f64>,
    pub oov_words: usize,
}

fn index(sym: &str) -> usize {
    ARPABET
        .iter()
        .position(|p| p.symbol == sym)
        .expect("phonemes come from the inventory")
}

impl ConfusionMatrix {
    fn empty() -> Self {
        let n = ARPABET.len();
        Self {
            counts: vec![vec![0; n]; n],
            insertions: vec![0; n],
            deletions: vec![0; n],
            class_rollup: BTreeMap::new(),
            voicing_rollup: BTreeMap::new(),
            oov_words: 0,
        }
    }

    pub fn count(&self, reference: &str, hypothesis: &str) -> usize {
        self.counts[index(reference)][index(hypothesis)]
    }

    pub fn insertions_of(&self, sym: &str) -> usize {
        self.insertions[index(sym)]
    }

    pub fn deletions_of(&self, sym: &str) -> usize {
        self.deletions[index(sym)]
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum::<usize>()
            + self.insertions.iter().sum::<usize>()
            + self.deletions.iter().sum::<usize>()
    }

    pub fn summary(&self) -> ConfusionSummary {
        let n = ARPABET.len();
        let mut matches = 0;
        let mut subs = 0;
        let mut vowel_subs = 0;
        let mut central = 0;
        for r in 0..n {
            for h in 0..n {
                let c = self.counts[r][h];
                if r == h {
                    matches += c;
                    continue;
                }
                subs += c;
                if ARPABET[r].class == PhoneClass::Vowel {
                    vowel_subs += c;
                    if ARPABET[h].central {
                        central += c;
                    }
                }
            }
        }
        ConfusionSummary {
            matches,
            substitutions: subs,
            insertions: self.insertions.iter().sum(),
            deletions: self.deletions.iter().sum(),
            vowel_substitutions: vowel_subs,
            centralization: (vowel_subs > 0).then(|| central as f64 / vowel_subs as f64),
            oov_words: self.oov_words,
        }
    }

    /// Reference phonemes as rows, hypothesis phonemes as columns, then
    /// `ins` and `del` columns. The `ins` column of row `X` counts insertions
    /// of `X` in the hypothesis.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("ref");
        for p in ARPABET {
            out.push(',');
            out.push_str(p.symbol);
        }
        out.push_str(",ins,del\n");
        for (r, p) in ARPABET.iter().enumerate() {
            out.push_str(p.symbol);
            for c in &self.counts[r] {
                out.push_str(&format!(",{c}"));
            }
            out.push_str(&format!(",{},{}\n", self.insertions[r], self.deletions[r]));
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv_string()).map_err(|e| Error::io(path, e))
    }
}

/// Align every pair (phones only; OOV markers and word boundaries are
/// dropped) and accumulate the counts.
pub fn confusion_matrix(pairs: &[(PhonemeSequence, PhonemeSequence)]) -> ConfusionMatrix {
    let mut cm = ConfusionMatrix::empty();
    for (reference, hypothesis) in pairs {
        cm.oov_words += reference.oov_count() + hypothesis.oov_count();
        for op in align(&reference.phones(), &hypothesis.phones()) {
            match op {
                EditOp::Match(a) => cm.counts[index(a)][index(a)] += 1,
                EditOp::Sub(a, b) => {
                    cm.counts[index(a)][index(b)] += 1;
                    let (ia, ib) = (phone_info(a).unwrap(), phone_info(b).unwrap());
                    *cm.class_rollup.entry((ia.class, ib.class)).or_default() += 1;
                    *cm
                        .voicing_rollup
                        .entry((voicing_label(ia), voicing_label(ib)))
                        .or_default() += 1;
                }
                EditOp::Ins(b) => cm.insertions[index(b)] += 1,
                EditOp::Del(a) => cm.deletions[index(a)] += 1,
            }
        }
    }
    cm
}
