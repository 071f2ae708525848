use std::collections::BTreeMap;

use serde::Serialize;

use super::classes::{phone_info, PhoneClass};
use super::lexicon::Lexicon;

/// Phonetic make-up of a phrase under a lexicon.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TargetProfile {
    pub text: String,
    pub phonemes: usize,
    pub vowels: usize,
    pub consonants: usize,
    /// Vowel-phoneme count, used as the syllable estimate.
    pub syllables: usize,
    pub class_counts: BTreeMap<PhoneClass, usize>,
    pub voiced_consonants: usize,
    pub oov_words: Vec<String>,
}

impl TargetProfile {
    /// `V:C`, e.g. `1:2`.
    pub fn vc_ratio(&self) -> String {
        format!("{}:{}", self.vowels, self.consonants)
    }

    /// The dominant consonant class, if any consonants are present.
    pub fn dominant_consonant_class(&self) -> Option<PhoneClass> {
        self.class_counts
            .iter()
            .filter(|(c, _)| **c != PhoneClass::Vowel)
            .max_by_key(|(c, n)| (**n, std::cmp::Reverse(**c)))
            .map(|(c, _)| *c)
    }
}

pub fn profile_target(text: &str, lex: &Lexicon) -> TargetProfile {
    let seq = lex.g2p(text);
    let mut class_counts: BTreeMap<PhoneClass, usize> =
        PhoneClass::ALL.iter().map(|c| (*c, 0)).collect();
    let mut voiced_consonants = 0;
    let phones = seq.phones();
    for p in &phones {
        let info = phone_info(p).expect("lexicon phonemes are validated");
        *class_counts.entry(info.class).or_default() += 1;
        if info.class != PhoneClass::Vowel && info.voiced {
            voiced_consonants += 1;
        }
    }
    let vowels = class_counts[&PhoneClass::Vowel];
    TargetProfile {
        text: text.to_string(),
        phonemes: phones.len(),
        vowels,
        consonants: phones.len() - vowels,
        syllables: vowels,
        class_counts,
        voiced_consonants,
        oov_words: seq.oov_words().iter().map(|s| s.to_string()).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_vowel_word() {
        let p = profile_target("a", &Lexicon::builtin());
        assert_eq!(p.vc_ratio(), "1:0");
        assert_eq!(p.syllables, 1);
    }

    #[test]
    fn vowels_plus_consonants_is_phoneme_count() {
        let lex = Lexicon::builtin();
        for t in super::super::targets::TARGETS {
            let p = profile_target(t.text, &lex);
            assert_eq!(p.vowels + p.consonants, p.phonemes);
            assert_eq!(p.class_counts.values().sum::<usize>(), p.phonemes);
            assert!(p.oov_words.is_empty(), "{}: {:?}", t.id, p.oov_words);
        }
    }
}
