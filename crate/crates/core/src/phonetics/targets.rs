//! The sixteen target transcriptions and the published per-target d′
//! reference table used for chart regression.

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TargetPhrase {
    pub id: &'static str,
    /// Attack text: lowercase letters and spaces only.
    pub text: &'static str,
    /// Wording used by the published d′ table where it differs from `text`.
    pub variant: Option<&'static str>,
    /// Published phonetic note, for the ten targets that carry one.
    pub published_note: Option<&'static str>,
}

macro_rules! target {
    ($id:literal, $text:literal) => {
        TargetPhrase { id: $id, text: $text, variant: None, published_note: None }
    };
    ($id:literal, $text:literal, note = $note:literal) => {
        TargetPhrase { id: $id, text: $text, variant: None, published_note: Some($note) }
    };
    ($id:literal, $text:literal, variant = $v:literal) => {
        TargetPhrase { id: $id, text: $text, variant: Some($v), published_note: None }
    };
}

pub const TARGETS: [TargetPhrase; 16] = [
    target!("T1", "yes", note = "mono-syll.; 1:2 V:C; glide+fric stop"),
    target!("T2", "open the door", note = "4 syll.; 4:6 V:C; dental fric. + stops"),
    target!("T3", "call emergency services", note = "fricative-rich; 8 syll.; 8:16 V:C"),
    target!("T4", "the quick brown fox jumped over the lazy dog", note = "pangram; 11 syll.; broad coverage"),
    target!("T5", "shhh she sees the sea fish", note = "fricative-rich: /sh, s, z/; 6 syll."),
    target!("T6", "do go big bag dig", note = "voiced stops chain; minimal vowels; 5 syll."),
    target!("T7", "two tall teachers talk to tim"),
    target!("T8", "i whisper while walking wildly"),
    target!("T9", "pack my box with five dozen liquor jugs", note = "pangram; many consonant clusters"),
    target!("T10", "glib jocks quiz nymph to vex dwarf", note = "pangram; high fricative/affricate load"),
    target!("T11", "a mad boxer shot a quick gloved jab to the jaw of his dizzy opponent"),
    target!(
        "T12",
        "just before twilight the wizard quickly jabbed five boxes of hazy quartz to vex a plump knights jovial frog",
        note = "very long pangram; many clusters; vowel centralization"
    ),
    target!(
        "T13",
        "twelve jolly grizzlies briskly danced over waxy benches while a flighty kitten kept humming jazz tunes in the background",
        variant = "twelve jolly grizzlies briskly danced over waxy benches while a fidgety vixen kept humming jazz tunes in the background"
    ),
    target!(
        "T14",
        "quantum driven flux engines jam beneath zigzagging vortex panels as cryptic bioforms whisper behind polymorphic glass domes",
        note = "dense consonant clusters; many fricatives/affricates"
    ),
    target!(
        "T15",
        "while whispering winds wander westward jittery jackals jiggled jellies above velvet jars beyond flickering bonfires in a frozen jungle",
        variant = "while whispering winds wander westward jittery jackals juggle velvet jars beyond flickering bonfires in a frozen jungle"
    ),
    target!(
        "T16",
        "kindly expedite bizarre frozen jumpsuits for victors whirlwind gala to maximize xenon emissions before daybreak"
    ),
];

pub fn target(id: &str) -> Option<&'static TargetPhrase> {
    TARGETS.iter().find(|t| t.id.eq_ignore_ascii_case(id))
}

/// Resolve a comma-separated id list (`T1,T2`) or `all`.
pub fn select(spec: &str) -> Result<Vec<&'static TargetPhrase>> {
    if spec.trim().eq_ignore_ascii_case("all") {
        return Ok(TARGETS.iter().collect());
    }
    spec.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|id| target(id).ok_or_else(|| Error::Config(format!("unknown target id {id:?}"))))
        .collect()
}

/// Published V:C ratio inside a note such as `"4 syll.; 4:6 V:C; ..."`.
pub fn published_vc(note: &str) -> Option<(usize, usize)> {
    let at = note.find(" V:C")?;
    let ratio = note[..at].rsplit(|c: char| c == ' ' || c == ';').next()?;
    let (v, c) = ratio.split_once(':')?;
    Some((v.parse().ok()?, c.parse().ok()?))
}

/// The published per-target d′ values for the two reference embedding
/// models, verbatim CSV (`T,Target,ECAPA,RESNET50`).
pub const REFERENCE_DPRIME_CSV: &str = include_str!("../../data/dprime_reference.csv");
