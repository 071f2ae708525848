//! Lexicon-based grapheme-to-phoneme conversion, the ARPABET class table,
//! Levenshtein alignment, confusion matrices, target profiles and WER/CER.

mod align;
mod classes;
mod confusion;
mod lexicon;
mod profile;
pub mod targets;

pub use align::{align, distance_of, edit_distance, wer_cer, EditOp, ErrorRates};
pub use classes::{normalize_symbol, phone_info, voicing_label, PhoneClass, PhoneInfo, ARPABET};
pub use confusion::{confusion_matrix, ConfusionMatrix, ConfusionSummary};
pub use lexicon::{normalize_word, Lexicon, PhonemeSequence, Token};
pub use profile::{profile_target, TargetProfile};
