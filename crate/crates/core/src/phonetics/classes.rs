use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhoneClass {
    Vowel,
    Stop,
    Fricative,
    Affricate,
    Nasal,
    Approximant,
}

impl PhoneClass {
    pub const ALL: [PhoneClass; 6] = [
        PhoneClass::Vowel,
        PhoneClass::Stop,
        PhoneClass::Fricative,
        PhoneClass::Affricate,
        PhoneClass::Nasal,
        PhoneClass::Approximant,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PhoneClass::Vowel => "vowel",
            PhoneClass::Stop => "stop",
            PhoneClass::Fricative => "fricative",
            PhoneClass::Affricate => "affricate",
            PhoneClass::Nasal => "nasal",
            PhoneClass::Approximant => "approximant",
        }
    }
}

impl fmt::Display for PhoneClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PhoneInfo {
    pub symbol: &'static str,
    pub class: PhoneClass,
    /// Meaningful for consonants; vowels are always voiced.
    pub voiced: bool,
    /// Central vowels (AH, ER) for the centralization statistic.
    pub central: bool,
}

macro_rules! phones {
    ($($sym:literal => $class:ident, $voiced:literal, $central:literal;)*) => {
        /// The 39-symbol ARPABET inventory (stress digits stripped).
        pub const ARPABET: &[PhoneInfo] = &[
            $(PhoneInfo { symbol: $sym, class: PhoneClass::$class, voiced: $voiced, central: $central },)*
        ];
    };
}

phones! {
    "AA" => Vowel, true, false;
    "AE" => Vowel, true, false;
    "AH" => Vowel, true, true;
    "AO" => Vowel, true, false;
    "AW" => Vowel, true, false;
    "AY" => Vowel, true, false;
    "EH" => Vowel, true, false;
    "ER" => Vowel, true, true;
    "EY" => Vowel, true, false;
    "IH" => Vowel, true, false;
    "IY" => Vowel, true, false;
    "OW" => Vowel, true, false;
    "OY" => Vowel, true, false;
    "UH" => Vowel, true, false;
    "UW" => Vowel, true, false;
    "B" => Stop, true, false;
    "D" => Stop, true, false;
    "G" => Stop, true, false;
    "K" => Stop, false, false;
    "P" => Stop, false, false;
    "T" => Stop, false, false;
    "CH" => Affricate, false, false;
    "JH" => Affricate, true, false;
    "DH" => Fricative, true, false;
    "F" => Fricative, false, false;
    "HH" => Fricative, false, false;
    "S" => Fricative, false, false;
    "SH" => Fricative, false, false;
    "TH" => Fricative, false, false;
    "V" => Fricative, true, false;
    "Z" => Fricative, true, false;
    "ZH" => Fricative, true, false;
    "M" => Nasal, true, false;
    "N" => Nasal, true, false;
    "NG" => Nasal, true, false;
    "L" => Approximant, true, false;
    "R" => Approximant, true, false;
    "W" => Approximant, true, false;
    "Y" => Approximant, true, false;
}

pub fn phone_info(symbol: &str) -> Option<&'static PhoneInfo> {
    ARPABET.iter().find(|p| p.symbol == symbol)
}

/// Class label including voicing for consonants, e.g. `stop-voiced`.
pub fn voicing_label(info: &PhoneInfo) -> String {
    match info.class {
        PhoneClass::Vowel => "vowel".to_string(),
        c => format!("{}-{}", c, if info.voiced { "voiced" } else { "unvoiced" }),
    }
}

/// Canonical symbol: uppercased with stress digits removed.
pub fn normalize_symbol(raw: &str) -> String {
    raw.trim_end_matches(|c: char| c.is_ascii_digit())
        .to_ascii_uppercase()
}
