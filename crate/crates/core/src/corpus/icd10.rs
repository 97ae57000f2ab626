use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// An ICD-10 diagnosis code reduced to what the trauma partition needs:
/// chapter letter and leading category number.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Icd10Code {
    letter: char,
    category: u32,
    raw: String,
}

impl Icd10Code {
    pub fn letter(&self) -> char {
        self.letter
    }

    pub fn category(&self) -> u32 {
        self.category
    }

    pub fn raw(&self) -> &str {
        &self.raw
    }
}

impl fmt::Display for Icd10Code {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.raw)
    }
}

impl Serialize for Icd10Code {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.raw)
    }
}

impl<'de> Deserialize<'de> for Icd10Code {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = String::deserialize(d)?;
        parse_icd10(&raw).map_err(serde::de::Error::custom)
    }
}

/// Parses a code such as `S72.1`. Anything after the first digit group is
/// ignored for partitioning.
pub fn parse_icd10(raw: &str) -> Result<Icd10Code> {
    let trimmed = raw.trim();
    let mut chars = trimmed.chars();
    let letter = match chars.next() {
        Some(c) if c.is_ascii_alphabetic() => c.to_ascii_uppercase(),
        _ => return Err(Error::Icd10(raw.to_string())),
    };
    let digits: String = chars.take_while(|c| c.is_ascii_digit()).collect();
    if digits.is_empty() {
        return Err(Error::Icd10(raw.to_string()));
    }
    // Categories are two digits; longer runs such as "S7210" keep the first two.
    let category = digits[..digits.len().min(2)]
        .parse()
        .map_err(|_| Error::Icd10(raw.to_string()))?;
    Ok(Icd10Code {
        letter,
        category,
        raw: trimmed.to_string(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TraumaLabel {
    Trauma,
    #[serde(rename = "nontrauma")]
    NonTrauma,
    Excluded,
}

impl TraumaLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            TraumaLabel::Trauma => "trauma",
            TraumaLabel::NonTrauma => "nontrauma",
            TraumaLabel::Excluded => "excluded",
        }
    }

    /// Binary class for labeled notes: trauma is the positive class.
    pub fn as_binary(self) -> Option<bool> {
        match self {
            TraumaLabel::Trauma => Some(true),
            TraumaLabel::NonTrauma => Some(false),
            TraumaLabel::Excluded => None,
        }
    }
}

pub const TRAUMA_LETTERS: [char; 2] = ['S', 'V'];
pub const NON_TRAUMA_LETTERS: [char; 10] = ['A', 'C', 'D', 'E', 'G', 'H', 'I', 'J', 'L', 'N'];

/// Trauma for S, V and T01-T35; non-trauma for A, C, D, E, G, H, I, J, L, N;
/// everything else (F, M, O, P, Q, T36+, T00, U, X, Y, Z, B, K, R, W) is excluded.
pub fn label_of(code: &Icd10Code) -> TraumaLabel {
    match code.letter {
        c if TRAUMA_LETTERS.contains(&c) => TraumaLabel::Trauma,
        'T' if (1..=35).contains(&code.category) => TraumaLabel::Trauma,
        c if NON_TRAUMA_LETTERS.contains(&c) => TraumaLabel::NonTrauma,
        _ => TraumaLabel::Excluded,
    }
}
